//! Central finite-difference gradient checks.
//!
//! The numeric side only ever evaluates the forward pass on a fresh tape, so
//! it shares no code with the backward rules it is checking.

use super::{Array, Tape, Var};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Result of comparing analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<Array>,
    pub numeric: Vec<Array>,
    /// Largest per-input relative error, see [`relative_error`].
    pub max_rel_err: f64,
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or `0` when both are below `1e-12`.
pub fn relative_error(a: &Array, b: &Array) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let scale = a.mapv(|x| x * x).sum().sqrt().max(b.mapv(|x| x * x).sum().sqrt());
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Numeric gradient of a scalar function of several matrices.
pub fn numeric_gradient(f: &dyn Fn(&[Array]) -> f64, inputs: &[Array], step: f64) -> Vec<Array> {
    let mut work: Vec<Array> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Array::zeros(inputs[k].dim());
        let (rows, cols) = inputs[k].dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = work[k][[r, c]];
                work[k][[r, c]] = orig + step;
                let plus = f(&work);
                work[k][[r, c]] = orig - step;
                let minus = f(&work);
                work[k][[r, c]] = orig;
                g[[r, c]] = (plus - minus) / (2.0 * step);
            }
        }
        grads.push(g);
    }
    grads
}

/// Compares tape gradients of `f` with central differences at `inputs`.
pub fn check_gradients<F>(f: F, inputs: &[Array], step: f64) -> GradCheck
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|a| tape.constant(a.clone())).collect();
        let out = f(&tape, &vars);
        tape.grad_values(out, &vars)
    };
    let eval = |xs: &[Array]| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|a| tape.constant(a.clone())).collect();
        f(&tape, &vars).item()
    };
    let numeric = numeric_gradient(&eval, inputs, step);
    let max_rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max);
    GradCheck {
        analytic,
        numeric,
        max_rel_err,
    }
}
