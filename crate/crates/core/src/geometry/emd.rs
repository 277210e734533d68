//! Earth Mover's distance between equal-size clouds.
//!
//! [`emd_exact`] solves the assignment problem with the shortest augmenting
//! path form of the Hungarian method. [`emd_approx`] is the entropic
//! relaxation solved with log-domain Sinkhorn iterations and ε-scaling; it is
//! smooth in the point coordinates, which the exact assignment is not.

use super::{norm, sub, Point, PointCloud};
use crate::autograd::{Array, Var};
use crate::error::{Error, Result};

/// Largest cloud the exact solver accepts.
pub const EMD_EXACT_LIMIT: usize = 512;

/// Entropic regularisation used when none is given (distance units).
pub const DEFAULT_EMD_EPSILON: f64 = 5e-3;

/// A bijection between two clouds and its total transport cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `mapping[i]` is the target index paired with source point `i`.
    pub mapping: Vec<usize>,
    pub cost: f64,
}

fn check_equal_sizes(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "EMD needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn distance_matrix(a: &[Point], b: &[Point]) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for &p in a {
        for &q in b {
            c.push(norm(sub(p, q)));
        }
    }
    c
}

/// Minimum-cost perfect matching on a dense `n`×`n` row-major cost matrix.
///
/// Returns `mapping[row] = column`.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // Potentials u (rows), v (columns); column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut mapping = vec![0; n];
    for j in 1..=n {
        mapping[owner[j] - 1] = j - 1;
    }
    mapping
}

/// Exact EMD: the cheapest bijection under straight-line distance.
pub fn emd_exact(a: &PointCloud, b: &PointCloud) -> Result<Assignment> {
    check_equal_sizes(a, b)?;
    let n = a.len();
    if n > EMD_EXACT_LIMIT {
        return Err(Error::SizeLimit {
            what: "exact EMD input",
            size: n,
            limit: EMD_EXACT_LIMIT,
        });
    }
    let c = distance_matrix(a.points(), b.points());
    let mapping = solve_assignment(&c, n);
    let cost = mapping.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
    Ok(Assignment { mapping, cost })
}

/// Controls for the Sinkhorn solver behind [`emd_approx`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornSettings {
    /// Final regularisation strength, in distance units.
    pub epsilon: f64,
    /// Iteration cap for plain Sinkhorn sweeps at the final epsilon.
    pub max_iters: usize,
    /// Target for the largest relative marginal violation.
    pub tol: f64,
    /// Sweeps run at each intermediate epsilon of the annealing schedule.
    pub stage_iters: usize,
    /// Clouds up to this size finish with Newton steps on the dual.
    pub newton_limit: usize,
}

impl Default for SinkhornSettings {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EMD_EPSILON,
            max_iters: 2_000,
            tol: 1e-10,
            stage_iters: 10,
            newton_limit: 512,
        }
    }
}

impl SinkhornSettings {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    /// Cheap settings for training losses: a few sweeps, no Newton polish.
    pub fn fast(epsilon: f64, sweeps: usize) -> Self {
        Self {
            epsilon,
            max_iters: sweeps,
            tol: 1e-6,
            stage_iters: 3,
            newton_limit: 0,
        }
    }
}

/// Value and coordinate gradients of the approximate EMD.
#[derive(Debug, Clone)]
pub struct EmdApprox {
    pub value: f64,
    pub grad_a: Vec<Point>,
    pub grad_b: Vec<Point>,
    pub iterations: usize,
    /// Largest relative marginal violation of the final plan.
    pub marginal_error: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Dual potentials of `min_P <P, C> + ε KL(P | μ⊗ν)` with μ = ν = 1/n.
///
/// The plan is `P_ij = exp((f_i + g_j − C_ij)/ε) / n²`.
struct Dual<'a> {
    cost: &'a [f64],
    n: usize,
    eps: f64,
    f: Vec<f64>,
    g: Vec<f64>,
}

struct PlanSums {
    rows: Vec<f64>,
    cols: Vec<f64>,
    total: f64,
}

impl Dual<'_> {
    fn plan(&self, i: usize, j: usize) -> f64 {
        let n2 = (self.n * self.n) as f64;
        ((self.f[i] + self.g[j] - self.cost[i * self.n + j]) / self.eps).exp() / n2
    }

    fn sums(&self) -> PlanSums {
        let n = self.n;
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let p = self.plan(i, j);
                rows[i] += p;
                cols[j] += p;
            }
        }
        let total = rows.iter().sum();
        PlanSums { rows, cols, total }
    }

    /// Concave dual objective; equals the regularised cost at the optimum.
    fn objective(&self, total_mass: f64) -> f64 {
        let n = self.n as f64;
        (self.f.iter().sum::<f64>() + self.g.iter().sum::<f64>()) / n
            - self.eps * (total_mass - 1.0)
    }

    fn marginal_error(s: &PlanSums, n: usize) -> f64 {
        let nf = n as f64;
        s.rows
            .iter()
            .chain(&s.cols)
            .map(|&m| (m * nf - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn sweep(&mut self) {
        let (n, eps, cost) = (self.n, self.eps, self.cost);
        let ln_n = (n as f64).ln();
        for i in 0..n {
            let row = &cost[i * n..(i + 1) * n];
            let g = &self.g;
            self.f[i] = eps * ln_n - eps * log_sum_exp((0..n).map(|j| (g[j] - row[j]) / eps));
        }
        for j in 0..n {
            let f = &self.f;
            self.g[j] =
                eps * ln_n - eps * log_sum_exp((0..n).map(|i| (f[i] - cost[i * n + j]) / eps));
        }
    }

    /// One Newton step on the dual with a backtracking line search. Near
    /// permutation plans the Hessian is close to singular, so the system is
    /// retried with growing Levenberg damping. Returns false if no ascent was
    /// found.
    fn newton_step(&mut self, sums: &PlanSums) -> bool {
        let scale = 1.0 / self.n as f64;
        [0.0, 1e-12, 1e-9, 1e-6, 1e-3]
            .iter()
            .any(|&d| self.damped_newton_step(sums, d * scale))
    }

    fn damped_newton_step(&mut self, sums: &PlanSums, damping: f64) -> bool {
        let n = self.n;
        let inv_n = 1.0 / n as f64;
        // g_{n-1} is pinned to remove the constant shift (f + c, g − c).
        let m = 2 * n - 1;
        let mut hess = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut rhs = nalgebra::DVector::<f64>::zeros(m);
        for i in 0..n {
            hess[(i, i)] = sums.rows[i];
            rhs[i] = self.eps * (inv_n - sums.rows[i]);
            for j in 0..n - 1 {
                let p = self.plan(i, j);
                hess[(i, n + j)] = p;
                hess[(n + j, i)] = p;
            }
        }
        for j in 0..n - 1 {
            hess[(n + j, n + j)] = sums.cols[j];
            rhs[n + j] = self.eps * (inv_n - sums.cols[j]);
        }
        for k in 0..m {
            hess[(k, k)] += damping;
        }
        let Some(step) = hess.lu().solve(&rhs) else {
            return false;
        };
        let base = self.objective(sums.total);
        let base_err = Self::marginal_error(sums, n);
        let (f0, g0) = (self.f.clone(), self.g.clone());
        let mut alpha = 1.0;
        for _ in 0..40 {
            for i in 0..n {
                self.f[i] = f0[i] + alpha * step[i];
            }
            for j in 0..n - 1 {
                self.g[j] = g0[j] + alpha * step[n + j];
            }
            let trial = self.sums();
            // Near the optimum the objective is flat to rounding, so a
            // smaller marginal error also counts as progress.
            if self.objective(trial.total) > base
                || Self::marginal_error(&trial, n) < base_err
            {
                return true;
            }
            alpha *= 0.5;
        }
        self.f = f0;
        self.g = g0;
        false
    }
}

/// Anneals epsilon with Sinkhorn sweeps, then polishes at the target value.
fn solve_dual<'a>(cost: &'a [f64], n: usize, s: &SinkhornSettings) -> (Dual<'a>, PlanSums, usize) {
    let cmax = cost.iter().copied().fold(0.0, f64::max);
    let mut dual = Dual {
        cost,
        n,
        eps: (cmax / 2.0).max(s.epsilon),
        f: vec![0.0; n],
        g: vec![0.0; n],
    };
    let mut iterations = 0;
    while dual.eps > s.epsilon {
        for _ in 0..s.stage_iters {
            dual.sweep();
            iterations += 1;
        }
        dual.eps = (dual.eps * 0.5).max(s.epsilon);
    }
    let polish = n > 1 && n <= s.newton_limit;
    let sweeps = if polish { s.stage_iters.min(s.max_iters) } else { s.max_iters };
    for k in 0..sweeps {
        dual.sweep();
        iterations += 1;
        if k % 10 == 9 {
            let sums = dual.sums();
            if Dual::marginal_error(&sums, n) <= s.tol {
                return (dual, sums, iterations);
            }
        }
    }
    let mut sums = dual.sums();
    if polish {
        let mut spare = s.max_iters.saturating_sub(sweeps);
        for _ in 0..100 {
            if Dual::marginal_error(&sums, n) <= s.tol {
                break;
            }
            let improved = dual.newton_step(&sums);
            iterations += 1;
            if !improved {
                // Sinkhorn sweeps move the duals somewhere Newton can resume.
                if spare == 0 {
                    break;
                }
                let burst = spare.min(50);
                for _ in 0..burst {
                    dual.sweep();
                }
                spare -= burst;
                iterations += burst;
            }
            sums = dual.sums();
        }
    }
    (dual, sums, iterations)
}

/// Entropic EMD with explicit solver settings, plus coordinate gradients.
///
/// The value is `n·(OT_ε − ε ln n)`, clamped at zero. It never exceeds the
/// exact EMD, rises towards it as `ε` shrinks, and trails it by at most
/// `n·ε·ln n`. Gradients come from the optimal plan (envelope theorem), so
/// they are exact only once the marginals have converged.
pub fn emd_approx_with_grad(
    a: &PointCloud,
    b: &PointCloud,
    settings: &SinkhornSettings,
) -> Result<EmdApprox> {
    check_equal_sizes(a, b)?;
    if !(settings.epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let n = a.len();
    let nf = n as f64;
    let cost = distance_matrix(a.points(), b.points());
    let (dual, sums, iterations) = solve_dual(&cost, n, settings);
    let eps = settings.epsilon;
    let raw = nf * (dual.objective(sums.total) - eps * nf.ln());

    let mut grad_a = vec![[0.0; 3]; n];
    let mut grad_b = vec![[0.0; 3]; n];
    if raw > 0.0 {
        for i in 0..n {
            for j in 0..n {
                let c = cost[i * n + j];
                if c == 0.0 {
                    continue;
                }
                let w = nf * dual.plan(i, j);
                let d = sub(a.points()[i], b.points()[j]);
                for k in 0..3 {
                    let t = w * d[k] / c;
                    grad_a[i][k] += t;
                    grad_b[j][k] -= t;
                }
            }
        }
    }
    Ok(EmdApprox {
        value: raw.max(0.0),
        grad_a,
        grad_b,
        iterations,
        marginal_error: Dual::marginal_error(&sums, n),
    })
}

/// Smooth approximation of the EMD cost at regularisation `epsilon`.
pub fn emd_approx(a: &PointCloud, b: &PointCloud, epsilon: f64) -> Result<f64> {
    Ok(emd_approx_with_grad(a, b, &SinkhornSettings::with_epsilon(epsilon))?.value)
}

/// [`emd_approx`] on two N×3 variables.
pub fn emd_approx_var<'t>(a: Var<'t>, b: Var<'t>, settings: &SinkhornSettings) -> Result<Var<'t>> {
    let pa = PointCloud::from_array(&a.value())?;
    let pb = PointCloud::from_array(&b.value())?;
    let r = emd_approx_with_grad(&pa, &pb, settings)?;
    let to_array = |g: &[Point]| Array::from_shape_fn((g.len(), 3), |(i, k)| g[i][k]);
    Ok(a.tape().external(
        r.value,
        vec![(a, to_array(&r.grad_a)), (b, to_array(&r.grad_b))],
    ))
}
