//! Attention gate block: cross-attention when a pipeline feeds it,
//! self-attention otherwise.

use crate::autograd::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, ParamStore, SeededRng};
use crate::sampling::FeaturedCloud;

#[derive(Debug, Clone)]
pub struct AgbParams {
    /// Query map of P into the score space.
    pub f1: Linear,
    /// Key map of Q into the score space. A key bias would cancel in the
    /// softmax, so there is none.
    pub f2: Linear,
    /// Value map of Q into P's width.
    pub f3: Linear,
    /// Output map on P's width.
    pub f4: Linear,
    pub p_width: usize,
    pub q_width: usize,
}

impl AgbParams {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        name: &str,
        p_width: usize,
        q_width: usize,
        score_width: usize,
    ) -> Self {
        Self {
            f1: Linear::new(store, rng, &format!("{name}.f1"), p_width, score_width, true),
            f2: Linear::new(store, rng, &format!("{name}.f2"), q_width, score_width, false),
            f3: Linear::new(store, rng, &format!("{name}.f3"), q_width, p_width, true),
            f4: Linear::new(store, rng, &format!("{name}.f4"), p_width, p_width, true),
            p_width,
            q_width,
        }
    }
}

/// Row-stochastic |P|×|Q| attention scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub scores: Array,
}

impl AttentionMap {
    /// Largest deviation of a row sum from 1.
    pub fn row_sum_error(&self) -> f64 {
        self.scores
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `p_i ← f4(p_i + Σ_j a_ij f3(q_j))` with `a_ij = softmax_j(f1(p_i)·f2(q_j))`.
///
/// With `q` absent the block attends over `p` itself. Returns the updated
/// features and the attention scores.
pub fn agb_var<'t>(
    p: Var<'t>,
    q: Option<Var<'t>>,
    params: &AgbParams,
    bound: &Bound<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let q = q.unwrap_or(p);
    if p.shape().1 != params.p_width || q.shape().1 != params.q_width {
        return Err(Error::invalid(format!(
            "attention block expects widths {}/{}, got {}/{}",
            params.p_width,
            params.q_width,
            p.shape().1,
            q.shape().1
        )));
    }
    let logits = params.f1.forward(bound, p).mm(params.f2.forward(bound, q), false, true);
    let attn = logits.softmax_rows();
    let mixed = p + attn.matmul(params.f3.forward(bound, q));
    Ok((params.f4.forward(bound, mixed), attn))
}

/// [`agb_var`] on the feature rows of two clouds; point coordinates of `p`
/// are kept.
pub fn agb(
    p: &FeaturedCloud,
    q: Option<&FeaturedCloud>,
    params: &AgbParams,
    store: &ParamStore,
) -> Result<(FeaturedCloud, AttentionMap)> {
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let pv = tape.constant(p.features().clone());
    let qv = q.map(|q| tape.constant(q.features().clone()));
    let (out, attn) = agb_var(pv, qv, params, &bound)?;
    Ok((
        FeaturedCloud::new(p.points().clone(), (*out.value()).clone())?,
        AttentionMap {
            scores: (*attn.value()).clone(),
        },
    ))
}
