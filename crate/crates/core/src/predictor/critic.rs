//! WGAN-GP critic and the adversarial losses.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Bound, Mlp, ParamStore, SeededRng};

use super::encoder::{kl_loss, LatentCode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    /// Shared per-point map widths, starting at 3.
    pub point_widths: Vec<usize>,
    /// Dense head widths after pooling, ending at 1.
    pub head_widths: Vec<usize>,
    /// Cloud size the critic accepts.
    pub points: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            point_widths: vec![3, 64, 128, 256],
            head_widths: vec![256, 64, 1],
            points: 2048,
        }
    }
}

/// Per-point map, max-pool over points, dense head.
#[derive(Debug, Clone)]
pub struct Critic {
    pub config: CriticConfig,
    pub point_map: Mlp,
    pub head: Mlp,
}

impl Critic {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, config: CriticConfig) -> Result<Self> {
        let pw = &config.point_widths;
        let hw = &config.head_widths;
        if pw.first() != Some(&3) || hw.last() != Some(&1) || pw.last() != hw.first() {
            return Err(Error::invalid("critic widths must run 3 → … → pooled → … → 1"));
        }
        Ok(Self {
            point_map: Mlp::new(store, rng, &format!("{name}.point"), pw, true),
            head: Mlp::new(store, rng, &format!("{name}.head"), hw, false),
            config,
        })
    }

    /// Critic score (1×1) of an N×3 cloud variable.
    pub fn forward<'t>(&self, bound: &Bound<'t>, cloud: Var<'t>) -> Result<Var<'t>> {
        let (n, c) = cloud.shape();
        if n != self.config.points || c != 3 {
            return Err(Error::invalid(format!(
                "critic takes {}×3 clouds, got {n}×{c}",
                self.config.points
            )));
        }
        let pooled = self.point_map.forward(bound, cloud).max_groups(n);
        Ok(self.head.forward(bound, pooled))
    }
}

pub fn discriminate(critic: &Critic, store: &ParamStore, cloud: &PointCloud) -> Result<f64> {
    let tape = Tape::new();
    let p = store.bind(&tape);
    Ok(critic.forward(&p, tape.constant(cloud.to_array()))?.item())
}

/// `(‖∇D(x̂)‖₂ − 1)²` at `x̂ = t·real + (1 − t)·fake`, differentiable in the
/// critic's parameters and both clouds.
pub fn gradient_penalty_var<'t, F>(real: Var<'t>, fake: Var<'t>, t: f64, critic: F) -> Result<Var<'t>>
where
    F: Fn(Var<'t>) -> Result<Var<'t>>,
{
    if real.shape() != fake.shape() {
        return Err(Error::invalid(format!(
            "real {:?} and fake {:?} differ in shape",
            real.shape(),
            fake.shape()
        )));
    }
    let tape = real.tape();
    let x_hat = real * t + fake * (1.0 - t);
    let score = critic(x_hat)?;
    let g = tape.grad(score, &[x_hat])[0];
    let norm = g.square().sum().sqrt();
    Ok((norm - 1.0).square())
}

pub fn gradient_penalty(
    critic: &Critic,
    store: &ParamStore,
    real: &PointCloud,
    fake: &PointCloud,
    t: f64,
) -> Result<f64> {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let r = tape.constant(real.to_array());
    let f = tape.constant(fake.to_array());
    Ok(gradient_penalty_var(r, f, t, |x| critic.forward(&p, x))?.item())
}

/// `λ1·KL + λ2·CD − mean(critic)`.
pub fn loss_predictor_g_var<'t>(kl: Var<'t>, cd: Var<'t>, critic_mean: Var<'t>, lambda1: f64, lambda2: f64) -> Var<'t> {
    kl * lambda1 + cd * lambda2 - critic_mean
}

/// Generator loss of one sample: `λ1·KL + λ2·CD(generated, target) − mean(critic_values)`.
pub fn loss_predictor_g(
    code: &LatentCode,
    generated: &PointCloud,
    target_partial: &PointCloud,
    critic_values: &[f64],
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let mean = critic_values.iter().sum::<f64>() / critic_values.len().max(1) as f64;
    lambda1 * kl_loss(code) + lambda2 * crate::geometry::chamfer(generated, target_partial) - mean
}

/// `mean(fake) − mean(real) + λ_gp·mean(penalty)`.
pub fn loss_predictor_d(real_scores: &[f64], fake_scores: &[f64], penalties: &[f64], lambda_gp: f64) -> f64 {
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    mean(fake_scores) - mean(real_scores) + lambda_gp * mean(penalties)
}

pub fn loss_predictor_d_var<'t>(real_mean: Var<'t>, fake_mean: Var<'t>, penalty_mean: Var<'t>, lambda_gp: f64) -> Var<'t> {
    fake_mean - real_mean + penalty_mean * lambda_gp
}
