//! Partial cloud → complete 2048-point cloud, and the joint completion loss.

mod agb;
mod network;

pub use agb::{agb, agb_var, AgbParams, AttentionMap};
pub use network::{
    decode_block_var, Architecture, CompletionConfig, CompletionNet, DecodeBlock, Decoder,
    Encoded, HierarchyEncoder, SkipVars,
};

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::autograd::{Array, Tape, Var};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::geometry::{chamfer_var, emd_approx_var, PointCloud, SinkhornSettings};
use crate::nn::{RngState, SeededRng};
use crate::sampling::FeaturedCloud;

/// Default weights of the chamfer and EMD terms.
pub const LAMBDA3: f64 = 1.0;
pub const LAMBDA4: f64 = 0.05;

/// Encoder level output carried to the mirrored decoding block.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipFeature {
    /// 1-based encoder level.
    pub level: usize,
    pub cloud: FeaturedCloud,
}

impl CompletionNet {
    /// Global latent vector and one skip per local encoder level.
    pub fn encode_hierarchy(&self, partial: &PointCloud) -> Result<(Vec<f64>, Vec<SkipFeature>)> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let enc = self.encoder.forward(&bound, tape.constant(partial.to_array()))?;
        let skips = enc
            .skips
            .iter()
            .map(|s| {
                Ok(SkipFeature {
                    level: s.level,
                    cloud: FeaturedCloud::new((*s.points.value()).clone(), (*s.features.value()).clone())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok((enc.global.value().iter().copied().collect(), skips))
    }

    /// Runs decoding block `level` (1-based) of the hierarchical decoder.
    ///
    /// Children inherit their parent's coordinates; the last block replaces
    /// them with its projection and keeps the pre-projection features.
    pub fn decode_block(
        &self,
        level: usize,
        input: &FeaturedCloud,
        skip: Option<&SkipFeature>,
    ) -> Result<FeaturedCloud> {
        let Decoder::Hierarchical(blocks) = &self.decoder else {
            return Err(Error::invalid("network has no decoding blocks"));
        };
        let block = level
            .checked_sub(1)
            .and_then(|i| blocks.get(i))
            .ok_or_else(|| Error::invalid(format!("no decoding block {level}")))?;
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let x = tape.constant(input.features().clone());
        let skip = skip.map(|s| SkipVars {
            level: s.level,
            points: tape.constant(s.cloud.points().clone()),
            features: tape.constant(s.cloud.features().clone()),
        });
        match &block.project {
            Some(project) => {
                let bare = DecodeBlock {
                    project: None,
                    ..block.clone()
                };
                let hidden = decode_block_var(&bare, x, skip, &bound)?;
                let coords = project.forward(&bound, hidden);
                FeaturedCloud::new((*coords.value()).clone(), (*hidden.value()).clone())
            }
            None => {
                let out = decode_block_var(block, x, skip, &bound)?;
                let r = block.ratio;
                let parents = input.points();
                let points = Array::from_shape_fn((parents.nrows() * r, 3), |(i, k)| parents[[i / r, k]]);
                FeaturedCloud::new(points, (*out.value()).clone())
            }
        }
    }

    /// Completed 2048-point cloud; deterministic given the weights.
    pub fn complete(&self, partial: &PointCloud) -> Result<PointCloud> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let out = self.forward(&bound, tape.constant(partial.to_array()))?;
        PointCloud::from_array(&out.value())
    }

    /// Writes weights and config under `completion/` in `c`.
    pub fn save_into(&self, c: &mut Container) {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        c.insert_str("completion/config", &cfg);
        self.params.save_into(c, "completion/w/");
    }

    pub fn load_from(c: &Container) -> Result<Self> {
        let cfg = c.get_str("completion/config")?;
        let config: CompletionConfig = serde_json::from_str(&cfg)
            .map_err(|e| Error::invalid(format!("completion config: {e}")))?;
        let mut rng = SeededRng::seed_from_u64(0);
        let mut net = Self::new(config, &mut rng)?;
        net.params.load_from(c, "completion/w/")?;
        Ok(net)
    }

    pub fn save(&self, path: &Path, rng: &SeededRng) -> Result<()> {
        let mut c = Container::new();
        self.save_into(&mut c);
        RngState::capture(rng).save_into(&mut c, "completion/rng");
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<(Self, SeededRng)> {
        let c = Container::read(path)?;
        let net = Self::load_from(&c)?;
        let rng = RngState::load_from(&c, "completion/rng")?.restore();
        Ok((net, rng))
    }
}

/// Completes `partial` with `net`.
pub fn complete(partial: &PointCloud, net: &CompletionNet) -> Result<PointCloud> {
    net.complete(partial)
}

/// Weights and EMD settings of the joint completion loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss {
    pub lambda3: f64,
    pub lambda4: f64,
    /// The EMD term is evaluated on at most this many points per cloud and
    /// rescaled to the full size.
    pub emd_points: usize,
    pub emd: SinkhornSettings,
}

impl Default for JointLoss {
    fn default() -> Self {
        Self {
            lambda3: LAMBDA3,
            lambda4: LAMBDA4,
            emd_points: usize::MAX,
            emd: SinkhornSettings::default(),
        }
    }
}

impl JointLoss {
    pub fn new(lambda3: f64, lambda4: f64) -> Self {
        Self {
            lambda3,
            lambda4,
            ..Self::default()
        }
    }

    /// Cheap settings for training steps.
    pub fn training() -> Self {
        Self {
            emd_points: 256,
            emd: SinkhornSettings::fast(0.01, 100),
            ..Self::default()
        }
    }
}

/// Row indices of `a` in lexicographic order of the coordinates.
fn sorted_order(a: &Array) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..a.nrows()).collect();
    idx.sort_by(|&i, &j| {
        let (ri, rj) = (a.row(i), a.row(j));
        (0..3)
            .map(|k| ri[k].total_cmp(&rj[k]))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

/// `λ3·CD(pred, gt) + λ4·EMD(pred, gt)` on N×3 / M×3 variables.
///
/// The EMD term pairs `m = min(N, M, emd_points)` points of each cloud. Both
/// clouds are subsampled at the same random ranks of their sorted orders, so
/// clouds that agree up to permutation pick identical points. The EMD is
/// rescaled by `min(N, M)/m`.
pub fn loss_completion_var<'t>(
    pred: Var<'t>,
    gt: Var<'t>,
    loss: &JointLoss,
    rng: &mut SeededRng,
) -> Result<Var<'t>> {
    let (n, m) = (pred.shape().0, gt.shape().0);
    let k = n.min(m).min(loss.emd_points.max(1));
    let cd = chamfer_var(pred, gt);
    if loss.lambda4 == 0.0 {
        return Ok(cd * loss.lambda3);
    }
    let ranks = |rows: usize, rng: &mut SeededRng| {
        let mut r = sample(rng, rows, k).into_vec();
        r.sort_unstable();
        r
    };
    let subsample = |v: Var<'t>, ranks: &[usize]| {
        let order = sorted_order(&v.value());
        v.gather_rows(&ranks.iter().map(|&r| order[r]).collect::<Vec<_>>())
    };
    let (sub_pred, sub_gt) = if n == m && k == n {
        (pred, gt)
    } else if n == m {
        let r = ranks(n, rng);
        (subsample(pred, &r), subsample(gt, &r))
    } else {
        let rp = ranks(n, rng);
        let rg = ranks(m, rng);
        (subsample(pred, &rp), subsample(gt, &rg))
    };
    let emd = emd_approx_var(sub_pred, sub_gt, &loss.emd)? * (n.min(m) as f64 / k as f64);
    Ok(cd * loss.lambda3 + emd * loss.lambda4)
}

/// Scalar value of [`loss_completion_var`].
pub fn loss_completion(pred: &PointCloud, gt: &PointCloud, loss: &JointLoss, rng: &mut SeededRng) -> Result<f64> {
    let tape = Tape::new();
    let p = tape.constant(pred.to_array());
    let g = tape.constant(gt.to_array());
    Ok(loss_completion_var(p, g, loss, rng)?.item())
}
