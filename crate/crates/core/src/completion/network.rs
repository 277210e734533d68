//! Hierarchical encoder, decoding blocks, and the stand-in baselines.

use serde::{Deserialize, Serialize};

use crate::autograd::{Array, Var};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Bound, Linear, Mlp, ParamStore, SeededRng, LEAKY_SLOPE};
use crate::predictor::GENERATED_POINTS;
use crate::sampling::{farthest_from_centroid, GroupingSpec, SetAbstraction};

use super::agb::{agb_var, AgbParams};

/// Which encoder/decoder pair the completion network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// Set-abstraction hierarchy with attention-gated decoding blocks.
    Hierarchical,
    /// Same encoder, three dense layers 96→1024→2048→2048·3 as decoder.
    FcDecoder,
    /// Global point encoder with a two-stage folding decoder (approximation).
    FoldingLike,
    /// Global point encoder with a tree-expansion decoder (approximation).
    TopNetLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub architecture: Architecture,
    /// Local set-abstraction levels; each one feeds a skip pipeline.
    pub levels: Vec<GroupingSpec>,
    /// Widths of the global level; the last is the latent width.
    pub global_widths: Vec<usize>,
    /// Output width of each decoding block before the final projection.
    pub decoder_widths: Vec<usize>,
    /// Point multiplier of each decoding block.
    pub expansions: Vec<usize>,
    /// Score-space width of every attention block.
    pub attention_width: usize,
    /// Cross-attention blocks fed by the pipelines.
    pub pipeline_agb: bool,
    /// Self-attention block in the last decoding block.
    pub self_agb: bool,
    /// Hidden width of the folding and tree baselines.
    pub baseline_width: usize,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Hierarchical,
            levels: vec![
                GroupingSpec::new(512, 0.2, 32, vec![64, 64, 128]),
                GroupingSpec::new(128, 0.4, 32, vec![128, 128, 256]),
            ],
            global_widths: vec![256, 512, 96],
            decoder_widths: vec![128, 128, 64],
            expansions: vec![128, 4, 4],
            attention_width: 64,
            pipeline_agb: true,
            self_agb: true,
            baseline_width: 128,
        }
    }
}

impl CompletionConfig {
    /// Narrower layers with the same structure, for quick runs on a CPU.
    pub fn compact() -> Self {
        Self {
            levels: vec![
                GroupingSpec::new(512, 0.2, 16, vec![16, 32]),
                GroupingSpec::new(128, 0.4, 16, vec![32, 64]),
            ],
            global_widths: vec![64, 96],
            decoder_widths: vec![32, 32, 16],
            attention_width: 16,
            baseline_width: 32,
            ..Self::default()
        }
    }

    pub fn latent(&self) -> usize {
        *self.global_widths.last().expect("validated")
    }

    pub fn validate(&self) -> Result<()> {
        if self.global_widths.is_empty() {
            return Err(Error::invalid("global_widths is empty"));
        }
        for l in &self.levels {
            if l.mlp_widths.is_empty() || !(l.radius > 0.0) || l.kmax == 0 || l.npoint == 0 {
                return Err(Error::invalid(format!("bad grouping level {l:?}")));
            }
        }
        if self.architecture == Architecture::Hierarchical {
            let n = self.decoder_widths.len();
            if n == 0 || self.expansions.len() != n {
                return Err(Error::invalid("one expansion per decoding block is required"));
            }
            if self.levels.len() + 1 != n {
                return Err(Error::invalid(format!(
                    "{} pipelines need {} decoding blocks, got {n}",
                    self.levels.len(),
                    self.levels.len() + 1
                )));
            }
            if self.expansions.iter().product::<usize>() != GENERATED_POINTS {
                return Err(Error::invalid(format!(
                    "decoder expansions must multiply to {GENERATED_POINTS}"
                )));
            }
        }
        Ok(())
    }
}

/// Features captured at an encoder level for its pipeline.
#[derive(Clone, Copy)]
pub struct SkipVars<'t> {
    /// 1-based encoder level.
    pub level: usize,
    pub points: Var<'t>,
    pub features: Var<'t>,
}

impl<'t> SkipVars<'t> {
    /// Rows of `[xyz, features]`, the keys and values the attention reads.
    pub fn keys(&self) -> Var<'t> {
        Var::concat_cols(&[self.points, self.features])
    }
}

/// Encoder output: global latent (1×latent) and one skip per local level.
pub struct Encoded<'t> {
    pub global: Var<'t>,
    pub skips: Vec<SkipVars<'t>>,
}

#[derive(Debug, Clone)]
pub struct HierarchyEncoder {
    pub levels: Vec<SetAbstraction>,
    pub global: SetAbstraction,
}

impl HierarchyEncoder {
    fn new(store: &mut ParamStore, rng: &mut SeededRng, levels: &[GroupingSpec], global: &[usize]) -> Self {
        let mut width = 0;
        let mut out = Vec::new();
        for (i, spec) in levels.iter().enumerate() {
            let sa = SetAbstraction::new(store, rng, &format!("encoder.sa{}", i + 1), spec.clone(), width);
            width = spec.out_width();
            out.push(sa);
        }
        let global = SetAbstraction::new(
            store,
            rng,
            "encoder.global",
            GroupingSpec::global(global.to_vec()),
            width,
        );
        Self { levels: out, global }
    }

    /// Encodes an M×3 cloud. Levels larger than the input keep every point.
    pub fn forward<'t>(&self, bound: &Bound<'t>, cloud: Var<'t>) -> Result<Encoded<'t>> {
        let mut points = cloud;
        let mut features = None;
        let mut skips = Vec::with_capacity(self.levels.len());
        for (i, sa) in self.levels.iter().enumerate() {
            let m = points.shape().0;
            let mut level = sa.clone();
            level.spec.npoint = level.spec.npoint.min(m);
            let seed = farthest_from_centroid(&PointCloud::from_array(&points.value())?);
            let out = level.forward(bound, points, features, seed)?;
            skips.push(SkipVars {
                level: i + 1,
                points: out.points,
                features: out.features,
            });
            points = out.points;
            features = Some(out.features);
        }
        let global = self.global.forward(bound, points, features, 0)?.features;
        Ok(Encoded { global, skips })
    }
}

/// One decoding block: optional attention, then per-point expansion.
#[derive(Debug, Clone)]
pub struct DecodeBlock {
    /// 1-based position in the decoder.
    pub level: usize,
    pub agb: Option<AgbParams>,
    /// Whether the attention reads a pipeline (cross) or the block input (self).
    pub cross: bool,
    pub expand: Linear,
    pub ratio: usize,
    pub out_width: usize,
    /// Final coordinate projection, present only on the last block.
    pub project: Option<Linear>,
}

/// Runs decoding block `block` on `input` (n×width).
///
/// Blocks with cross-attention need the matching pipeline in `skip`; the
/// self-attention block accepts none.
pub fn decode_block_var<'t>(
    block: &DecodeBlock,
    input: Var<'t>,
    skip: Option<SkipVars<'t>>,
    bound: &Bound<'t>,
) -> Result<Var<'t>> {
    if !block.cross && skip.is_some() {
        return Err(Error::invalid(format!(
            "decoding block {} takes no pipeline",
            block.level
        )));
    }
    let mut x = input;
    if let Some(agb) = &block.agb {
        let q = if block.cross {
            let s = skip.ok_or_else(|| {
                Error::invalid(format!("decoding block {} needs its pipeline", block.level))
            })?;
            Some(s.keys())
        } else {
            None
        };
        x = agb_var(x, q, agb, bound)?.0;
    }
    let n = x.shape().0;
    let mut out = block
        .expand
        .forward(bound, x)
        .reshape(n * block.ratio, block.out_width)
        .leaky_relu(LEAKY_SLOPE);
    if let Some(p) = &block.project {
        out = p.forward(bound, out);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub enum Decoder {
    Hierarchical(Vec<DecodeBlock>),
    Fc(Mlp),
    Folding {
        grid: Array,
        first: Mlp,
        second: Mlp,
    },
    Tree {
        root: Linear,
        root_nodes: usize,
        stages: Vec<(Linear, usize)>,
        project: Linear,
        width: usize,
    },
}

/// Encoder and decoder with their parameters.
#[derive(Debug, Clone)]
pub struct CompletionNet {
    pub config: CompletionConfig,
    pub encoder: HierarchyEncoder,
    pub decoder: Decoder,
    pub params: ParamStore,
}

/// Degrees of the tree baseline: 8 roots, then ×4, ×8, ×8.
const TREE_ROOTS: usize = 8;
const TREE_DEGREES: [usize; 3] = [4, 8, 8];

fn folding_grid() -> Array {
    let (rows, cols) = (32, 64);
    Array::from_shape_fn((rows * cols, 2), |(k, j)| {
        let (r, c) = (k / cols, k % cols);
        if j == 0 {
            -0.5 + r as f64 / (rows - 1) as f64
        } else {
            -0.5 + c as f64 / (cols - 1) as f64
        }
    })
}

impl CompletionNet {
    pub fn new(config: CompletionConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let latent = config.latent();
        let local: &[GroupingSpec] = match config.architecture {
            Architecture::Hierarchical | Architecture::FcDecoder => &config.levels,
            Architecture::FoldingLike | Architecture::TopNetLike => &[],
        };
        let encoder = HierarchyEncoder::new(&mut store, rng, local, &config.global_widths);
        let decoder = match config.architecture {
            Architecture::Hierarchical => Decoder::Hierarchical(Self::blocks(&config, &mut store, rng)),
            Architecture::FcDecoder => Decoder::Fc(Mlp::new(
                &mut store,
                rng,
                "decoder.fc",
                &[latent, 1024, 2048, GENERATED_POINTS * 3],
                false,
            )),
            Architecture::FoldingLike => {
                let h = config.baseline_width;
                Decoder::Folding {
                    grid: folding_grid(),
                    first: Mlp::new(&mut store, rng, "decoder.fold1", &[latent + 2, h, h, 3], false),
                    second: Mlp::new(&mut store, rng, "decoder.fold2", &[latent + 3, h, h, 3], false),
                }
            }
            Architecture::TopNetLike => {
                let w = config.baseline_width;
                let root = Linear::new(&mut store, rng, "decoder.root", latent, TREE_ROOTS * w, true);
                let stages = TREE_DEGREES
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| {
                        let l = Linear::new(&mut store, rng, &format!("decoder.stage{i}"), w + latent, d * w, true);
                        (l, d)
                    })
                    .collect();
                let project = Linear::new(&mut store, rng, "decoder.project", w, 3, true);
                Decoder::Tree {
                    root,
                    root_nodes: TREE_ROOTS,
                    stages,
                    project,
                    width: w,
                }
            }
        };
        Ok(Self {
            config,
            encoder,
            decoder,
            params: store,
        })
    }

    fn blocks(config: &CompletionConfig, store: &mut ParamStore, rng: &mut SeededRng) -> Vec<DecodeBlock> {
        let n = config.decoder_widths.len();
        // Block b pairs with the encoder level of matching size, deepest first.
        let skip_widths: Vec<usize> = config.levels.iter().rev().map(|l| 3 + l.out_width()).collect();
        let mut width = config.latent();
        let mut blocks = Vec::with_capacity(n);
        for b in 0..n {
            let last = b + 1 == n;
            let name = format!("decoder.block{}", b + 1);
            let agb = if last {
                config
                    .self_agb
                    .then(|| AgbParams::new(store, rng, &format!("{name}.agb"), width, width, config.attention_width))
            } else {
                config.pipeline_agb.then(|| {
                    AgbParams::new(store, rng, &format!("{name}.agb"), width, skip_widths[b], config.attention_width)
                })
            };
            let (ratio, out) = (config.expansions[b], config.decoder_widths[b]);
            let expand = Linear::new(store, rng, &format!("{name}.expand"), width, ratio * out, true);
            let project = last.then(|| Linear::new(store, rng, &format!("{name}.project"), out, 3, true));
            blocks.push(DecodeBlock {
                level: b + 1,
                agb,
                cross: !last,
                expand,
                ratio,
                out_width: out,
                project,
            });
            width = out;
        }
        blocks
    }

    /// Skip feeding decoding block `b` (1-based), if any.
    pub fn skip_for_block<'t>(&self, encoded: &Encoded<'t>, b: usize) -> Option<SkipVars<'t>> {
        let n = encoded.skips.len();
        (b <= n).then(|| encoded.skips[n - b])
    }

    /// Completed N×3 cloud for an M×3 partial cloud.
    pub fn forward<'t>(&self, bound: &Bound<'t>, partial: Var<'t>) -> Result<Var<'t>> {
        let encoded = self.encoder.forward(bound, partial)?;
        self.decode(bound, &encoded)
    }

    pub fn decode<'t>(&self, bound: &Bound<'t>, encoded: &Encoded<'t>) -> Result<Var<'t>> {
        let g = encoded.global;
        match &self.decoder {
            Decoder::Hierarchical(blocks) => {
                let mut x = g;
                for block in blocks {
                    let skip = if block.cross {
                        self.skip_for_block(encoded, block.level)
                    } else {
                        None
                    };
                    x = decode_block_var(block, x, skip, bound)?;
                }
                Ok(x)
            }
            Decoder::Fc(mlp) => Ok(mlp.forward(bound, g).reshape(GENERATED_POINTS, 3)),
            Decoder::Folding { grid, first, second } => {
                let n = grid.nrows();
                let tape = g.tape();
                let code = g.broadcast_to(n, g.shape().1);
                let folded = first.forward(bound, Var::concat_cols(&[code, tape.constant(grid.clone())]));
                Ok(second.forward(bound, Var::concat_cols(&[code, folded])))
            }
            Decoder::Tree {
                root,
                root_nodes,
                stages,
                project,
                width,
            } => {
                let mut x = root
                    .forward(bound, g)
                    .reshape(*root_nodes, *width)
                    .leaky_relu(LEAKY_SLOPE);
                for (stage, d) in stages {
                    let n = x.shape().0;
                    let code = g.broadcast_to(n, g.shape().1);
                    x = stage
                        .forward(bound, Var::concat_cols(&[x, code]))
                        .reshape(n * d, *width)
                        .leaky_relu(LEAKY_SLOPE);
                }
                Ok(project.forward(bound, x))
            }
        }
    }
}
