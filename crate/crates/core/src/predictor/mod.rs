//! Image → latent code → partial cloud, with the WGAN-GP critic.

mod critic;
mod encoder;
mod generator;

pub use critic::{
    discriminate, gradient_penalty, gradient_penalty_var, loss_predictor_d, loss_predictor_d_var,
    loss_predictor_g, loss_predictor_g_var, Critic, CriticConfig,
};
pub use encoder::{
    encode_image, kl_loss, kl_var, EncoderConfig, ImageEncoder, LatentCode, IMAGE_HEIGHT,
    IMAGE_WIDTH, LATENT_DIM,
};
pub use generator::{
    branch, gcn_block, generate, BranchParams, BranchingConfig, GcnBlockParams, Generator,
    TreeState, GENERATED_POINTS,
};

use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Array, Tape, Var};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::nn::{Bound, Mlp, ParamStore, RngState, SeededRng};

/// Default weight of the KL term.
pub const LAMBDA1: f64 = 0.1;
/// The CD weight ramps linearly between these over training.
pub const LAMBDA2_START: f64 = 0.1;
pub const LAMBDA2_END: f64 = 1.0;
/// Default gradient-penalty weight.
pub const LAMBDA_GP: f64 = 10.0;

/// Hidden widths of the dense single-image baseline decoder.
pub const DENSE_HIDDEN: [usize; 2] = [512, 1024];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GeneratorKind {
    /// Tree-structured graph convolution with branching.
    #[default]
    Branching,
    /// Dense layers straight to 2048×3, a PointOutNet-style stand-in.
    Dense,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub encoder: EncoderConfig,
    pub branching: BranchingConfig,
    pub critic: CriticConfig,
    #[serde(default)]
    pub generator: GeneratorKind,
}

/// Latent code → 2048×3 cloud.
#[derive(Debug, Clone)]
pub enum PointDecoder {
    Branching(Generator),
    Dense(Mlp),
}

impl PointDecoder {
    pub fn forward<'t>(&self, bound: &Bound<'t>, z: Var<'t>) -> Result<Var<'t>> {
        match self {
            Self::Branching(g) => g.forward(bound, z),
            Self::Dense(mlp) => Ok(mlp.forward(bound, z).reshape(GENERATED_POINTS, 3)),
        }
    }
}

impl PredictorConfig {
    /// Narrower layers with the same structure, for quick runs on a CPU.
    pub fn compact() -> Self {
        Self {
            encoder: EncoderConfig {
                channels: vec![4, 8, 8, 8],
                ..EncoderConfig::default()
            },
            branching: BranchingConfig {
                degrees: vec![2, 2, 2, 2, 2, 64],
                feature_widths: vec![96, 64, 64, 64, 32, 32, 3],
                k: 10,
            },
            critic: CriticConfig {
                point_widths: vec![3, 32, 64],
                head_widths: vec![64, 32, 1],
                points: GENERATED_POINTS,
            },
            generator: GeneratorKind::Branching,
        }
    }

    pub fn with_slices(mut self, k: usize) -> Self {
        self.encoder.slices = k;
        self
    }

    pub fn with_generator(mut self, kind: GeneratorKind) -> Self {
        self.generator = kind;
        self
    }
}

/// Encoder and generator (one parameter store) plus the critic (another).
#[derive(Debug, Clone)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub encoder: ImageEncoder,
    pub generator: PointDecoder,
    pub g_params: ParamStore,
    pub critic: Critic,
    pub d_params: ParamStore,
}

impl Predictor {
    pub fn new(config: PredictorConfig, rng: &mut SeededRng) -> Result<Self> {
        config.branching.validate_output()?;
        if config.encoder.latent != config.branching.feature_widths[0] {
            return Err(Error::invalid(format!(
                "latent width {} differs from generator root width {}",
                config.encoder.latent, config.branching.feature_widths[0]
            )));
        }
        if config.critic.points != GENERATED_POINTS {
            return Err(Error::invalid("critic must take generated clouds"));
        }
        let mut g_params = ParamStore::new();
        let encoder = ImageEncoder::new(&mut g_params, rng, "encoder", config.encoder.clone());
        let generator = match config.generator {
            GeneratorKind::Branching => {
                PointDecoder::Branching(Generator::new(&mut g_params, rng, "generator", config.branching.clone())?)
            }
            GeneratorKind::Dense => {
                let widths = [config.encoder.latent, DENSE_HIDDEN[0], DENSE_HIDDEN[1], GENERATED_POINTS * 3];
                PointDecoder::Dense(Mlp::new(&mut g_params, rng, "generator.dense", &widths, false))
            }
        };
        let mut d_params = ParamStore::new();
        let critic = Critic::new(&mut d_params, rng, "critic", config.critic.clone())?;
        Ok(Self {
            config,
            encoder,
            generator,
            g_params,
            critic,
            d_params,
        })
    }

    pub fn encode(&self, images: &[Array], noise: Option<&[f64]>) -> Result<LatentCode> {
        encode_image(&self.encoder, &self.g_params, images, noise)
    }

    pub fn generate(&self, code: &LatentCode) -> Result<PointCloud> {
        match &self.generator {
            PointDecoder::Branching(g) => generate(g, &self.g_params, &code.z),
            PointDecoder::Dense(_) => {
                let tape = Tape::new();
                let p = self.g_params.bind(&tape);
                let z = tape.constant(Array::from_shape_vec((1, code.z.len()), code.z.clone()).expect("shape"));
                PointCloud::from_array(&self.generator.forward(&p, z)?.value())
            }
        }
    }

    /// Deterministic inference: `z = mu`.
    pub fn predict(&self, images: &[Array]) -> Result<PointCloud> {
        self.generate(&self.encode(images, None)?)
    }

    pub fn discriminate(&self, cloud: &PointCloud) -> Result<f64> {
        discriminate(&self.critic, &self.d_params, cloud)
    }

    /// Writes weights and config under `predictor/` in `c`.
    pub fn save_into(&self, c: &mut Container) {
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        c.insert_str("predictor/config", &cfg);
        self.g_params.save_into(c, "predictor/g/");
        self.d_params.save_into(c, "predictor/d/");
    }

    pub fn load_from(c: &Container) -> Result<Self> {
        let cfg = c.get_str("predictor/config")?;
        let config: PredictorConfig = serde_json::from_str(&cfg)
            .map_err(|e| Error::invalid(format!("predictor config: {e}")))?;
        // Initial values are overwritten; the RNG only fixes shapes.
        let mut rng = SeededRng::seed_from_u64(0);
        let mut p = Self::new(config, &mut rng)?;
        p.g_params.load_from(c, "predictor/g/")?;
        p.d_params.load_from(c, "predictor/d/")?;
        Ok(p)
    }

    /// Checkpoint with the training RNG so a run can resume bit-exactly.
    pub fn save(&self, path: &Path, rng: &SeededRng) -> Result<()> {
        let mut c = Container::new();
        self.save_into(&mut c);
        RngState::capture(rng).save_into(&mut c, "predictor/rng");
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<(Self, SeededRng)> {
        let c = Container::read(path)?;
        let p = Self::load_from(&c)?;
        let rng = RngState::load_from(&c, "predictor/rng")?.restore();
        Ok((p, rng))
    }
}
