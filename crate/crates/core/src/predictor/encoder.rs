//! Image stack → Gaussian latent code.

use serde::{Deserialize, Serialize};

use crate::autograd::{Array, Tape, Var, ZERO_ROW};
use crate::error::{Error, Result};
use crate::nn::{uniform_init, Bound, Linear, ParamId, ParamStore, SeededRng, LEAKY_SLOPE};

/// Width of the latent code.
pub const LATENT_DIM: usize = 96;

/// Default slice size (rows × columns).
pub const IMAGE_HEIGHT: usize = 91;
pub const IMAGE_WIDTH: usize = 109;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    /// Number of stacked slices the encoder consumes.
    pub slices: usize,
    /// Output channels of each stride-2 convolution.
    pub channels: Vec<usize>,
    pub latent: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            height: IMAGE_HEIGHT,
            width: IMAGE_WIDTH,
            slices: 1,
            channels: vec![8, 16, 32, 32],
            latent: LATENT_DIM,
        }
    }
}

/// Gaussian code with the noise that produced `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub z: Vec<f64>,
    pub noise: Vec<f64>,
}

impl LatentCode {
    /// `z = mu + exp(log_var / 2) ⊙ noise`.
    pub fn sample(mu: Vec<f64>, log_var: Vec<f64>, noise: Vec<f64>) -> Result<Self> {
        if mu.len() != log_var.len() || mu.len() != noise.len() {
            return Err(Error::invalid("latent code parts differ in length"));
        }
        let z: Vec<f64> = mu
            .iter()
            .zip(&log_var)
            .zip(&noise)
            .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
            .collect();
        if z.iter().chain(&mu).chain(&log_var).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        Ok(Self {
            mu,
            log_var,
            z,
            noise,
        })
    }

    /// Evaluation-time code: `z = mu`.
    pub fn mean(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        let n = mu.len();
        Self::sample(mu, log_var, vec![0.0; n])
    }
}

/// KL(N(mu, diag(exp(log_var))) ‖ N(0, I)).
pub fn kl_loss(code: &LatentCode) -> f64 {
    0.5 * code
        .mu
        .iter()
        .zip(&code.log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// [`kl_loss`] on 1×D variables.
pub fn kl_var<'t>(mu: Var<'t>, log_var: Var<'t>) -> Var<'t> {
    ((mu.square() + log_var.exp() - log_var) - 1.0).sum() * 0.5
}

#[derive(Debug, Clone)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
    /// im2col row indices into the input, 9 per output position.
    gather: Vec<usize>,
    out_positions: usize,
    in_channels: usize,
    out_channels: usize,
}

impl Conv {
    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let cols = x
            .gather_rows(&self.gather)
            .reshape(self.out_positions, 9 * self.in_channels);
        (cols.matmul(p.var(self.weight)) + p.var(self.bias)).leaky_relu(LEAKY_SLOPE)
    }
}

/// Strided 3×3 convolutions followed by dense heads for `mu` and `log_var`.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub config: EncoderConfig,
    convs: Vec<Conv>,
    pub mu_head: Linear,
    pub log_var_head: Linear,
}

/// Indices for a 3×3, stride-2, pad-1 convolution over an `h`×`w` grid.
fn im2col_indices(h: usize, w: usize) -> (Vec<usize>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut idx = Vec::with_capacity(oh * ow * 9);
    for oy in 0..oh {
        for ox in 0..ow {
            for dy in 0..3 {
                for dx in 0..3 {
                    let y = (2 * oy + dy) as isize - 1;
                    let x = (2 * ox + dx) as isize - 1;
                    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                        idx.push(ZERO_ROW);
                    } else {
                        idx.push(y as usize * w + x as usize);
                    }
                }
            }
        }
    }
    (idx, oh, ow)
}

impl ImageEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut SeededRng, name: &str, config: EncoderConfig) -> Self {
        let (mut h, mut w) = (config.height, config.width);
        let mut cin = config.slices;
        let mut convs = Vec::new();
        for (i, &cout) in config.channels.iter().enumerate() {
            let (gather, oh, ow) = im2col_indices(h, w);
            let fan_in = 9 * cin;
            let weight = store.add(
                format!("{name}.conv{i}.weight"),
                uniform_init(rng, fan_in, cout, fan_in),
            );
            let bias = store.add(
                format!("{name}.conv{i}.bias"),
                uniform_init(rng, 1, cout, fan_in),
            );
            convs.push(Conv {
                weight,
                bias,
                gather,
                out_positions: oh * ow,
                in_channels: cin,
                out_channels: cout,
            });
            (h, w, cin) = (oh, ow, cout);
        }
        let flat = h * w * cin;
        let mu_head = Linear::new(store, rng, &format!("{name}.mu"), flat, config.latent, true);
        let log_var_head = Linear::new(store, rng, &format!("{name}.log_var"), flat, config.latent, true);
        Self {
            config,
            convs,
            mu_head,
            log_var_head,
        }
    }

    /// Checks a stack of slices and packs it as (H·W)×k, one column per slice.
    pub fn pack(&self, images: &[Array]) -> Result<Array> {
        let c = &self.config;
        if images.len() != c.slices {
            return Err(Error::invalid(format!(
                "encoder takes {} slices, got {}",
                c.slices,
                images.len()
            )));
        }
        for (k, img) in images.iter().enumerate() {
            if img.dim() != (c.height, c.width) {
                return Err(Error::invalid(format!(
                    "slice {k} is {:?}, expected {}×{}",
                    img.dim(),
                    c.height,
                    c.width
                )));
            }
            if img.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("slice {k} has pixels outside [0, 1]")));
            }
        }
        let hw = c.height * c.width;
        Ok(Array::from_shape_fn((hw, images.len()), |(p, k)| {
            images[k][(p / c.width, p % c.width)]
        }))
    }

    /// `(mu, log_var)` as 1×latent variables from a packed stack.
    pub fn forward<'t>(&self, p: &Bound<'t>, packed: Var<'t>) -> (Var<'t>, Var<'t>) {
        let mut x = packed;
        for conv in &self.convs {
            x = conv.forward(p, x);
        }
        let (rows, cols) = x.shape();
        let flat = x.reshape(1, rows * cols);
        (self.mu_head.forward(p, flat), self.log_var_head.forward(p, flat))
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().map_or(self.config.slices, |c| c.out_channels)
    }
}

/// Encodes `images` with the weights in `store`. `noise` of `None` gives the
/// evaluation code `z = mu`.
pub fn encode_image(
    encoder: &ImageEncoder,
    store: &ParamStore,
    images: &[Array],
    noise: Option<&[f64]>,
) -> Result<LatentCode> {
    let packed = encoder.pack(images)?;
    let tape = Tape::new();
    let p = store.bind(&tape);
    let (mu, lv) = encoder.forward(&p, tape.constant(packed));
    let mu = mu.value().iter().copied().collect();
    let lv = lv.value().iter().copied().collect();
    match noise {
        Some(e) => LatentCode::sample(mu, lv, e.to_vec()),
        None => LatentCode::mean(mu, lv),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn im2col_shapes() {
        let (idx, oh, ow) = im2col_indices(91, 109);
        assert_eq!((oh, ow), (46, 55));
        assert_eq!(idx.len(), 46 * 55 * 9);
        // Top-left output sees padding on its first row and column.
        assert_eq!(&idx[..4], &[ZERO_ROW, ZERO_ROW, ZERO_ROW, ZERO_ROW]);
        assert_eq!(idx[4], 0);
    }

    #[test]
    fn rejects_bad_pixels() {
        let mut rng = SeededRng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let enc = ImageEncoder::new(&mut store, &mut rng, "e", EncoderConfig::default());
        let mut img = Array::zeros((91, 109));
        img[(3, 4)] = 1.5;
        assert!(matches!(
            encode_image(&enc, &store, &[img], None),
            Err(Error::InvalidArgument(_))
        ));
    }
}
