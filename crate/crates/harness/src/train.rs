//! Two-phase training: predictor first, then completion on the frozen
//! predictor's outputs.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use hspn_core::autograd::{Array, Tape};
use hspn_core::completion::{loss_completion_var, CompletionConfig, CompletionNet, JointLoss};
use hspn_core::container::Container;
use hspn_core::geometry::{chamfer, chamfer_var, PointCloud, SinkhornSettings};
use hspn_core::nn::{accumulate, scale_all, Adam, SeededRng};
use hspn_core::predictor::{gradient_penalty_var, kl_var, Predictor, PredictorConfig};
use hspn_core::synthdata::SyntheticSample;
use hspn_core::{Error, Result};

use crate::config::TrainConfig;

/// Predictor and completion network trained together as one pipeline.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub predictor: Predictor,
    pub completion: CompletionNet,
    /// Slices the predictor consumes.
    pub slices: usize,
}

impl Pipeline {
    /// Image stack → completed cloud.
    pub fn run(&self, sample: &SyntheticSample) -> Result<PointCloud> {
        let partial = self.predictor.predict(sample.centered_slices(self.slices)?)?;
        self.completion.complete(&partial)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new();
        self.predictor.save_into(&mut c);
        self.completion.save_into(&mut c);
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let predictor = Predictor::load_from(&c)?;
        let slices = predictor.config.encoder.slices;
        Ok(Self {
            predictor,
            completion: CompletionNet::load_from(&c)?,
            slices,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorEpoch {
    pub epoch: usize,
    pub lambda2: f64,
    /// Mean generator loss.
    pub g_loss: f64,
    /// Mean critic loss.
    pub d_loss: f64,
    pub cd: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub cd: f64,
}

/// Options that differ between variants of the same run.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Train without the critic.
    pub no_critic: bool,
    /// 1-based epochs after which a copy of the model is kept.
    pub snapshot_epochs: Vec<usize>,
    /// Where a diagnostic snapshot goes if a loss turns non-finite.
    pub abort_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PredictorRun {
    pub predictor: Predictor,
    pub curve: Vec<PredictorEpoch>,
    pub snapshots: Vec<(usize, Predictor)>,
    pub steps: usize,
    pub rng: SeededRng,
}

#[derive(Debug, Clone)]
pub struct CompletionRun {
    pub net: CompletionNet,
    pub curve: Vec<CompletionEpoch>,
    pub snapshots: Vec<(usize, CompletionNet)>,
    pub steps: usize,
    pub rng: SeededRng,
}

fn normal_row(rng: &mut SeededRng, n: usize) -> Array {
    Array::from_shape_fn((1, n), |_| rng.sample(StandardNormal))
}

fn abort<T>(dir: &Option<PathBuf>, what: &str, save: impl FnOnce(&Path) -> Result<()>) -> Result<T> {
    let mut msg = format!("{what} is not finite");
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("abort_snapshot.hspn");
        save(&path)?;
        msg.push_str(&format!("; snapshot at {}", path.display()));
    }
    Err(Error::NonFinite(msg))
}

fn batches(rng: &mut SeededRng, n: usize, batch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn stop_early(first: Option<f64>, current: f64, ratio: Option<f64>) -> bool {
    matches!((first, ratio), (Some(f), Some(r)) if current < r * f)
}

/// WGAN-GP training of encoder + generator against the critic.
///
/// Each step updates the critic `n_critic` times on one batch of generated
/// clouds (real = ground truth), then takes one generator step on
/// `λ1·KL + λ2·CD(generated, partial) − D(generated)`.
pub fn train_predictor(
    cfg: &TrainConfig,
    samples: &[SyntheticSample],
    config: PredictorConfig,
    opts: &TrainOptions,
) -> Result<PredictorRun> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let mut predictor = Predictor::new(config, &mut rng)?;
    let latent = predictor.config.encoder.latent;
    let slices = predictor.config.encoder.slices;
    let packed: Vec<Array> = samples
        .iter()
        .map(|s| predictor.encoder.pack(s.centered_slices(slices)?))
        .collect::<Result<_>>()?;
    let partials: Vec<Array> = samples.iter().map(|s| s.partial.to_array()).collect();
    let reals: Vec<Array> = samples.iter().map(|s| s.gt.to_array()).collect();

    let mut g_opt = Adam::new(&predictor.g_params, cfg.lr);
    let mut d_opt = Adam::new(&predictor.d_params, cfg.lr);
    let mut curve = Vec::new();
    let mut snapshots = Vec::new();
    let mut steps = 0;
    let limit = cfg.max_steps.unwrap_or(usize::MAX);

    for epoch in 0..cfg.epochs {
        let lambda2 = cfg.lambda2(epoch);
        let mut sums = [0.0; 4];
        let mut count = 0.0;
        for batch in batches(&mut rng, samples.len(), cfg.batch) {
            if steps >= limit {
                break;
            }
            let scale = 1.0 / batch.len() as f64;

            let mut d_loss = 0.0;
            if !opts.no_critic {
                let fakes: Vec<Array> = batch
                    .iter()
                    .map(|&i| {
                        let tape = Tape::new();
                        let g = predictor.g_params.bind(&tape);
                        let (mu, lv) = predictor.encoder.forward(&g, tape.constant(packed[i].clone()));
                        let z = mu + (lv * 0.5).exp() * tape.constant(normal_row(&mut rng, latent));
                        Ok((*predictor.generator.forward(&g, z)?.value()).clone())
                    })
                    .collect::<Result<_>>()?;
                for _ in 0..cfg.n_critic {
                    let mut grads = predictor.d_params.zeros_like();
                    d_loss = 0.0;
                    for (k, &i) in batch.iter().enumerate() {
                        let t: f64 = rng.random();
                        let tape = Tape::new();
                        let d = predictor.d_params.bind(&tape);
                        let real = tape.constant(reals[i].clone());
                        let fake = tape.constant(fakes[k].clone());
                        let sr = predictor.critic.forward(&d, real)?;
                        let sf = predictor.critic.forward(&d, fake)?;
                        let gp = gradient_penalty_var(real, fake, t, |x| predictor.critic.forward(&d, x))?;
                        let loss = sf - sr + gp * cfg.lambda_gp;
                        d_loss += loss.item() * scale;
                        accumulate(&mut grads, &tape.grad_values(loss, d.vars()));
                    }
                    if !d_loss.is_finite() {
                        return abort(&opts.abort_dir, &format!("critic loss at epoch {}", epoch + 1), |p| {
                            predictor.save(p, &rng)
                        });
                    }
                    scale_all(&mut grads, scale);
                    d_opt.step(&mut predictor.d_params, &grads);
                }
            }

            let mut grads = predictor.g_params.zeros_like();
            let (mut g_loss, mut cd_sum, mut kl_sum) = (0.0, 0.0, 0.0);
            for &i in &batch {
                let tape = Tape::new();
                let g = predictor.g_params.bind(&tape);
                let (mu, lv) = predictor.encoder.forward(&g, tape.constant(packed[i].clone()));
                let z = mu + (lv * 0.5).exp() * tape.constant(normal_row(&mut rng, latent));
                let out = predictor.generator.forward(&g, z)?;
                let cd = chamfer_var(out, tape.constant(partials[i].clone()));
                let kl = kl_var(mu, lv);
                let mut loss = kl * cfg.lambda1 + cd * lambda2;
                if !opts.no_critic {
                    let d = predictor.d_params.bind(&tape);
                    loss = loss - predictor.critic.forward(&d, out)?;
                }
                g_loss += loss.item() * scale;
                cd_sum += cd.item() * scale;
                kl_sum += kl.item() * scale;
                accumulate(&mut grads, &tape.grad_values(loss, g.vars()));
            }
            if !g_loss.is_finite() {
                return abort(&opts.abort_dir, &format!("generator loss at epoch {}", epoch + 1), |p| {
                    predictor.save(p, &rng)
                });
            }
            scale_all(&mut grads, scale);
            g_opt.step(&mut predictor.g_params, &grads);
            steps += 1;
            for (s, v) in sums.iter_mut().zip([g_loss, d_loss, cd_sum, kl_sum]) {
                *s += v;
            }
            count += 1.0;
        }
        if count == 0.0 {
            break;
        }
        let row = PredictorEpoch {
            epoch: epoch + 1,
            lambda2,
            g_loss: sums[0] / count,
            d_loss: sums[1] / count,
            cd: sums[2] / count,
            kl: sums[3] / count,
        };
        curve.push(row);
        if opts.snapshot_epochs.contains(&(epoch + 1)) {
            snapshots.push((epoch + 1, predictor.clone()));
        }
        if steps >= limit || stop_early(curve.first().map(|r| r.cd), row.cd, cfg.stop_ratio) {
            break;
        }
    }
    Ok(PredictorRun {
        predictor,
        curve,
        snapshots,
        steps,
        rng,
    })
}

/// Evaluation-time predictor outputs (`z = mu`) for every sample.
pub fn cache_predictions(predictor: &Predictor, samples: &[SyntheticSample]) -> Result<Vec<PointCloud>> {
    let slices = predictor.config.encoder.slices;
    samples
        .iter()
        .map(|s| predictor.predict(s.centered_slices(slices)?))
        .collect()
}

pub fn joint_loss(cfg: &TrainConfig) -> JointLoss {
    JointLoss {
        lambda3: cfg.lambda3,
        lambda4: cfg.lambda4,
        emd_points: cfg.emd_points,
        emd: SinkhornSettings::fast(cfg.emd_epsilon, cfg.emd_sweeps),
    }
}

/// Trains the completion network on fixed `(input, target)` pairs with the
/// joint CD + EMD loss.
pub fn train_completion(
    cfg: &TrainConfig,
    inputs: &[PointCloud],
    targets: &[PointCloud],
    config: CompletionConfig,
    opts: &TrainOptions,
) -> Result<CompletionRun> {
    cfg.validate()?;
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::invalid("need one target per input and at least one pair"));
    }
    let mut rng = SeededRng::seed_from_u64(cfg.seed ^ 0xc0_4e7e);
    let mut net = CompletionNet::new(config, &mut rng)?;
    let loss_cfg = joint_loss(cfg);
    let xs: Vec<Array> = inputs.iter().map(PointCloud::to_array).collect();
    let ys: Vec<Array> = targets.iter().map(PointCloud::to_array).collect();
    let mut opt = Adam::new(&net.params, cfg.completion_lr);
    let mut curve = Vec::new();
    let mut snapshots = Vec::new();
    let mut steps = 0;
    let limit = cfg.max_steps.unwrap_or(usize::MAX);

    for epoch in 0..cfg.completion_epochs {
        let (mut loss_sum, mut cd_sum, mut count) = (0.0, 0.0, 0.0);
        for batch in batches(&mut rng, xs.len(), cfg.batch) {
            if steps >= limit {
                break;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut grads = net.params.zeros_like();
            let (mut batch_loss, mut batch_cd) = (0.0, 0.0);
            for &i in &batch {
                let tape = Tape::new();
                let b = net.params.bind(&tape);
                let out = net.forward(&b, tape.constant(xs[i].clone()))?;
                let loss = loss_completion_var(out, tape.constant(ys[i].clone()), &loss_cfg, &mut rng)?;
                batch_loss += loss.item() * scale;
                batch_cd += chamfer(&PointCloud::from_array(&out.value())?, &targets[i]) * scale;
                accumulate(&mut grads, &tape.grad_values(loss, b.vars()));
            }
            if !batch_loss.is_finite() {
                return abort(&opts.abort_dir, &format!("completion loss at epoch {}", epoch + 1), |p| {
                    net.save(p, &rng)
                });
            }
            scale_all(&mut grads, scale);
            opt.step(&mut net.params, &grads);
            steps += 1;
            loss_sum += batch_loss;
            cd_sum += batch_cd;
            count += 1.0;
        }
        if count == 0.0 {
            break;
        }
        let row = CompletionEpoch {
            epoch: epoch + 1,
            loss: loss_sum / count,
            cd: cd_sum / count,
        };
        curve.push(row);
        if opts.snapshot_epochs.contains(&(epoch + 1)) {
            snapshots.push((epoch + 1, net.clone()));
        }
        if steps >= limit || stop_early(curve.first().map(|r| r.cd), row.cd, cfg.stop_ratio) {
            break;
        }
    }
    Ok(CompletionRun {
        net,
        curve,
        snapshots,
        steps,
        rng,
    })
}

/// Mean chamfer distance of evaluation-time predictions to each sample's
/// partial cloud.
pub fn predictor_cd(predictor: &Predictor, samples: &[SyntheticSample]) -> Result<f64> {
    let preds = cache_predictions(predictor, samples)?;
    Ok(preds.iter().zip(samples).map(|(p, s)| chamfer(p, &s.partial)).sum::<f64>() / samples.len() as f64)
}

/// Mean chamfer distance of completions of `inputs` to `targets`.
pub fn completion_cd(net: &CompletionNet, inputs: &[PointCloud], targets: &[PointCloud]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        total += chamfer(&net.complete(x)?, y);
    }
    Ok(total / inputs.len() as f64)
}

/// Writes a training curve as CSV.
pub fn write_predictor_curve(path: &Path, curve: &[PredictorEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["epoch", "lambda2", "g_loss", "d_loss", "cd", "kl"])
        .map_err(|e| csv_error(path, e))?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            r.lambda2.to_string(),
            r.g_loss.to_string(),
            r.d_loss.to_string(),
            r.cd.to_string(),
            r.kl.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_completion_curve(path: &Path, curve: &[CompletionEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["epoch", "loss", "cd"]).map_err(|e| csv_error(path, e))?;
    for r in curve {
        w.write_record([r.epoch.to_string(), r.loss.to_string(), r.cd.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}
