//! Real-versus-generated point cloud classifier and the experiment that
//! scores each variant's generations with it.

use rand::SeedableRng;

use hspn_core::autograd::Tape;
use hspn_core::geometry::PointCloud;
use hspn_core::nn::{accumulate, scale_all, Adam, Bound, Mlp, ParamStore, SeededRng};
use hspn_core::autograd::Var;
use hspn_core::sampling::{farthest_from_centroid, GroupingSpec, SetAbstraction};
use hspn_core::{Error, Result};

use crate::config::TrainConfig;

/// Set-abstraction encoder followed by a dense head with one logit.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub local: SetAbstraction,
    pub global: SetAbstraction,
    pub head: Mlp,
    pub params: ParamStore,
}

impl Classifier {
    pub fn new(rng: &mut SeededRng) -> Self {
        let mut params = ParamStore::new();
        let local = SetAbstraction::new(
            &mut params,
            rng,
            "cls.sa1",
            GroupingSpec::new(128, 0.3, 16, vec![32, 32, 64]),
            0,
        );
        let global = SetAbstraction::new(&mut params, rng, "cls.sa2", GroupingSpec::global(vec![64, 128]), 64);
        let head = Mlp::new(&mut params, rng, "cls.head", &[128, 64, 1], false);
        Self {
            local,
            global,
            head,
            params,
        }
    }

    /// Zeroes the output layer so every logit is 0.
    pub fn zero_head(&mut self) {
        if let Some(last) = self.head.layers.last() {
            last.zero(&mut self.params);
        }
    }

    pub fn logit_var<'t>(&self, bound: &Bound<'t>, cloud: Var<'t>) -> Result<Var<'t>> {
        let seed = farthest_from_centroid(&PointCloud::from_array(&cloud.value())?);
        let l1 = self.local.forward(bound, cloud, None, seed)?;
        let g = self.global.forward(bound, l1.points, Some(l1.features), 0)?;
        Ok(self.head.forward(bound, g.features))
    }

    /// Probability that `cloud` is a real shape.
    pub fn score(&self, cloud: &PointCloud) -> Result<f64> {
        let tape = Tape::new();
        let b = self.params.bind(&tape);
        let logit = self.logit_var(&b, tape.constant(cloud.to_array()))?;
        Ok(hspn_core::autograd::sigmoid(logit.item()))
    }

    pub fn mean_score(&self, clouds: &[PointCloud]) -> Result<f64> {
        if clouds.is_empty() {
            return Err(Error::invalid("no clouds to score"));
        }
        let mut total = 0.0;
        for c in clouds {
            total += self.score(c)?;
        }
        Ok(total / clouds.len() as f64)
    }
}

fn softplus(x: Var<'_>) -> Var<'_> {
    (x.exp() + 1.0).ln()
}

/// Trains with binary cross-entropy: `real` labeled true, `fake` false.
pub fn train_classifier(cfg: &TrainConfig, real: &[PointCloud], fake: &[PointCloud]) -> Result<Classifier> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::invalid("classifier needs real and generated examples"));
    }
    let mut rng = SeededRng::seed_from_u64(cfg.seed ^ 0xc1a5_5e);
    let mut clf = Classifier::new(&mut rng);
    let mut opt = Adam::new(&clf.params, cfg.classifier_lr);
    let examples: Vec<(&PointCloud, bool)> = real
        .iter()
        .map(|c| (c, true))
        .chain(fake.iter().map(|c| (c, false)))
        .collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..cfg.classifier_epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for batch in order.chunks(cfg.batch) {
            let mut grads = clf.params.zeros_like();
            let mut total = 0.0;
            for &i in batch {
                let (cloud, label) = examples[i];
                let tape = Tape::new();
                let b = clf.params.bind(&tape);
                let logit = clf.logit_var(&b, tape.constant(cloud.to_array()))?;
                let loss = if label { softplus(logit * -1.0) } else { softplus(logit) };
                total += loss.item();
                accumulate(&mut grads, &tape.grad_values(loss, b.vars()));
            }
            if !total.is_finite() {
                return Err(Error::NonFinite("classifier loss".into()));
            }
            scale_all(&mut grads, 1.0 / batch.len() as f64);
            opt.step(&mut clf.params, &grads);
        }
    }
    Ok(clf)
}

/// Mean "real" probability the classifier assigns to each variant's
/// generations, in input order.
pub fn classify_experiment(
    cfg: &TrainConfig,
    real: &[PointCloud],
    mid_training: &[PointCloud],
    generations: &[(String, Vec<PointCloud>)],
) -> Result<Vec<(String, f64)>> {
    let clf = train_classifier(cfg, real, mid_training)?;
    generations
        .iter()
        .map(|(name, clouds)| Ok((name.clone(), clf.mean_score(clouds)?)))
        .collect()
}
