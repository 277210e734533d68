//! Ablation variants, the shared trainer behind them, and the robustness
//! sweeps over point count and slice count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;

use hspn_core::completion::{Architecture, CompletionConfig, CompletionNet};
use hspn_core::geometry::PointCloud;
use hspn_core::nn::SeededRng;
use hspn_core::predictor::{GeneratorKind, Predictor};
use hspn_core::synthdata::{Split, SyntheticSample};
use hspn_core::{Error, Result};

use crate::config::TrainConfig;
use crate::eval::{evaluate, score_predictions, MetricReport, Table, TableRow};
use crate::train::{cache_predictions, train_completion, train_predictor, Pipeline, TrainOptions};

/// Tags of the architecture ablations, in table order.
pub const TABLE_VARIANTS: [&str; 9] = [
    "full",
    "no_d",
    "pointoutnet_like",
    "fc_decoder",
    "foldingnet_like",
    "topnet_like",
    "no_agb_all",
    "no_agb_pipeline",
    "no_agb_self",
];

/// Epochs of the published runs, used to place reference values.
const PAPER_EPOCHS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblationVariant {
    Full,
    NoD,
    PointOutNetLike,
    FcDecoder,
    FoldingNetLike,
    TopNetLike,
    NoAgbAll,
    NoAgbPipeline,
    NoAgbSelf,
    /// Predictor output subsampled to `n` points before completion.
    Points(usize),
    /// Image encoder fed `k` stacked slices.
    Slices(usize),
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use AblationVariant::*;
        let bad = || Error::invalid(format!("unknown variant tag {s:?}"));
        Ok(match s {
            "full" => Full,
            "no_d" => NoD,
            "pointoutnet_like" => PointOutNetLike,
            "fc_decoder" => FcDecoder,
            "foldingnet_like" => FoldingNetLike,
            "topnet_like" => TopNetLike,
            "no_agb_all" => NoAgbAll,
            "no_agb_pipeline" => NoAgbPipeline,
            "no_agb_self" => NoAgbSelf,
            _ => {
                if let Some(n) = s.strip_prefix("points_") {
                    let n: usize = n.parse().map_err(|_| bad())?;
                    if !(1..=2048).contains(&n) {
                        return Err(Error::invalid(format!("point count {n} outside 1..=2048")));
                    }
                    Points(n)
                } else if let Some(k) = s.strip_prefix("slices_") {
                    let k: usize = k.parse().map_err(|_| bad())?;
                    if k == 0 || k % 2 == 0 {
                        return Err(Error::invalid(format!("slice count {k} must be odd")));
                    }
                    Slices(k)
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use AblationVariant::*;
        match self {
            Full => f.write_str("full"),
            NoD => f.write_str("no_d"),
            PointOutNetLike => f.write_str("pointoutnet_like"),
            FcDecoder => f.write_str("fc_decoder"),
            FoldingNetLike => f.write_str("foldingnet_like"),
            TopNetLike => f.write_str("topnet_like"),
            NoAgbAll => f.write_str("no_agb_all"),
            NoAgbPipeline => f.write_str("no_agb_pipeline"),
            NoAgbSelf => f.write_str("no_agb_self"),
            Points(n) => write!(f, "points_{n}"),
            Slices(k) => write!(f, "slices_{k}"),
        }
    }
}

/// How the predictor of a variant is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PredictorKey {
    pub generator: GeneratorKind,
    pub critic: bool,
    pub slices: usize,
}

impl AblationVariant {
    pub fn parse_all(tags: &[String]) -> Result<Vec<Self>> {
        tags.iter().map(|t| t.parse()).collect()
    }

    pub fn predictor_key(self, cfg: &TrainConfig) -> PredictorKey {
        let (generator, critic) = match self {
            AblationVariant::NoD => (GeneratorKind::Branching, false),
            AblationVariant::PointOutNetLike => (GeneratorKind::Dense, false),
            _ => (GeneratorKind::Branching, true),
        };
        let slices = match self {
            AblationVariant::Slices(k) => k,
            _ => cfg.input_slices,
        };
        PredictorKey {
            generator,
            critic,
            slices,
        }
    }

    /// Completion network of the variant, derived from the preset.
    pub fn completion_config(self, cfg: &TrainConfig) -> CompletionConfig {
        let mut c = cfg.preset.completion();
        match self {
            AblationVariant::FcDecoder => c.architecture = Architecture::FcDecoder,
            AblationVariant::FoldingNetLike => c.architecture = Architecture::FoldingLike,
            AblationVariant::TopNetLike => c.architecture = Architecture::TopNetLike,
            AblationVariant::NoAgbAll => {
                c.pipeline_agb = false;
                c.self_agb = false;
            }
            AblationVariant::NoAgbPipeline => c.pipeline_agb = false,
            AblationVariant::NoAgbSelf => c.self_agb = false,
            _ => {}
        }
        c
    }

    /// Variants whose completion network is the unmodified model.
    fn completion_tag(self) -> String {
        match self {
            AblationVariant::FcDecoder
            | AblationVariant::FoldingNetLike
            | AblationVariant::TopNetLike
            | AblationVariant::NoAgbAll
            | AblationVariant::NoAgbPipeline
            | AblationVariant::NoAgbSelf => self.to_string(),
            _ => "full".into(),
        }
    }

    pub fn is_approximation(self) -> bool {
        matches!(self, AblationVariant::FoldingNetLike | AblationVariant::TopNetLike)
    }

    /// Published table the variant belongs to.
    pub fn paper_table(self) -> &'static str {
        use AblationVariant::*;
        match self {
            Full => "I-V",
            NoD | PointOutNetLike => "I",
            FcDecoder | FoldingNetLike | TopNetLike => "II",
            NoAgbAll | NoAgbPipeline | NoAgbSelf => "III",
            Points(_) => "IV",
            Slices(_) => "V",
        }
    }

    /// Published CD(x10^-1) for the snapshot at `epoch` of `total`, placed
    /// by the proportional position in the published 2000-epoch run.
    pub fn paper_cd_x10(self, epoch: usize, total: usize) -> Option<f64> {
        use AblationVariant::*;
        if total == 0 || (epoch * PAPER_EPOCHS) % total != 0 {
            return None;
        }
        let at = epoch * PAPER_EPOCHS / total;
        let by_epoch = |v: [f64; 3]| match at {
            1000 => Some(v[0]),
            1500 => Some(v[1]),
            2000 => Some(v[2]),
            _ => None,
        };
        let last = |v: f64| (at == PAPER_EPOCHS).then_some(v);
        match self {
            Full => by_epoch([4.741, 4.406, 4.461]),
            NoD => last(5.309),
            PointOutNetLike => last(5.492),
            FcDecoder => last(10.572),
            FoldingNetLike => last(9.863),
            TopNetLike => last(6.255),
            NoAgbAll => by_epoch([5.258, 5.071, 4.958]),
            NoAgbPipeline => by_epoch([5.160, 4.952, 4.831]),
            NoAgbSelf => by_epoch([5.314, 5.186, 5.178]),
            Points(n) => match n {
                2048 => last(4.461),
                1024 => last(4.655),
                512 => last(4.836),
                256 => last(5.178),
                _ => None,
            },
            Slices(k) => match k {
                1 => last(4.461),
                3 => last(4.327),
                5 => last(4.285),
                7 => last(4.369),
                _ => None,
            },
        }
    }

    fn note(self) -> String {
        let mut note = format!("Table {}", self.paper_table());
        if self.is_approximation() {
            note.push_str("; approximation");
        }
        note
    }
}

struct PredictorEntry {
    predictor: Predictor,
    snapshots: Vec<(usize, Predictor)>,
    /// Evaluation-time outputs on the training samples.
    inputs: Vec<PointCloud>,
}

/// Trains each distinct predictor and completion network once and shares
/// them between the variants that use them.
pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    train: Vec<SyntheticSample>,
    predictors: BTreeMap<PredictorKey, PredictorEntry>,
    completions: BTreeMap<(PredictorKey, String), (CompletionNet, Vec<(usize, CompletionNet)>)>,
}

impl<'a> Trainer<'a> {
    /// Uses the training split of `samples`.
    pub fn new(cfg: &'a TrainConfig, samples: &[SyntheticSample]) -> Result<Self> {
        cfg.validate()?;
        let train: Vec<SyntheticSample> = samples.iter().filter(|s| s.split == Split::Train).cloned().collect();
        if train.is_empty() {
            return Err(Error::invalid("dataset has no training samples"));
        }
        Ok(Self {
            cfg,
            train,
            predictors: BTreeMap::new(),
            completions: BTreeMap::new(),
        })
    }

    pub fn mid_epoch(total: usize) -> usize {
        (total / 2).max(1)
    }

    fn predictor(&mut self, key: PredictorKey) -> Result<&PredictorEntry> {
        if !self.predictors.contains_key(&key) {
            let config = self.cfg.preset.predictor().with_slices(key.slices).with_generator(key.generator);
            let opts = TrainOptions {
                no_critic: !key.critic,
                snapshot_epochs: vec![Self::mid_epoch(self.cfg.epochs)],
                abort_dir: None,
            };
            let run = train_predictor(self.cfg, &self.train, config, &opts)?;
            let inputs = cache_predictions(&run.predictor, &self.train)?;
            self.predictors.insert(
                key,
                PredictorEntry {
                    predictor: run.predictor,
                    snapshots: run.snapshots,
                    inputs,
                },
            );
        }
        Ok(&self.predictors[&key])
    }

    fn completion(&mut self, variant: AblationVariant) -> Result<&(CompletionNet, Vec<(usize, CompletionNet)>)> {
        let key = variant.predictor_key(self.cfg);
        let ckey = (key, variant.completion_tag());
        if !self.completions.contains_key(&ckey) {
            let inputs = self.predictor(key)?.inputs.clone();
            let targets: Vec<PointCloud> = self.train.iter().map(|s| s.gt.clone()).collect();
            let mut snapshot_epochs = self.cfg.checkpoints.clone();
            snapshot_epochs.push(Self::mid_epoch(self.cfg.completion_epochs));
            let opts = TrainOptions {
                no_critic: false,
                snapshot_epochs,
                abort_dir: None,
            };
            let run = train_completion(self.cfg, &inputs, &targets, variant.completion_config(self.cfg), &opts)?;
            self.completions.insert(ckey.clone(), (run.net, run.snapshots));
        }
        Ok(&self.completions[&ckey])
    }

    /// Completion epochs evaluated for every variant.
    pub fn checkpoints(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self
            .cfg
            .checkpoints
            .iter()
            .copied()
            .filter(|&e| e >= 1 && e <= self.cfg.completion_epochs)
            .collect();
        if c.is_empty() {
            c.push(self.cfg.completion_epochs);
        }
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Final predictor with the completion network as of `epoch`. A run
    /// that stopped early contributes its last state.
    pub fn pipeline(&mut self, variant: AblationVariant, epoch: usize) -> Result<Pipeline> {
        let key = variant.predictor_key(self.cfg);
        let predictor = self.predictor(key)?.predictor.clone();
        let (last, snaps) = self.completion(variant)?;
        let completion = snaps.iter().find(|(e, _)| *e == epoch).map_or(last, |(_, n)| n).clone();
        Ok(Pipeline {
            predictor,
            completion,
            slices: key.slices,
        })
    }

    /// Both networks at half of their training runs.
    pub fn mid_pipeline(&mut self, variant: AblationVariant) -> Result<Pipeline> {
        let key = variant.predictor_key(self.cfg);
        let mid_p = Self::mid_epoch(self.cfg.epochs);
        let entry = self.predictor(key)?;
        let predictor = entry
            .snapshots
            .iter()
            .find(|(e, _)| *e == mid_p)
            .map_or(&entry.predictor, |(_, p)| p)
            .clone();
        let mid_c = Self::mid_epoch(self.cfg.completion_epochs);
        let (last, snaps) = self.completion(variant)?;
        let completion = snaps.iter().find(|(e, _)| *e == mid_c).map_or(last, |(_, n)| n).clone();
        Ok(Pipeline {
            predictor,
            completion,
            slices: key.slices,
        })
    }
}

/// Runs the pipeline with predictor outputs randomly subsampled to `n`
/// points. Subsets depend only on `(seed, n, sample index)`.
pub fn evaluate_points(pipeline: &Pipeline, samples: &[SyntheticSample], n: usize, seed: u64) -> Result<MetricReport> {
    let mut preds = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let partial = pipeline.predictor.predict(s.centered_slices(pipeline.slices)?)?;
        let input = if n < partial.len() {
            let mut rng = SeededRng::seed_from_u64(seed ^ ((n as u64) << 32) ^ i as u64);
            let mut idx = index::sample(&mut rng, partial.len(), n).into_vec();
            idx.sort_unstable();
            partial.select(&idx)?
        } else {
            partial
        };
        preds.push(pipeline.completion.complete(&input)?);
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let gts: Vec<PointCloud> = samples.iter().map(|s| s.gt.clone()).collect();
    score_predictions(&ids, &preds, &gts)
}

fn row(variant: AblationVariant, epoch: usize, total: usize, report: &MetricReport) -> TableRow {
    TableRow {
        variant: variant.to_string(),
        epoch,
        cd: report.mean_cd,
        paper_cd_x10: variant.paper_cd_x10(epoch, total),
        note: variant.note(),
    }
}

/// Trains and evaluates every variant under the same seed and data. Rows
/// follow the order of `variants`, one per checkpoint epoch.
pub fn run_ablation(
    variants: &[AblationVariant],
    cfg: &TrainConfig,
    samples: &[SyntheticSample],
) -> Result<Table> {
    let eval = crate::eval::select(samples, cfg.eval_split);
    if eval.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let mut trainer = Trainer::new(cfg, samples)?;
    let mut table = Table {
        title: "Ablation, CD(x10^-1)".into(),
        rows: Vec::new(),
    };
    for &v in variants {
        for epoch in trainer.checkpoints() {
            let pipeline = trainer.pipeline(v, epoch)?;
            let report = match v {
                AblationVariant::Points(n) => evaluate_points(&pipeline, &eval, n, cfg.seed)?,
                _ => evaluate(&pipeline, &eval)?,
            };
            table.rows.push(row(v, epoch, cfg.completion_epochs, &report));
        }
    }
    Ok(table)
}

/// Splits an ablation table into the published groupings. The full model
/// appears in each group it is compared against.
pub fn paper_tables(table: &Table) -> Vec<Table> {
    let groups: [(&str, &[&str]); 5] = [
        ("Table I analogue: predictor structure", &["full", "no_d", "pointoutnet_like"]),
        (
            "Table II analogue: completion system",
            &["full", "fc_decoder", "foldingnet_like", "topnet_like"],
        ),
        (
            "Table III analogue: attention gate blocks",
            &["no_agb_all", "no_agb_pipeline", "no_agb_self", "full"],
        ),
        ("Table IV analogue: point number", &[]),
        ("Table V analogue: image input number", &[]),
    ];
    let mut out = Vec::new();
    for (i, (title, tags)) in groups.iter().enumerate() {
        let keep = |r: &TableRow| match i {
            3 => r.variant.starts_with("points_"),
            4 => r.variant.starts_with("slices_"),
            _ => tags.contains(&r.variant.as_str()),
        };
        let mut rows: Vec<TableRow> = Vec::new();
        if tags.is_empty() {
            rows.extend(table.rows.iter().filter(|r| keep(r)).cloned());
        } else {
            for t in *tags {
                rows.extend(table.rows.iter().filter(|r| r.variant == *t).cloned());
            }
        }
        let compared = rows.iter().any(|r| r.variant != "full");
        if compared {
            out.push(Table {
                title: title.to_string(),
                rows,
            });
        }
    }
    out
}

/// CD of a trained pipeline for every point count in `cfg.points`.
pub fn robustness_points(cfg: &TrainConfig, pipeline: &Pipeline, epoch: usize, samples: &[SyntheticSample]) -> Result<Table> {
    let mut table = Table {
        title: "Table IV analogue: point number, CD(x10^-1)".into(),
        rows: Vec::new(),
    };
    for &n in &cfg.points {
        let v = AblationVariant::Points(n);
        if !(1..=2048).contains(&n) {
            return Err(Error::invalid(format!("point count {n} outside 1..=2048")));
        }
        let report = evaluate_points(pipeline, samples, n, cfg.seed)?;
        table.rows.push(row(v, epoch, epoch, &report));
    }
    Ok(table)
}

/// Trains and evaluates one pipeline per slice count in `cfg.slice_counts`.
pub fn robustness_slices(cfg: &TrainConfig, samples: &[SyntheticSample]) -> Result<Table> {
    let variants: Vec<AblationVariant> = cfg
        .slice_counts
        .iter()
        .map(|k| format!("slices_{k}").parse())
        .collect::<Result<_>>()?;
    let mut table = run_ablation(&variants, cfg, samples)?;
    table.title = "Table V analogue: image input number, CD(x10^-1)".into();
    Ok(table)
}
