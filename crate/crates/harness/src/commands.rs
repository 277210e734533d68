//! Implementations of the command-line subcommands. Every command writes
//! its outputs under `out_dir` and returns a short summary.

use std::path::{Path, PathBuf};

use hspn_core::geometry::PointCloud;
use hspn_core::predictor::Predictor;
use hspn_core::synthdata::{generate_dataset, read_dataset, write_dataset, SyntheticSample};
use hspn_core::{Error, Result};

use crate::ablation::{paper_tables, robustness_points, robustness_slices, run_ablation, AblationVariant, Trainer};
use crate::classify::classify_experiment;
use crate::config::{EvalSplit, TrainConfig};
use crate::eval::{evaluate, select, write_jsonl, Table, TableRow};
use crate::heatmap::export_heatmap;
use crate::train::{
    cache_predictions, train_completion, train_predictor, write_completion_curve, write_predictor_curve, Pipeline,
    TrainOptions,
};

pub const PREDICTOR_FILE: &str = "predictor.hspn";
pub const PIPELINE_FILE: &str = "pipeline.hspn";

#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: TrainConfig,
    pub out_dir: PathBuf,
    pub ckpt: Option<PathBuf>,
    /// Dataset directory; defaults to `out_dir/data`.
    pub data: Option<PathBuf>,
}

impl Context {
    pub fn new(cfg: TrainConfig, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            cfg,
            out_dir: out_dir.into(),
            ckpt: None,
            data: None,
        }
    }

    fn data_dir(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    fn ckpt_or(&self, default: &str) -> PathBuf {
        self.ckpt.clone().unwrap_or_else(|| self.out_dir.join(default))
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        Ok(self.out_dir.join(name))
    }

    fn dataset(&self) -> Result<Vec<SyntheticSample>> {
        read_dataset(&self.data_dir())
    }

    fn split(&self, samples: &[SyntheticSample], split: EvalSplit) -> Result<Vec<SyntheticSample>> {
        let s = select(samples, split);
        if s.is_empty() {
            return Err(Error::invalid(format!("{split:?} split of the dataset is empty")));
        }
        Ok(s)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn datagen(ctx: &Context) -> Result<String> {
    let samples = generate_dataset(ctx.cfg.seed, ctx.cfg.samples, ctx.cfg.slices)?;
    let dir = ctx.data_dir();
    write_dataset(&samples, &dir)?;
    Ok(format!("wrote {} samples to {}", samples.len(), dir.display()))
}

pub fn train_predictor_cmd(ctx: &Context) -> Result<String> {
    let samples = ctx.dataset()?;
    let train = ctx.split(&samples, EvalSplit::Train)?;
    let opts = TrainOptions {
        abort_dir: Some(ctx.out_dir.clone()),
        ..TrainOptions::default()
    };
    let run = train_predictor(&ctx.cfg, &train, ctx.cfg.predictor_config(), &opts)?;
    let path = ctx.out(PREDICTOR_FILE)?;
    run.predictor.save(&path, &run.rng)?;
    write_predictor_curve(&ctx.out("predictor_curve.csv")?, &run.curve)?;
    let cd = run.curve.last().map_or(f64::NAN, |r| r.cd);
    Ok(format!("{} steps, last epoch cd {cd}; checkpoint {}", run.steps, path.display()))
}

pub fn train_completion_cmd(ctx: &Context) -> Result<String> {
    let samples = ctx.dataset()?;
    let train = ctx.split(&samples, EvalSplit::Train)?;
    let (predictor, _) = Predictor::load(&ctx.ckpt_or(PREDICTOR_FILE))?;
    let slices = predictor.config.encoder.slices;
    let inputs = cache_predictions(&predictor, &train)?;
    let targets: Vec<PointCloud> = train.iter().map(|s| s.gt.clone()).collect();
    let opts = TrainOptions {
        abort_dir: Some(ctx.out_dir.clone()),
        ..TrainOptions::default()
    };
    let run = train_completion(&ctx.cfg, &inputs, &targets, ctx.cfg.preset.completion(), &opts)?;
    let pipeline = Pipeline {
        predictor,
        completion: run.net,
        slices,
    };
    let path = ctx.out(PIPELINE_FILE)?;
    pipeline.save(&path)?;
    write_completion_curve(&ctx.out("completion_curve.csv")?, &run.curve)?;
    let cd = run.curve.last().map_or(f64::NAN, |r| r.cd);
    Ok(format!("{} steps, last epoch cd {cd}; checkpoint {}", run.steps, path.display()))
}

pub fn eval_cmd(ctx: &Context) -> Result<String> {
    let samples = ctx.dataset()?;
    let eval = ctx.split(&samples, ctx.cfg.eval_split)?;
    let pipeline = Pipeline::load(&ctx.ckpt_or(PIPELINE_FILE))?;
    let report = evaluate(&pipeline, &eval)?;
    write_jsonl(&ctx.out("metrics.jsonl")?, &report)?;
    let table = Table {
        title: "Evaluation, CD(x10^-1)".into(),
        rows: vec![TableRow {
            variant: "checkpoint".into(),
            epoch: ctx.cfg.completion_epochs,
            cd: report.mean_cd,
            paper_cd_x10: None,
            note: format!("std {}", report.std_cd),
        }],
    };
    table.write_csv(&ctx.out("eval.csv")?)?;
    Ok(format!(
        "{} samples: mean cd {} (x10 {}), std {}",
        report.samples.len(),
        report.mean_cd,
        report.mean_cd_x10(),
        report.std_cd
    ))
}

pub fn ablate(ctx: &Context) -> Result<String> {
    let samples = ctx.dataset()?;
    let variants = AblationVariant::parse_all(&ctx.cfg.variants)?;
    let table = run_ablation(&variants, &ctx.cfg, &samples)?;
    table.write_csv(&ctx.out("ablation.csv")?)?;
    let text: String = paper_tables(&table).iter().map(|t| t.render() + "\n").collect();
    write_text(&ctx.out("ablation.txt")?, &text)?;
    Ok(text)
}

pub fn robust_points(ctx: &Context) -> Result<String> {
    let samples = ctx.dataset()?;
    let eval = ctx.split(&samples, ctx.cfg.eval_split)?;
    let pipeline = Pipeline::load(&ctx.ckpt_or(PIPELINE_FILE))?;
    let table = robustness_points(&ctx.cfg, &pipeline, ctx.cfg.completion_epochs, &eval)?;
    table.write_csv(&ctx.out("robust_points.csv")?)?;
    Ok(table.render())
}

pub fn robust_slices(ctx: &Context) -> Result<String> {
    let samples = ctx.dataset()?;
    let table = robustness_slices(&ctx.cfg, &samples)?;
    table.write_csv(&ctx.out("robust_slices.csv")?)?;
    Ok(table.render())
}

/// Trains every configured variant, pre-trains the classifier on ground
/// truth versus mid-training generations, and scores final generations.
pub fn classify(ctx: &Context) -> Result<String> {
    let samples = ctx.dataset()?;
    let train = ctx.split(&samples, EvalSplit::Train)?;
    let eval = ctx.split(&samples, ctx.cfg.eval_split)?;
    let variants = AblationVariant::parse_all(&ctx.cfg.variants)?;
    let mut trainer = Trainer::new(&ctx.cfg, &samples)?;
    let real: Vec<PointCloud> = train.iter().map(|s| s.gt.clone()).collect();
    let mut fake = Vec::new();
    let mut generations = Vec::new();
    for &v in &variants {
        let mid = trainer.mid_pipeline(v)?;
        for s in &train {
            fake.push(mid.run(s)?);
        }
        let last = trainer.pipeline(v, ctx.cfg.completion_epochs)?;
        let clouds = eval.iter().map(|s| last.run(s)).collect::<Result<Vec<_>>>()?;
        generations.push((v.to_string(), clouds));
    }
    let scores = classify_experiment(&ctx.cfg, &real, &fake, &generations)?;
    let path = ctx.out("classify.csv")?;
    let mut w = csv::Writer::from_path(&path).map_err(|e| crate::train::csv_error(&path, e))?;
    w.write_record(["variant", "mean_true_score"])
        .map_err(|e| crate::train::csv_error(&path, e))?;
    let mut text = String::new();
    for (name, score) in &scores {
        w.write_record([name.clone(), score.to_string()])
            .map_err(|e| crate::train::csv_error(&path, e))?;
        text.push_str(&format!("{name:<20} {score:.4}\n"));
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(text)
}

pub fn heatmap(ctx: &Context) -> Result<String> {
    let samples = ctx.dataset()?;
    let eval = ctx.split(&samples, ctx.cfg.eval_split)?;
    let pipeline = Pipeline::load(&ctx.ckpt_or(PIPELINE_FILE))?;
    let dir = ctx.out("heatmaps")?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for s in &eval {
        let pred = pipeline.run(s)?;
        export_heatmap(&pred, &s.gt, &dir.join(format!("{}.ply", s.id)))?;
    }
    Ok(format!("wrote {} heatmaps to {}", eval.len(), dir.display()))
}
