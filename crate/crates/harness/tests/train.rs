use hspn_core::synthdata::{generate_dataset, SyntheticSample};
use hspn_core::Error;
use hspn_harness::config::{Preset, TrainConfig};
use hspn_harness::train::*;
use tempfile::tempdir;

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        preset: Preset::Compact,
        epochs: 1,
        completion_epochs: 1,
        emd_points: 64,
        ..TrainConfig::default()
    }
}

fn data() -> Vec<SyntheticSample> {
    generate_dataset(40, 8, 1).unwrap()
}

fn targets(s: &[SyntheticSample]) -> Vec<hspn_core::geometry::PointCloud> {
    s.iter().map(|x| x.gt.clone()).collect()
}

#[test]
fn one_epoch_smoke_run_logs_one_point_per_phase() {
    let cfg = tiny_cfg();
    let s = data();
    let p = train_predictor(&cfg, &s, cfg.predictor_config(), &TrainOptions::default()).unwrap();
    assert_eq!(p.curve.len(), 1);
    assert_eq!(p.steps, 1);
    let r = p.curve[0];
    assert!(r.g_loss.is_finite() && r.d_loss.is_finite() && r.cd > 0.0 && r.kl >= 0.0);
    assert_eq!(r.lambda2, 0.1);
    let inputs = cache_predictions(&p.predictor, &s).unwrap();
    assert!(inputs.iter().all(|c| c.len() == 2048));
    let c = train_completion(&cfg, &inputs, &targets(&s), cfg.preset.completion(), &TrainOptions::default()).unwrap();
    assert_eq!(c.curve.len(), 1);
    assert!(c.curve[0].loss >= c.curve[0].cd);
}

#[test]
fn fixed_seed_gives_bit_identical_curves() {
    let cfg = TrainConfig {
        epochs: 2,
        batch: 4,
        ..tiny_cfg()
    };
    let s = data();
    let run = || train_predictor(&cfg, &s, cfg.predictor_config(), &TrainOptions::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.curve.len(), 2);
    assert_eq!(a.steps, 4);
    let inputs = cache_predictions(&a.predictor, &s).unwrap();
    let crun = || train_completion(&cfg, &inputs, &targets(&s), cfg.preset.completion(), &TrainOptions::default()).unwrap();
    assert_eq!(crun().curve, crun().curve);

    let other = TrainConfig { seed: 1, ..cfg.clone() };
    let c = train_predictor(&other, &s, other.predictor_config(), &TrainOptions::default()).unwrap();
    assert_ne!(a.curve, c.curve);
}

#[test]
fn step_cap_and_snapshots() {
    let cfg = TrainConfig {
        epochs: 5,
        batch: 4,
        max_steps: Some(3),
        ..tiny_cfg()
    };
    let s = data();
    let opts = TrainOptions {
        snapshot_epochs: vec![1],
        ..TrainOptions::default()
    };
    let run = train_predictor(&cfg, &s, cfg.predictor_config(), &opts).unwrap();
    assert_eq!(run.steps, 3);
    assert_eq!(run.curve.len(), 2);
    assert_eq!(run.snapshots.len(), 1);
    assert_eq!(run.snapshots[0].0, 1);
}

#[test]
fn pipeline_checkpoint_reloads() {
    let dir = tempdir().unwrap();
    let cfg = tiny_cfg();
    let s = data();
    let p = train_predictor(&cfg, &s, cfg.predictor_config(), &TrainOptions::default()).unwrap();
    let inputs = cache_predictions(&p.predictor, &s).unwrap();
    let c = train_completion(&cfg, &inputs, &targets(&s), cfg.preset.completion(), &TrainOptions::default()).unwrap();
    let pipe = Pipeline {
        predictor: p.predictor,
        completion: c.net,
        slices: 1,
    };
    let path = dir.path().join("p.hspn");
    pipe.save(&path).unwrap();
    let back = Pipeline::load(&path).unwrap();
    assert_eq!(back.slices, 1);
    assert_eq!(back.run(&s[0]).unwrap(), pipe.run(&s[0]).unwrap());
}

#[test]
fn non_finite_loss_aborts_with_a_snapshot() {
    let dir = tempdir().unwrap();
    let cfg = TrainConfig {
        lambda1: f64::NAN,
        ..tiny_cfg()
    };
    let s = data();
    let opts = TrainOptions {
        abort_dir: Some(dir.path().to_path_buf()),
        ..TrainOptions::default()
    };
    let err = train_predictor(&cfg, &s, cfg.predictor_config(), &opts).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert!(dir.path().join("abort_snapshot.hspn").exists());
}

#[test]
fn curves_are_written_as_csv() {
    let dir = tempdir().unwrap();
    let cfg = tiny_cfg();
    let s = data();
    let p = train_predictor(&cfg, &s, cfg.predictor_config(), &TrainOptions::default()).unwrap();
    let path = dir.path().join("c.csv");
    write_predictor_curve(&path, &p.curve).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("epoch,lambda2,g_loss,d_loss,cd,kl"));
}

#[test]
fn empty_inputs_are_rejected() {
    let cfg = tiny_cfg();
    assert!(train_predictor(&cfg, &[], cfg.predictor_config(), &TrainOptions::default()).is_err());
    assert!(train_completion(&cfg, &[], &[], cfg.preset.completion(), &TrainOptions::default()).is_err());
}
