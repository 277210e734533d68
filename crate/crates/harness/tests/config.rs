use hspn_core::Error;
use hspn_harness::config::{EvalSplit, Preset, TrainConfig};

#[test]
fn defaults_follow_the_published_hyperparameters() {
    let c = TrainConfig::default();
    assert_eq!((c.lambda1, c.lambda3, c.lambda4, c.lambda_gp), (0.1, 1.0, 0.05, 10.0));
    assert_eq!((c.lambda2_start, c.lambda2_end), (0.1, 1.0));
    assert_eq!(c.lr, 1e-4);
    assert_eq!(c.batch, 8);
    assert_eq!(c.n_critic, 5);
    assert_eq!(c.samples, 200);
    assert_eq!(c.variants.len(), 9);
}

#[test]
fn lambda2_ramps_linearly_per_epoch() {
    let c = TrainConfig {
        epochs: 11,
        ..TrainConfig::default()
    };
    assert_eq!(c.lambda2(0), 0.1);
    assert!((c.lambda2(5) - 0.55).abs() < 1e-12);
    assert_eq!(c.lambda2(10), 1.0);
    assert_eq!(c.lambda2(50), 1.0);
    let one = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    assert_eq!(one.lambda2(0), 0.1);
}

#[test]
fn text_format_overrides_defaults() {
    let c = TrainConfig::parse_str(
        "# smoke\nepochs = 3\npreset = compact # narrow\ncheckpoints = 1, 2\neval_split = all\nmax_steps = 7\n",
    )
    .unwrap();
    assert_eq!(c.epochs, 3);
    assert_eq!(c.preset, Preset::Compact);
    assert_eq!(c.checkpoints, vec![1, 2]);
    assert_eq!(c.eval_split, EvalSplit::All);
    assert_eq!(c.max_steps, Some(7));
    assert_eq!(c.lr, 1e-4);
}

#[test]
fn bad_settings_are_rejected() {
    for text in ["nope = 1", "epochs = x", "epochs", "preset = huge", "input_slices = 2", "batch = 0"] {
        assert!(
            matches!(TrainConfig::parse_str(text), Err(Error::InvalidArgument(_))),
            "{text}"
        );
    }
    let missing = TrainConfig::load(std::path::Path::new("/nonexistent/hspn.cfg"));
    assert!(matches!(missing, Err(Error::NotFound(_))));
}
