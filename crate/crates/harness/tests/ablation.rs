use hspn_core::completion::Architecture;
use hspn_core::synthdata::{generate_dataset, SyntheticSample};
use hspn_core::Error;
use hspn_harness::ablation::*;
use hspn_harness::config::{EvalSplit, Preset, TrainConfig};
use hspn_harness::eval::evaluate;

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        preset: Preset::Compact,
        epochs: 1,
        completion_epochs: 2,
        emd_points: 64,
        eval_split: EvalSplit::All,
        ..TrainConfig::default()
    }
}

fn data() -> Vec<SyntheticSample> {
    generate_dataset(7, 8, 3).unwrap()
}

#[test]
fn tags_parse_and_print_back() {
    for tag in TABLE_VARIANTS.iter().copied().chain(["points_256", "slices_5"]) {
        let v: AblationVariant = tag.parse().unwrap();
        assert_eq!(v.to_string(), tag);
    }
    for bad in ["", "fuul", "points_", "points_0", "points_4096", "slices_2", "slices_x"] {
        assert!(matches!(bad.parse::<AblationVariant>(), Err(Error::InvalidArgument(_))), "{bad}");
    }
}

#[test]
fn agb_grid_matches_the_four_on_off_rows() {
    let cfg = TrainConfig::default();
    let flags = |t: &str| {
        let c = t.parse::<AblationVariant>().unwrap().completion_config(&cfg);
        (c.pipeline_agb, c.self_agb)
    };
    assert_eq!(flags("no_agb_all"), (false, false));
    assert_eq!(flags("no_agb_pipeline"), (false, true));
    assert_eq!(flags("no_agb_self"), (true, false));
    assert_eq!(flags("full"), (true, true));
    let arch = |t: &str| t.parse::<AblationVariant>().unwrap().completion_config(&cfg).architecture;
    assert_eq!(arch("fc_decoder"), Architecture::FcDecoder);
    assert_eq!(arch("foldingnet_like"), Architecture::FoldingLike);
    assert_eq!(arch("topnet_like"), Architecture::TopNetLike);
    assert!(AblationVariant::TopNetLike.is_approximation());
    assert!(!AblationVariant::FcDecoder.is_approximation());
}

#[test]
fn predictor_variants() {
    let cfg = TrainConfig::default();
    let full = AblationVariant::Full.predictor_key(&cfg);
    assert!(full.critic);
    assert!(!AblationVariant::NoD.predictor_key(&cfg).critic);
    assert_eq!(AblationVariant::FcDecoder.predictor_key(&cfg), full);
    assert_eq!(AblationVariant::Slices(5).predictor_key(&cfg).slices, 5);
}

#[test]
fn reference_values_are_placed_proportionally() {
    use AblationVariant::*;
    assert_eq!(Full.paper_cd_x10(10, 10), Some(4.461));
    assert_eq!(Full.paper_cd_x10(5, 10), Some(4.741));
    assert_eq!(Full.paper_cd_x10(3, 4), Some(4.406));
    assert_eq!(Full.paper_cd_x10(3, 10), None);
    assert_eq!(NoD.paper_cd_x10(1, 1), Some(5.309));
    assert_eq!(PointOutNetLike.paper_cd_x10(1, 1), Some(5.492));
    assert_eq!(NoD.paper_cd_x10(1, 2), None);
    assert_eq!(NoAgbSelf.paper_cd_x10(2, 2), Some(5.178));
    assert_eq!(Points(1024).paper_cd_x10(1, 1), Some(4.655));
    assert_eq!(Slices(5).paper_cd_x10(1, 1), Some(4.285));
}

#[test]
fn two_variants_give_a_two_row_table_per_checkpoint() {
    let cfg = TrainConfig {
        checkpoints: vec![1, 2],
        ..tiny_cfg()
    };
    let s = data();
    let t = run_ablation(&[AblationVariant::Full, AblationVariant::NoD], &cfg, &s).unwrap();
    let cells: Vec<(&str, usize)> = t.rows.iter().map(|r| (r.variant.as_str(), r.epoch)).collect();
    assert_eq!(cells, vec![("full", 1), ("full", 2), ("no_d", 1), ("no_d", 2)]);
    assert_eq!(t.rows[1].paper_cd_x10, Some(4.461));
    assert_eq!(t.rows[0].paper_cd_x10, Some(4.741));
    assert_eq!(t.rows[3].paper_cd_x10, Some(5.309));
    assert!(t.rows.iter().all(|r| r.cd.is_finite() && r.cd > 0.0));
    let rendered = t.render();
    assert_eq!(rendered.lines().count(), 4);
    let groups = paper_tables(&t);
    assert_eq!(groups.len(), 1);
    assert!(groups[0].title.starts_with("Table I "));
}

#[test]
fn point_robustness_subsamples_reproducibly() {
    let cfg = tiny_cfg();
    let s = data();
    let mut trainer = Trainer::new(&cfg, &s).unwrap();
    let pipe = trainer.pipeline(AblationVariant::Full, 2).unwrap();
    let full = evaluate(&pipe, &s).unwrap();
    let same = evaluate_points(&pipe, &s, 2048, 3).unwrap();
    assert_eq!(full, same);
    let a = evaluate_points(&pipe, &s, 256, 3).unwrap();
    let b = evaluate_points(&pipe, &s, 256, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.mean_cd, full.mean_cd);
    let t = robustness_points(&cfg, &pipe, 2, &s).unwrap();
    let names: Vec<&str> = t.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["points_2048", "points_1024", "points_512", "points_256"]);
    assert_eq!(t.rows[0].cd, full.mean_cd);
    assert_eq!(t.rows[3].paper_cd_x10, Some(5.178));
}

#[test]
fn slice_robustness_runs_every_count_under_one_seed() {
    let cfg = TrainConfig {
        slice_counts: vec![1, 3],
        completion_epochs: 1,
        ..tiny_cfg()
    };
    let s = data();
    let t = robustness_slices(&cfg, &s).unwrap();
    assert_eq!(t.rows.len(), 2);
    assert_eq!(t.rows[1].variant, "slices_3");

    let base = run_ablation(&[AblationVariant::Full], &cfg, &s).unwrap();
    assert_eq!(base.rows[0].cd, t.rows[0].cd);
}

#[test]
fn unknown_tags_and_empty_splits_fail() {
    let cfg = TrainConfig {
        variants: vec!["full".into(), "bogus".into()],
        ..tiny_cfg()
    };
    assert!(AblationVariant::parse_all(&cfg.variants).is_err());
    let s = data();
    let test_only: Vec<SyntheticSample> = s.iter().filter(|x| x.split == hspn_core::synthdata::Split::Test).cloned().collect();
    assert!(Trainer::new(&cfg, &test_only).is_err());
}
