use hspn_core::geometry::{chamfer, PointCloud};
use hspn_core::nn::SeededRng;
use hspn_harness::eval::*;
use rand::{Rng, SeedableRng};
use tempfile::tempdir;

fn random_cloud(rng: &mut SeededRng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()).unwrap()
}

#[test]
fn oracle_prediction_scores_zero() {
    let mut rng = SeededRng::seed_from_u64(1);
    let gts: Vec<PointCloud> = (0..4).map(|_| random_cloud(&mut rng, 100)).collect();
    let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
    let r = score_predictions(&ids, &gts, &gts).unwrap();
    assert_eq!(r.mean_cd, 0.0);
    assert_eq!(r.std_cd, 0.0);
    assert!(r.samples.iter().all(|s| s.pc_to_pc.iter().all(|&e| e == 0.0)));
}

#[test]
fn aggregate_is_the_mean_of_independent_chamfer_values() {
    let mut rng = SeededRng::seed_from_u64(2);
    let preds: Vec<PointCloud> = (0..6).map(|_| random_cloud(&mut rng, 80)).collect();
    let gts: Vec<PointCloud> = (0..6).map(|_| random_cloud(&mut rng, 90)).collect();
    let ids: Vec<String> = (0..6).map(|i| i.to_string()).collect();
    let r = score_predictions(&ids, &preds, &gts).unwrap();
    let direct: Vec<f64> = preds.iter().zip(&gts).map(|(p, g)| chamfer(p, g)).collect();
    let mean = direct.iter().sum::<f64>() / 6.0;
    assert!((r.mean_cd - mean).abs() < 1e-9);
    assert!((r.mean_cd_x10() - 10.0 * mean).abs() < 1e-9);
    for (s, d) in r.samples.iter().zip(&direct) {
        assert_eq!(s.cd, *d);
        assert_eq!(s.pc_to_pc.len(), 80);
    }
    assert!(score_predictions(&ids[..2], &preds, &gts).is_err());
    assert!(score_predictions(&[], &[], &[]).is_err());
}

#[test]
fn reports_and_tables_are_written() {
    let dir = tempdir().unwrap();
    let mut rng = SeededRng::seed_from_u64(3);
    let a = random_cloud(&mut rng, 10);
    let b = random_cloud(&mut rng, 10);
    let r = score_predictions(&["x".into()], &[a], &[b]).unwrap();
    let jl = dir.path().join("m.jsonl");
    write_jsonl(&jl, &r).unwrap();
    let text = std::fs::read_to_string(&jl).unwrap();
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["id"], "x");
    assert_eq!(v["cd"].as_f64().unwrap(), r.samples[0].cd);

    let table = Table {
        title: "t".into(),
        rows: vec![
            TableRow {
                variant: "full".into(),
                epoch: 2,
                cd: 0.4461,
                paper_cd_x10: Some(4.461),
                note: "Table I".into(),
            },
            TableRow {
                variant: "no_d".into(),
                epoch: 2,
                cd: 0.5,
                paper_cd_x10: None,
                note: String::new(),
            },
        ],
    };
    let csv = dir.path().join("t.csv");
    table.write_csv(&csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("variant,cd_x10,epoch"));
    assert!(lines.next().unwrap().starts_with("full,4.461,2,0.4461,[PAPER] 4.461"));
    let rendered = table.render();
    assert!(rendered.contains("CD(x10^-1) @2"));
    assert!(rendered.contains("4.461 (Table I)"));
}
