use hspn_core::geometry::{pc_to_pc_error, PointCloud};
use hspn_core::nn::SeededRng;
use hspn_harness::heatmap::*;
use rand::{Rng, SeedableRng};
use tempfile::tempdir;

fn random_cloud(rng: &mut SeededRng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()).unwrap()
}

#[test]
fn exact_prediction_is_all_zero_color() {
    let dir = tempdir().unwrap();
    let mut rng = SeededRng::seed_from_u64(1);
    let gt = random_cloud(&mut rng, 64);
    let path = dir.path().join("a.ply");
    let meta = export_heatmap(&gt, &gt, &path).unwrap();
    assert_eq!(meta.ramp_max, 0.0);
    let v = parse_ply(&path).unwrap();
    assert_eq!(v.len(), 64);
    assert!(v.iter().all(|x| x.color == ZERO_COLOR));
}

#[test]
fn ply_round_trip_and_ramp_ends() {
    let dir = tempdir().unwrap();
    let mut rng = SeededRng::seed_from_u64(2);
    let gt = random_cloud(&mut rng, 200);
    let pred = random_cloud(&mut rng, 150);
    let path = dir.path().join("b.ply");
    let meta = export_heatmap(&pred, &gt, &path).unwrap();
    let v = parse_ply(&path).unwrap();
    for (got, p) in v.iter().zip(pred.points()) {
        assert_eq!(got.point, *p);
    }
    let errors = pc_to_pc_error(&pred, &gt).errors;
    let worst = errors.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(v[worst].color, TOP_COLOR);
    assert_eq!(meta.max_error, errors[worst]);
    assert_eq!(read_meta(&path).unwrap(), meta);
    assert_eq!(meta.scale, 1e-4);
    for (x, e) in v.iter().zip(&errors) {
        assert_eq!(x.color, ramp_color(*e, meta.ramp_max));
    }
}

#[test]
fn ramp_is_linear_blue_to_red() {
    assert_eq!(ramp_color(0.0, 2.0), [0, 0, 255]);
    assert_eq!(ramp_color(1.0, 2.0), [128, 0, 127]);
    assert_eq!(ramp_color(2.0, 2.0), [255, 0, 0]);
    assert_eq!(ramp_color(5.0, 2.0), [255, 0, 0]);
    assert_eq!(ramp_color(5.0, 0.0), [0, 0, 255]);
}

#[test]
fn malformed_ply_is_a_format_error() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("c.ply");
    std::fs::write(&path, "ply\nformat ascii 1.0\nelement vertex 2\nend_header\n0 0 0 1 2 3\n").unwrap();
    assert!(matches!(parse_ply(&path), Err(hspn_core::Error::Format { .. })));
    std::fs::write(&path, "nope\n").unwrap();
    assert!(parse_ply(&path).is_err());
}
