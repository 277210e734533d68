use std::collections::HashSet;

use hspn_core::geometry::{normalize, PointCloud};
use hspn_core::predictor::{IMAGE_HEIGHT, IMAGE_WIDTH};
use hspn_core::synthdata::*;
use tempfile::tempdir;

fn key(p: &[f64; 3]) -> [u64; 3] {
    p.map(f64::to_bits)
}

#[test]
fn shapes_are_reproducible() {
    assert_eq!(make_shape(3), make_shape(3));
    assert_ne!(make_shape(3), make_shape(4));
}

#[test]
fn zero_amplitudes_give_an_ellipsoid() {
    let params = ShapeParams {
        axes: [0.8, 1.1, 0.7],
        amplitudes: vec![0.0; 12],
    };
    let raw = sample_surface(&params, 9);
    for p in raw.points() {
        let q: f64 = (0..3).map(|k| (p[k] / params.axes[k]).powi(2)).sum();
        assert!((q - 1.0).abs() < 1e-6, "{q}");
    }
    let norm = normalize(&raw);
    let shape = make_shape_with(&params, 9);
    for (a, b) in shape.points().iter().zip(norm.cloud.points()) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn samples_satisfy_invariants_over_200_seeds() {
    for seed in 0..200 {
        let s = generate_sample(seed, 1).unwrap();
        assert_eq!(s.gt.len(), 2048);
        let c = s.gt.centroid();
        assert!(c.iter().all(|x| x.abs() < 1e-6), "seed {seed}: centroid {c:?}");
        assert!((s.gt.max_norm() - 1.0).abs() < 1e-6, "seed {seed}");

        let gt: HashSet<[u64; 3]> = s.gt.points().iter().map(key).collect();
        assert!(s.partial.points().iter().all(|p| gt.contains(&key(p))));
        let removed = s.visible.iter().filter(|&&v| !v).count();
        assert_eq!(s.partial.len() + removed, 2048);
        let frac = removed as f64 / 2048.0;
        assert!((frac - s.occ.fraction).abs() <= 0.05, "seed {seed}");
        assert!((0.2..=0.4).contains(&s.occ.fraction));

        let img = s.image();
        assert_eq!(img.dim(), (IMAGE_HEIGHT, IMAGE_WIDTH));
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(img.iter().any(|&v| v > 0.0), "seed {seed}: blank image");
    }
}

#[test]
fn disabled_occlusion_keeps_everything() {
    let gt = make_shape(1);
    let (partial, mask) = make_occlusion(&gt, &OcclusionSpec::none()).unwrap();
    assert_eq!(partial, gt);
    assert!(mask.iter().all(|&m| m));
}

#[test]
fn occlusion_modes_remove_the_requested_fraction() {
    let gt = make_shape(2);
    for mode in [OcclusionMode::HalfSpaceCut, OcclusionMode::SphereCut, OcclusionMode::RectMask] {
        let occ = OcclusionSpec {
            mode,
            fraction: 0.3,
            seed: 5,
        };
        let (partial, mask) = make_occlusion(&gt, &occ).unwrap();
        assert_eq!(partial.len(), 2048 - 614, "{mode:?}");
        assert_eq!(mask.iter().filter(|&&m| m).count(), partial.len());
    }
    let bad = OcclusionSpec {
        mode: OcclusionMode::SphereCut,
        fraction: 1.5,
        seed: 0,
    };
    assert_eq!(make_occlusion(&gt, &bad).unwrap_err().kind(), "invalid-argument");
}

#[test]
fn half_space_through_centre_of_symmetric_cloud_removes_half() {
    let base = make_shape(6);
    let mut pts = base.points().to_vec();
    pts.extend(base.points().iter().map(|p| p.map(|x| -x)));
    let sym = PointCloud::new(pts).unwrap();
    for normal in [[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [0.0, 0.6, -0.8]] {
        let mask = cut_half_space(&sym, normal, 0.0);
        let removed = mask.iter().filter(|&&m| !m).count() as f64 / sym.len() as f64;
        assert!((removed - 0.5).abs() <= 0.05, "{removed}");
    }
}

#[test]
fn rendering_contracts() {
    let gt = make_shape(7);
    let all = vec![true; gt.len()];
    let plain = render_slice(&gt, &all, SlicePlane::axial()).unwrap();
    let (_, none_mask) = make_occlusion(&gt, &OcclusionSpec::none()).unwrap();
    assert_eq!(render_slice(&gt, &none_mask, SlicePlane::axial()).unwrap(), plain);
    assert_eq!(render_slice(&gt, &all, SlicePlane::axial()).unwrap(), plain);

    // Hide x > 0, which maps to the lower half of the image rows.
    let mask = cut_half_space(&gt, [1.0, 0.0, 0.0], 0.0);
    let cut = render_slice(&gt, &mask, SlicePlane::axial()).unwrap();
    let count = |img: &hspn_core::autograd::Array, rows: std::ops::Range<usize>| {
        rows.flat_map(|i| (0..IMAGE_WIDTH).map(move |j| (i, j)))
            .filter(|&(i, j)| img[[i, j]] > 0.0)
            .count()
    };
    let lower = IMAGE_HEIGHT / 2 + 1..IMAGE_HEIGHT;
    assert!(count(&cut, lower.clone()) < count(&plain, lower));
    assert!(cut.iter().zip(plain.iter()).all(|(c, p)| *c == 0.0 || c == p));

    let err = render_slice(&gt, &all, SlicePlane { axis: 2, offset: 5.0 }).unwrap_err();
    assert_eq!(err.kind(), "invalid-argument");
}

#[test]
fn slice_stacks_are_centred() {
    let s = generate_sample(11, 7).unwrap();
    assert_eq!(s.images.len(), 7);
    let single = generate_sample(11, 1).unwrap();
    assert_eq!(s.image(), single.image());
    assert_eq!(s.centered_slices(1).unwrap(), std::slice::from_ref(single.image()));
    assert_eq!(s.centered_slices(3).unwrap().len(), 3);
    assert!(s.centered_slices(2).is_err());
    assert!(s.centered_slices(9).is_err());
}

#[test]
fn split_is_a_function_of_the_seed() {
    let test = (0..1000).filter(|&s| split_of(s) == Split::Test).count();
    assert!((60..=140).contains(&test), "{test}");
    assert_eq!(split_of(17), split_of(17));
}

#[test]
fn dataset_round_trip() {
    let dir = tempdir().unwrap();
    let samples = generate_dataset(100, 10, 3).unwrap();
    write_dataset(&samples, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, samples);
}

#[test]
fn missing_sample_names_the_id() {
    let dir = tempdir().unwrap();
    let samples = generate_dataset(200, 2, 1).unwrap();
    write_dataset(&samples, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join(format!("{}.hspn", samples[1].id))).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert_eq!(err.kind(), "not-found");
    assert!(err.to_string().contains(&samples[1].id));
}

#[test]
fn corrupted_header_is_a_format_error() {
    let dir = tempdir().unwrap();
    let samples = generate_dataset(300, 1, 1).unwrap();
    write_dataset(&samples, dir.path()).unwrap();
    let path = dir.path().join(format!("{}.hspn", samples[0].id));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap_err().kind(), "format");
}
