use hspn_core::autograd::{check, Array, Tape, Var};
use hspn_core::geometry::{sq_dist, Point, PointCloud};
use hspn_core::nn::{ParamStore, SeededRng};
use hspn_core::sampling::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

fn random_cloud(rng: &mut SeededRng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect(),
    )
    .unwrap()
}

/// Recomputes every candidate's distance to the whole chosen set each round.
fn greedy_oracle(pts: &[Point], m: usize, seed: usize) -> Vec<usize> {
    let mut chosen = vec![seed];
    while chosen.len() < m {
        let mut best = (usize::MAX, -1.0);
        for (i, &p) in pts.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| sq_dist(p, pts[c]))
                .fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (i, d);
            }
        }
        chosen.push(best.0);
    }
    chosen
}

fn covering_radius(pts: &[Point], chosen: &[usize]) -> f64 {
    pts.iter()
        .map(|&p| {
            chosen
                .iter()
                .map(|&c| sq_dist(p, pts[c]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[test]
fn fps_matches_brute_force_greedy() {
    let mut rng = SeededRng::seed_from_u64(10);
    for trial in 0..20 {
        let c = random_cloud(&mut rng, 64);
        let seed = trial % 64;
        let got = farthest_point_sample(&c, 8, seed).unwrap();
        assert_eq!(got, greedy_oracle(c.points(), 8, seed));
    }
}

#[test]
fn ball_query_matches_radius_filter() {
    let mut rng = SeededRng::seed_from_u64(11);
    for _ in 0..10 {
        let cloud = random_cloud(&mut rng, 100);
        let centers = random_cloud(&mut rng, 12);
        let spec = GroupingSpec::new(12, 0.3, 200, vec![4]);
        let groups = ball_query(&centers, &cloud, &spec);
        for (g, &c) in groups.iter().zip(centers.points()) {
            assert_eq!(g.len(), 200);
            let mut expect: Vec<usize> = (0..100)
                .filter(|&i| sq_dist(cloud.points()[i], c) <= 0.09)
                .collect();
            let mut got: Vec<usize> = g.clone();
            got.sort();
            got.dedup();
            if expect.is_empty() {
                let nearest = (0..100)
                    .min_by(|&a, &b| {
                        sq_dist(cloud.points()[a], c)
                            .partial_cmp(&sq_dist(cloud.points()[b], c))
                            .unwrap()
                    })
                    .unwrap();
                expect.push(nearest);
            }
            assert_eq!(got, expect);
        }
    }
}

#[test]
fn ball_query_trivial_radii() {
    let mut rng = SeededRng::seed_from_u64(12);
    let cloud = random_cloud(&mut rng, 30);
    let wide = GroupingSpec::new(30, 10.0, 30, vec![4]);
    for g in ball_query(&cloud, &cloud, &wide) {
        let mut g = g.clone();
        g.sort();
        assert_eq!(g, (0..30).collect::<Vec<_>>());
    }
    let tight = GroupingSpec::new(30, 1e-12, 5, vec![4]);
    for (i, g) in ball_query(&cloud, &cloud, &tight).iter().enumerate() {
        assert!(g.iter().all(|&j| j == i));
    }
}

#[test]
fn zero_radius_keeps_every_point() {
    let mut rng = SeededRng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let spec = GroupingSpec::new(20, 1e-12, 4, vec![5]);
    let layer = SetAbstraction::new(&mut store, &mut rng, "sa", spec, 2);
    let cloud = random_cloud(&mut rng, 20);
    let feats = Array::from_elem((20, 2), 0.7);
    let input = FeaturedCloud::new(cloud.to_array(), feats).unwrap();
    let out = set_abstraction(&input, &layer, &store, 0).unwrap();

    let mut got: Vec<Vec<f64>> = out.points().rows().into_iter().map(|r| r.to_vec()).collect();
    let mut want: Vec<Vec<f64>> = input.points().rows().into_iter().map(|r| r.to_vec()).collect();
    got.sort_by(|a, b| a.partial_cmp(b).unwrap());
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(got, want);

    // Each group is the center alone, so every row is the map of [0, 0, 0, 0.7, 0.7].
    let tape = Tape::new();
    let p = store.bind(&tape);
    let x = tape.constant(Array::from_shape_vec((1, 5), vec![0.0, 0.0, 0.0, 0.7, 0.7]).unwrap());
    let expect = layer.mlp.forward(&p, x).value();
    for row in out.features().rows() {
        for (a, b) in row.iter().zip(expect.iter()) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn set_abstraction_gradients_match_finite_differences() {
    let mut rng = SeededRng::seed_from_u64(14);
    for _ in 0..3 {
        let mut store = ParamStore::new();
        let spec = GroupingSpec::new(6, 0.5, 5, vec![8, 6]);
        let layer = SetAbstraction::new(&mut store, &mut rng, "sa", spec, 2);
        let pts = random_cloud(&mut rng, 24).to_array();
        let feats = Array::from_shape_fn((24, 2), |_| rng.random_range(-1.0..1.0));
        let weights = Array::from_shape_fn((6, 6), |_| rng.random_range(-1.0..1.0));
        let res = check::check_gradients(
            |tape, x| {
                let p = store.bind(tape);
                let out = layer.forward(&p, x[0], Some(x[1]), 0).unwrap();
                (out.features * tape.constant(weights.clone())).sum()
            },
            &[pts, feats],
            check::FD_STEP,
        );
        assert!(res.max_rel_err <= 1e-4, "{}", res.max_rel_err);
    }
}

#[test]
fn pooling_ignores_order_within_groups() {
    let mut rng = SeededRng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let spec = GroupingSpec::new(8, 0.4, 6, vec![16, 8]);
    let layer = SetAbstraction::new(&mut store, &mut rng, "sa", spec, 0);
    let cloud = random_cloud(&mut rng, 50);
    let centers = cloud.select(&farthest_point_sample(&cloud, 8, 0).unwrap()).unwrap();
    let mut groups = ball_query(&centers, &cloud, &layer.spec);
    let run = |groups: &[Vec<usize>]| {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let pts = tape.constant(cloud.to_array());
        let ctr = tape.constant(centers.to_array());
        let out: Var = group_and_pool(pts, None, ctr, groups, &layer.mlp, &p);
        (*out.value()).clone()
    };
    let before = run(&groups);
    for _ in 0..5 {
        for g in &mut groups {
            g.shuffle(&mut rng);
        }
        assert_eq!(run(&groups), before);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fps_indices_distinct_and_radius_non_increasing(seed in any::<u64>(), n in 2usize..80) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let c = random_cloud(&mut rng, n);
        let s = rng.random_range(0..n);
        let full = farthest_point_sample(&c, n, s).unwrap();
        let mut sorted = full.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), n);
        let mut prev = f64::INFINITY;
        for m in 1..=n.min(16) {
            let prefix = farthest_point_sample(&c, m, s).unwrap();
            prop_assert_eq!(&prefix[..], &full[..m]);
            let r = covering_radius(c.points(), &prefix);
            prop_assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn ball_query_respects_radius(seed in any::<u64>(), radius in 0.01f64..1.0) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, 40);
        let centers = random_cloud(&mut rng, 5);
        let spec = GroupingSpec::new(5, radius, 8, vec![4]);
        for (g, &c) in ball_query(&centers, &cloud, &spec).iter().zip(centers.points()) {
            prop_assert_eq!(g.len(), 8);
            let far = g.iter().any(|&j| sq_dist(cloud.points()[j], c) > radius * radius);
            if far {
                // Only the single-nearest fallback may lie outside.
                prop_assert!(g.iter().all(|&j| j == g[0]));
            }
        }
    }
}
