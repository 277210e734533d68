//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};

use hspn_core::autograd::{check, Array, Tape};
use hspn_core::completion::{agb, agb_var, AgbParams, CompletionConfig, CompletionNet};
use hspn_core::geometry::{chamfer, chamfer_var, emd_approx, emd_approx_var, emd_exact, PointCloud, SinkhornSettings};
use hspn_core::nn::{Bound, ParamStore, SeededRng};
use hspn_core::predictor::{
    branch, gcn_block, gradient_penalty_var, BranchParams, Critic, CriticConfig, GcnBlockParams, LatentCode, Predictor,
    PredictorConfig, TreeState, LAMBDA_GP,
};
use hspn_core::sampling::FeaturedCloud;
use hspn_core::synthdata::{generate_dataset, read_dataset, write_dataset};
use hspn_harness::ablation::TABLE_VARIANTS;
use hspn_harness::commands::{self, Context};
use hspn_harness::config::{EvalSplit, Preset, TrainConfig};
use hspn_harness::heatmap::{export_heatmap, parse_ply};
use hspn_harness::train::{cache_predictions, completion_cd, predictor_cd, train_completion, train_predictor, TrainOptions};

const EMD_DEFAULT_EPS: f64 = hspn_core::geometry::DEFAULT_EMD_EPSILON;
const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: u64 = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, took: Duration) -> bool {
    took <= limit
}

fn random_array(rng: &mut SeededRng, r: usize, c: usize) -> Array {
    Array::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn random_cloud(rng: &mut SeededRng, n: usize) -> PointCloud {
    PointCloud::from_array(&random_array(rng, n, 3)).unwrap()
}

fn metric_axioms() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::seed_from_u64(1);
    let mut failures = 0;
    for _ in 0..1000 {
        let (n, m) = (rng.random_range(16..=256), rng.random_range(16..=256));
        let a = random_cloud(&mut rng, n);
        let b = random_cloud(&mut rng, m);
        let mut idx: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let a_perm = a.select(&idx).unwrap();
        let ab = chamfer(&a, &b);
        let ok = ab == chamfer(&b, &a) && ab > 0.0 && chamfer(&a, &a) == 0.0 && chamfer(&a, &a_perm) == 0.0;
        failures += usize::from(!ok);
    }
    let took = start.elapsed();
    outcome(
        failures == 0 && within(Duration::from_secs(60), took),
        format!("1000 pairs, {failures} violations, {took:.1?} (limit 60s)"),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn emd_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::seed_from_u64(2);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let a = random_cloud(&mut rng, 64);
        let b = random_cloud(&mut rng, 64);
        let exact = emd_exact(&a, &b).unwrap().cost;
        let approx = emd_approx(&a, &b, EMD_DEFAULT_EPS).unwrap();
        worst_rel = worst_rel.max((approx - exact).abs() / exact);
    }
    let mut worst_abs: f64 = 0.0;
    for i in 0..20 {
        let n = 1 + i % 8;
        let a = random_cloud(&mut rng, n);
        let b = random_cloud(&mut rng, n);
        let brute = permutations(n)
            .iter()
            .map(|p| {
                (0..n)
                    .map(|k| {
                        let (x, y) = (a.points()[k], b.points()[p[k]]);
                        ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        worst_abs = worst_abs.max((emd_exact(&a, &b).unwrap().cost - brute).abs());
    }
    let took = start.elapsed();
    outcome(
        worst_rel <= 0.02 && worst_abs <= 1e-6 && within(Duration::from_secs(120), took),
        format!(
            "approx vs exact worst rel {worst_rel:.4} (limit 0.02) on 100×64; exact vs brute force worst {worst_abs:.1e} (limit 1e-6) on 20 pairs ≤8; {took:.1?} (limit 120s)"
        ),
    )
}

fn grad_chamfer(seed: u64) -> f64 {
    let mut rng = SeededRng::seed_from_u64(seed);
    let (n, m) = (rng.random_range(4..12), rng.random_range(4..12));
    let a = random_array(&mut rng, n, 3);
    let b = random_array(&mut rng, m, 3);
    check::check_gradients(|_, x| chamfer_var(x[0], x[1]), &[a, b], check::FD_STEP).max_rel_err
}

fn grad_emd(seed: u64) -> f64 {
    let mut rng = SeededRng::seed_from_u64(seed);
    let n = rng.random_range(4..12);
    let a = random_array(&mut rng, n, 3);
    let b = random_array(&mut rng, n, 3);
    let settings = SinkhornSettings::default();
    check::check_gradients(|_, x| emd_approx_var(x[0], x[1], &settings).unwrap(), &[a, b], check::FD_STEP)
        .max_rel_err
}

fn grad_gcn(seed: u64) -> f64 {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let b0 = BranchParams::new(&mut store, &mut rng, "b0", 3, 2);
    let b1 = BranchParams::new(&mut store, &mut rng, "b1", 3, 3);
    let block = GcnBlockParams::new(&mut store, &mut rng, "g", 3, 4, &[3, 3], 3, true);
    let root = random_array(&mut rng, 1, 3);
    let w = random_array(&mut rng, 6, 4);
    check::check_gradients(
        |tape, x| {
            let p = Bound::from_vars(x.to_vec());
            let mut s = TreeState::root(tape.constant(root.clone()));
            branch(&mut s, 0, &b0, &p).unwrap();
            branch(&mut s, 1, &b1, &p).unwrap();
            (gcn_block(&s, 2, &block, &p).unwrap() * tape.constant(w.clone())).sum()
        },
        &store.arrays(),
        check::FD_STEP,
    )
    .max_rel_err
}

fn grad_agb(seed: u64) -> f64 {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let params = AgbParams::new(&mut store, &mut rng, "agb", 3, 4, 4);
    let n = store.len();
    let mut inputs = store.arrays();
    inputs.push(random_array(&mut rng, 4, 3));
    inputs.push(random_array(&mut rng, 5, 4));
    let w = random_array(&mut rng, 4, 3);
    check::check_gradients(
        |tape, x| {
            let b = Bound::from_vars(x[..n].to_vec());
            let (out, _) = agb_var(x[n], Some(x[n + 1]), &params, &b).unwrap();
            (out * tape.constant(w.clone())).sum()
        },
        &inputs,
        check::FD_STEP,
    )
    .max_rel_err
}

fn small_critic(rng: &mut SeededRng, store: &mut ParamStore, points: usize) -> Critic {
    let cfg = CriticConfig {
        point_widths: vec![3, 6, 5],
        head_widths: vec![5, 4, 1],
        points,
    };
    Critic::new(store, rng, "c", cfg).unwrap()
}

fn grad_discriminate(seed: u64) -> f64 {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let critic = small_critic(&mut rng, &mut store, 10);
    let n = store.len();
    let mut inputs = store.arrays();
    inputs.push(random_array(&mut rng, 10, 3));
    check::check_gradients(
        |_, x| critic.forward(&Bound::from_vars(x[..n].to_vec()), x[n]).unwrap(),
        &inputs,
        check::FD_STEP,
    )
    .max_rel_err
}

fn grad_penalty(seed: u64) -> f64 {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let critic = small_critic(&mut rng, &mut store, 8);
    let t = rng.random_range(0.0..1.0);
    let n = store.len();
    let mut inputs = store.arrays();
    inputs.push(random_array(&mut rng, 8, 3));
    inputs.push(random_array(&mut rng, 8, 3));
    check::check_gradients(
        |_, x| {
            let p = Bound::from_vars(x[..n].to_vec());
            gradient_penalty_var(x[n], x[n + 1], t, |v| critic.forward(&p, v)).unwrap()
        },
        &inputs,
        check::FD_STEP,
    )
    .max_rel_err
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let suites: [(&str, fn(u64) -> f64); 6] = [
        ("chamfer", grad_chamfer),
        ("emd_approx", grad_emd),
        ("gcn_block", grad_gcn),
        ("agb", grad_agb),
        ("discriminate", grad_discriminate),
        ("gradient_penalty", grad_penalty),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, f) in suites {
        let worst = (0..GRAD_INSTANCES).map(|s| f(1000 + s)).fold(0.0, f64::max);
        pass &= worst <= GRAD_TOL;
        parts.push(format!("{name} {worst:.1e}"));
    }
    let took = start.elapsed();
    pass &= within(Duration::from_secs(120), took);
    outcome(
        pass,
        format!(
            "worst rel err over {GRAD_INSTANCES} instances each (limit {GRAD_TOL:.0e}): {}; {took:.1?} (limit 120s)",
            parts.join(", ")
        ),
    )
}

fn shape_contracts() -> Outcome {
    let mut rng = SeededRng::seed_from_u64(3);
    let predictor = Predictor::new(PredictorConfig::default(), &mut rng).unwrap();
    let z: Vec<f64> = (0..96).map(|_| rng.random_range(-1.0..1.0)).collect();
    let generated = predictor.generate(&LatentCode::mean(z, vec![0.0; 96]).unwrap()).unwrap().len();

    let net = CompletionNet::new(CompletionConfig::default(), &mut rng).unwrap();
    let completed: Vec<usize> = [256, 512, 1024, 2048]
        .iter()
        .map(|&n| net.complete(&random_cloud(&mut rng, n)).unwrap().len())
        .collect();
    let (global, skips) = net.encode_hierarchy(&random_cloud(&mut rng, 2048)).unwrap();

    let mut worst_row: f64 = 0.0;
    for _ in 0..200 {
        let (np, nq, w) = (rng.random_range(1..40), rng.random_range(1..40), rng.random_range(1..8));
        let mut store = ParamStore::new();
        let params = AgbParams::new(&mut store, &mut rng, "a", w, w, 4);
        let p = FeaturedCloud::new(random_array(&mut rng, np, 3), random_array(&mut rng, np, w) * 5.0).unwrap();
        let q = FeaturedCloud::new(random_array(&mut rng, nq, 3), random_array(&mut rng, nq, w) * 5.0).unwrap();
        worst_row = worst_row.max(agb(&p, Some(&q), &params, &store).unwrap().1.row_sum_error());
        worst_row = worst_row.max(agb(&p, None, &params, &store).unwrap().1.row_sum_error());
    }
    let pass = generated == 2048
        && completed.iter().all(|&n| n == 2048)
        && skips.len() == 2
        && !global.is_empty()
        && worst_row <= 1e-6;
    outcome(
        pass,
        format!(
            "generate {generated} points; complete from 256/512/1024/2048 gives {completed:?}; {} skips + global of {}; attention row-sum error {worst_row:.1e} (limit 1e-6)",
            skips.len(),
            global.len()
        ),
    )
}

fn wgan_gp() -> Outcome {
    let mut rng = SeededRng::seed_from_u64(4);
    let real = random_array(&mut rng, 16, 3);
    let fake = random_array(&mut rng, 16, 3);
    let mut w = random_array(&mut rng, 16, 3);
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w /= norm;
    let tape = Tape::new();
    let (r, f) = (tape.constant(real), tape.constant(fake));
    let linear = gradient_penalty_var(r, f, 0.3, |x| Ok((x * tape.constant(w.clone())).sum()))
        .unwrap()
        .item();
    let constant = gradient_penalty_var(r, f, 0.3, |x| Ok(x.sum() * 0.0 + 2.0)).unwrap().item();
    let default_gp = TrainConfig::default().lambda_gp;
    let pass = linear.abs() <= 1e-20 && constant == 1.0 && LAMBDA_GP == 10.0 && default_gp == 10.0;
    outcome(
        pass,
        format!("unit linear critic {linear:.1e}, constant critic {constant}, λ_gp default {default_gp}"),
    )
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let samples = generate_dataset(1000, 8, 1).unwrap();
    let cfg = TrainConfig {
        preset: Preset::Compact,
        lr: 1e-3,
        completion_lr: 1e-3,
        epochs: 200,
        completion_epochs: 100,
        emd_points: 128,
        ..TrainConfig::default()
    };
    let opts = TrainOptions::default();
    let untrained = TrainConfig {
        max_steps: Some(0),
        ..cfg.clone()
    };
    let p0 = train_predictor(&untrained, &samples, cfg.predictor_config(), &opts).unwrap();
    let p_init = predictor_cd(&p0.predictor, &samples).unwrap();
    let run = train_predictor(&cfg, &samples, cfg.predictor_config(), &opts).unwrap();
    let p_final = predictor_cd(&run.predictor, &samples).unwrap();

    let inputs = cache_predictions(&run.predictor, &samples).unwrap();
    let targets: Vec<PointCloud> = samples.iter().map(|s| s.gt.clone()).collect();
    let c0 = train_completion(&untrained, &inputs, &targets, cfg.preset.completion(), &opts).unwrap();
    let c_init = completion_cd(&c0.net, &inputs, &targets).unwrap();
    let crun = train_completion(&cfg, &inputs, &targets, cfg.preset.completion(), &opts).unwrap();
    let c_final = completion_cd(&crun.net, &inputs, &targets).unwrap();
    let took = start.elapsed();
    let pass = p_final < 0.1 * p_init
        && c_final < 0.1 * c_init
        && run.steps <= 500
        && crun.steps <= 500
        && within(Duration::from_secs(900), took);
    outcome(
        pass,
        format!(
            "predictor CD {p_init:.1} → {p_final:.1} ({:.1}%) in {} steps; completion CD {c_init:.1} → {c_final:.1} ({:.1}%) in {} steps; {took:.0?} (limit 900s)",
            100.0 * p_final / p_init,
            run.steps,
            100.0 * c_final / c_init,
            crun.steps
        ),
    )
}

fn smoke_context(dir: &std::path::Path) -> Context {
    let cfg = TrainConfig {
        samples: 8,
        epochs: 1,
        completion_epochs: 1,
        eval_split: EvalSplit::All,
        seed: 7,
        ..TrainConfig::default()
    };
    Context::new(cfg, dir)
}

/// Runs `ablate` twice from scratch; returns (first runtime, tables equal,
/// table text of the first run, row count).
fn ablate_twice() -> (Duration, bool, String, usize) {
    let mut outputs = Vec::new();
    let mut first = Duration::ZERO;
    for i in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let ctx = smoke_context(dir.path());
        let start = Instant::now();
        commands::datagen(&ctx).unwrap();
        let text = commands::ablate(&ctx).unwrap();
        if i == 0 {
            first = start.elapsed();
        }
        let csv = std::fs::read(dir.path().join("ablation.csv")).unwrap();
        let txt = std::fs::read(dir.path().join("ablation.txt")).unwrap();
        outputs.push((csv, txt, text));
    }
    let same = outputs[0].0 == outputs[1].0 && outputs[0].1 == outputs[1].1;
    let rows = String::from_utf8_lossy(&outputs[0].0).lines().count() - 1;
    (first, same, outputs.swap_remove(0).2, rows)
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let samples = generate_dataset(50, 6, 7).unwrap();
    write_dataset(&samples, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    let dataset_ok = back == samples;

    let mut rng = SeededRng::seed_from_u64(5);
    let pred = random_cloud(&mut rng, 2048);
    let gt = random_cloud(&mut rng, 2048);
    let path = dir.path().join("h.ply");
    export_heatmap(&pred, &gt, &path).unwrap();
    let parsed = parse_ply(&path).unwrap();
    let ply_ok = parsed.len() == pred.len() && parsed.iter().zip(pred.points()).all(|(v, p)| v.point == *p);
    outcome(
        dataset_ok && ply_ok,
        format!("dataset of {} samples equal after write/read: {dataset_ok}; 2048-vertex PLY coordinates exact: {ply_ok}", samples.len()),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("metric axioms", metric_axioms());
    report("EMD oracle equivalence", emd_oracle());
    report("gradient suite", gradient_suite());
    report("shape and cardinality contracts", shape_contracts());
    report("WGAN-GP sanity", wgan_gp());
    report("overfit sanity", overfit());

    let (took, same, text, rows) = ablate_twice();
    report(
        "determinism",
        outcome(same, format!("two ablate runs with identical config and seed: tables byte-identical = {same}")),
    );
    let annotated = ["4.461", "5.309", "5.492", "10.572", "9.863", "6.255", "4.958", "4.831", "5.178"]
        .iter()
        .all(|v| text.contains(v));
    let smoke_ok = rows == TABLE_VARIANTS.len() && annotated && within(Duration::from_secs(600), took);
    report(
        "ablation harness",
        outcome(
            smoke_ok,
            format!(
                "{rows} variant rows (expected {}), reference annotations present: {annotated}; {took:.0?} (limit 600s)",
                TABLE_VARIANTS.len()
            ),
        ),
    );
    println!("{text}");
    report("round trips", round_trips());

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
