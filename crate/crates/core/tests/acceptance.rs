//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use marginlab_core::autodiff::Graph;
use marginlab_core::data::{two_lines, Distribution};
use marginlab_core::experiment::sweep::{cell_name, expand_grid, run_sweep, SweepGrid, SUMMARY_FILE};
use marginlab_core::experiment::{execute, load_config_file, run_to_dir, ExperimentConfig, CRITIC_FILE, METRICS_FILE};
use marginlab_core::geometry::{margin_before, relativistic_paired_margin, NormOrder};
use marginlab_core::models::{load_critic, Activation, Bound, Critic, CriticModel, DiffModel, LinearModel, Mlp, SigmoidLinear};
use marginlab_core::objectives::{critic_loss, interpolate, ObjectiveF, PenaltyG, PenaltySpec, RelativisticMode};
use marginlab_core::oracles::{
    angle_between_degrees, brute_force_maxmin_margin, finite_diff_grad, lipschitz_quotient_max, project_to_boundary,
    ProjectionConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let spent = start.elapsed();
    check(spent <= limit, || format!("{what} took {spent:.1?}, limit {limit:?}"))
}

fn margin(model: &CriticModel, x: &[f64], y: f64, p: NormOrder) -> Result<f64, String> {
    let mut g = Graph::new();
    let b = Bound::register(&mut g, model).map_err(|e| e.to_string())?;
    margin_before(&mut g, &b, x, y, p).map(|m| m.value).map_err(|e| e.to_string())
}

fn criterion_1() -> Outcome {
    let best = SigmoidLinear::new(4.0, 0.0);
    let shifted = SigmoidLinear::new(4.0, -1.0);
    let fake = [-1.0, 0.3];
    let real = [1.0, -0.6];
    let g_best = best.input_grad(&fake)[0];
    let g_shift = shifted.input_grad(&fake)[0];
    let mut pair = [best.value(&fake), best.value(&real)];
    pair.sort_by(f64::total_cmp);
    check((g_best - 0.07).abs() <= 0.005, || format!("optimal-boundary gradient {g_best}"))?;
    check((g_shift - 0.03).abs() <= 0.005, || format!("shifted-boundary gradient {g_shift}"))?;
    check(
        (pair[0] - 0.02).abs() <= 0.005 && (pair[1] - 0.98).abs() <= 0.005,
        || format!("critic values {pair:?}"),
    )?;
    Ok(format!("gradients {g_best:.4} / {g_shift:.4}, values {{{:.4}, {:.4}}}", pair[0], pair[1]))
}

fn criterion_2() -> Outcome {
    let data = two_lines(500, &mut ChaCha8Rng::seed_from_u64(2)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for sign in [1.0, -1.0] {
        for _ in 0..10 {
            let w1 = sign * rng.random_range(0.05..10.0);
            let model = CriticModel::Linear(LinearModel::new(vec![w1, 0.0], 0.0));
            let mut total = 0.0;
            for label in [1.0, -1.0] {
                let class = data.class(label);
                let mut sum = 0.0;
                for x in &class {
                    sum += margin(&model, x, label, NormOrder::L2)?;
                }
                total += sum / class.len() as f64;
            }
            check(total == 2.0 * sign, || format!("w1 = {w1}: expected margin {total}"))?;
        }
    }
    Ok("exactly +2 for 10 positive and -2 for 10 negative w1".into())
}

const SHIFTS: [f64; 3] = [1.0, 2.0, 4.0];

fn shifted_config(shift: f64, g: PenaltyG) -> Result<ExperimentConfig, String> {
    let mut cfg = load_config_file(&configs_dir().join("shifted_gaussians.json")).map_err(|e| e.to_string())?;
    cfg.fake = Some(Distribution::Gaussian { mean: vec![shift], std: 0.1 });
    cfg.penalty.g = g;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn criterion_3(out: &Path) -> Outcome {
    let mut summary = Vec::new();
    for d in SHIFTS {
        let start = Instant::now();
        let cfg = shifted_config(d, PenaltyG::Hinge)?;
        let record = run_to_dir(&cfg, &out.join(format!("shift_{d}"))).map_err(|e| e.to_string())?;
        within_time(start, Duration::from_secs(60), &format!("d = {d}"))?;
        let logged: Vec<(usize, f64, f64)> = record
            .rows
            .iter()
            .filter_map(|r| Some((r.iter, r.heldout_ipm?, r.w1_exact?)))
            .collect();
        check(!logged.is_empty(), || format!("d = {d}: no W1 rows logged"))?;
        for &(iter, ipm, w1) in &logged {
            check(ipm <= 1.05 * w1, || format!("d = {d}, iter {iter}: objective {ipm} above W1 {w1} + 5%"))?;
        }
        let &(_, ipm, w1) = logged.last().expect("non-empty");
        let rel = (ipm - w1).abs() / w1;
        check(rel <= 0.10, || format!("d = {d}: final objective {ipm} vs W1 {w1} ({:.1}%)", 100.0 * rel))?;
        summary.push(format!("d={d}: {ipm:.3}/{w1:.3}"));
    }
    Ok(summary.join(", "))
}

fn heldout_points(shift: f64, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = Distribution::Gaussian { mean: vec![0.0], std: 0.1 };
    let fake = Distribution::Gaussian { mean: vec![shift], std: 0.1 };
    let r = (0..n).map(|_| real.sample(&mut rng)).collect();
    let f = (0..n).map(|_| fake.sample(&mut rng)).collect();
    (r, f)
}

fn criterion_4(out: &Path) -> Outcome {
    let mut summary = Vec::new();
    let start = Instant::now();
    for d in SHIFTS {
        let text = fs::read_to_string(out.join(format!("shift_{d}")).join(CRITIC_FILE)).map_err(|e| e.to_string())?;
        let critic = load_critic(&text).map_err(|e| e.to_string())?;
        // 142 points give 142·141/2 = 10011 pairs.
        let (r, f) = heldout_points(d, 71, 40);
        let samples: Vec<Vec<f64>> = r.into_iter().chain(f).collect();
        let q = lipschitz_quotient_max(&critic, &samples, NormOrder::L2).map_err(|e| e.to_string())?;
        check(q <= 1.05, || format!("d = {d}: Lipschitz quotient {q}"))?;
        summary.push(format!("d={d}: quotient {q:.4}"));
    }
    within_time(start, Duration::from_secs(10), "quotient estimation")?;
    let mut failures = Vec::new();
    for d in SHIFTS {
        let cfg = shifted_config(d, PenaltyG::Ls)?;
        let critic = execute(&cfg).map_err(|e| e.to_string())?.critic;
        let (r, f) = heldout_points(d, 1000, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut total = 0.0;
        for (a, b) in r.iter().zip(&f) {
            let x = interpolate(a, b, rng.random()).map_err(|e| e.to_string())?;
            total += critic.input_grad(&x)[0].abs();
        }
        let mean = total / r.len() as f64;
        if !(0.9..=1.1).contains(&mean) {
            failures.push(format!("d = {d}: LS mean gradient norm {mean:.4}"));
        }
        summary.push(format!("d={d}: LS mean |grad| {mean:.4}"));
    }
    if failures.is_empty() {
        Ok(summary.join(", "))
    } else {
        Err(format!("{} ({})", failures.join("; "), summary.join(", ")))
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ProjectionConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let w = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let lin = LinearModel::new(w, rng.random_range(-1.0..1.0));
        let model = CriticModel::Linear(lin.clone());
        for _ in 0..20 {
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let y = if lin.value(&x) >= 0.0 { 1.0 } else { -1.0 };
            for p in [NormOrder::L2, NormOrder::L1, NormOrder::Linf] {
                let formula = margin(&model, &x, y, p)?;
                let oracle = project_to_boundary(&lin, &x, p, &cfg, &mut rng).map_err(|e| e.to_string())?.distance;
                let rel = (formula - oracle).abs() / oracle.max(1e-12);
                check(rel <= 1e-4, || format!("{p} at {x:?}: formula {formula} vs projection {oracle}"))?;
                worst = worst.max(rel);
            }
        }
    }
    within_time(start, Duration::from_secs(60), "projection checks")?;
    Ok(format!("worst relative gap {worst:.2e} over 3000 comparisons"))
}

fn random_critic(rng: &mut ChaCha8Rng) -> CriticModel {
    match rng.random_range(0..3) {
        0 => CriticModel::Linear(LinearModel::init(2, rng).expect("dim 2")),
        1 => CriticModel::SigmoidLinear(SigmoidLinear::new(rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0))),
        _ => {
            let width = rng.random_range(2..=8);
            let depth = rng.random_range(1..=2);
            let mut dims = vec![2];
            dims.extend(std::iter::repeat_n(width, depth));
            dims.push(1);
            let act = if rng.random::<bool>() { Activation::Tanh } else { Activation::LeakyRelu(0.2) };
            CriticModel::Mlp(Mlp::init(&dims, act, Activation::Identity, 1.0, rng).expect("valid dims"))
        }
    }
}

fn batch(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| vec![rng.random_range(-1.0..1.0) + shift, rng.random_range(-1.0..1.0)])
        .collect()
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let norms = NormOrder::ALL;
    let gs = [PenaltyG::Ls, PenaltyG::Hinge, PenaltyG::Kkt];
    let modes = [RelativisticMode::None, RelativisticMode::Paired, RelativisticMode::Average];
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let model = random_critic(&mut rng);
        let n = rng.random_range(2..=6);
        let real = batch(&mut rng, n, 0.8);
        let fake = batch(&mut rng, n, -0.8);
        let f = ObjectiveF::ALL[rng.random_range(0..4)];
        let pen = PenaltySpec::new(norms[rng.random_range(0..4)], gs[rng.random_range(0..3)], rng.random_range(0.5..20.0));
        let mode = modes[rng.random_range(0..3)];
        let penalty_seed: u64 = rng.random();
        let loss_at = |params: &[f64]| -> f64 {
            let mut m = model.clone();
            m.set_flat_params(params).expect("same shape");
            let mut g = Graph::new();
            let b = Bound::register(&mut g, &m).expect("registers");
            let mut prng = ChaCha8Rng::seed_from_u64(penalty_seed);
            let t = critic_loss(&mut g, &b, &real, &fake, f, &pen, mode, &mut prng).expect("loss");
            g.scalar_value(t.loss).expect("scalar")
        };
        let mut g = Graph::new();
        let b = Bound::register(&mut g, &model).map_err(|e| e.to_string())?;
        let mut prng = ChaCha8Rng::seed_from_u64(penalty_seed);
        let t = critic_loss(&mut g, &b, &real, &fake, f, &pen, mode, &mut prng).map_err(|e| e.to_string())?;
        let grads = g.grad(t.loss, &b.params).map_err(|e| e.to_string())?;
        let ad = b.flat_grad(&g, &grads).map_err(|e| e.to_string())?;
        let fd = finite_diff_grad(loss_at, &model.flat_params(), 1e-6);
        let scale = fd.iter().chain(&ad).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let err = ad.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        check(err <= 1e-4, || {
            format!("case {case}: {f:?}/{:?}/{}/{mode:?} relative error {err:.2e}", pen.g, pen.grad_norm)
        })?;
        worst = worst.max(err);
    }
    within_time(start, Duration::from_secs(120), "gradient checks")?;
    Ok(format!("worst relative error {worst:.2e} over 100 configurations"))
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pen = PenaltySpec::new(NormOrder::L2, PenaltyG::Ls, 0.0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let model = random_critic(&mut rng);
        let n = rng.random_range(1..=16);
        let real = batch(&mut rng, n, 0.5);
        let fake = batch(&mut rng, n, -0.5);
        let value = |mode| -> Result<f64, String> {
            let mut g = Graph::new();
            let b = Bound::register(&mut g, &model).map_err(|e| e.to_string())?;
            let mut prng = ChaCha8Rng::seed_from_u64(0);
            let t = critic_loss(&mut g, &b, &real, &fake, ObjectiveF::Identity, &pen, mode, &mut prng)
                .map_err(|e| e.to_string())?;
            g.scalar_value(t.loss).map_err(|e| e.to_string())
        };
        let gap = (value(RelativisticMode::Average)? - value(RelativisticMode::None)?).abs();
        check(gap <= 1e-9, || format!("average vs plain objective differ by {gap:e}"))?;
        worst = worst.max(gap);
    }
    let mut paired_worst: f64 = 0.0;
    for _ in 0..100 {
        let model = CriticModel::Linear(LinearModel::init(2, &mut rng).map_err(|e| e.to_string())?);
        let x1 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let x2 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        for p in [NormOrder::L2, NormOrder::L1, NormOrder::Linf] {
            let mut g = Graph::new();
            let b = Bound::register(&mut g, &model).map_err(|e| e.to_string())?;
            let m = relativistic_paired_margin(&mut g, &b, &x1, &x2, p).map_err(|e| e.to_string())?;
            let gap = (m.exact.value - m.approximate.value).abs();
            check(gap <= 1e-9, || format!("{p}: paired forms differ by {gap:e}"))?;
            paired_worst = paired_worst.max(gap);
        }
    }
    Ok(format!("average-vs-plain gap {worst:.1e}, paired exact-vs-approximate gap {paired_worst:.1e}"))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = load_config_file(&configs_dir().join("blobs_mmc.json")).map_err(|e| e.to_string())?;
    let model = execute(&cfg).map_err(|e| e.to_string())?.critic;
    within_time(start, Duration::from_secs(30), "MMC training")?;
    let CriticModel::Linear(lin) = model else {
        return Err("blobs config must train a linear model".into());
    };
    let data = cfg.dataset.as_ref().expect("mmc config").generate(cfg.train.seed).map_err(|e| e.to_string())?;
    let sep = brute_force_maxmin_margin(&data).map_err(|e| e.to_string())?;
    let norm = lin.w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let angle = angle_between_degrees(&lin.w, &sep.normal());
    let offset = lin.b / norm;
    check(angle <= 5.0, || format!("direction off by {angle:.2}°"))?;
    check((offset - sep.offset).abs() <= 0.05, || format!("offset {offset:.4} vs {:.4}", sep.offset))?;
    Ok(format!("direction off by {angle:.3}°, offset {offset:.4} vs {:.4}", sep.offset))
}

fn ring_grid() -> Result<SweepGrid, String> {
    let text = fs::read_to_string(configs_dir().join("ring_grid.json")).map_err(|e| e.to_string())?;
    SweepGrid::from_json(&text).map_err(|e| e.to_string())
}

fn metrics_finite(path: &Path) -> bool {
    let Ok(text) = fs::read_to_string(path) else {
        return false;
    };
    let mut rows = text.lines().skip(1).peekable();
    rows.peek().is_some()
        && rows.all(|line| {
            line.split(',')
                .filter(|c| !c.is_empty())
                .all(|c| c.parse::<f64>().is_ok_and(f64::is_finite))
        })
}

fn criterion_9(out: &Path) -> Outcome {
    let start = Instant::now();
    let grid = ring_grid()?;
    let cells = expand_grid(&grid).map_err(|e| e.to_string())?.len();
    check(cells == 16, || format!("grid has {cells} cells"))?;
    let report = run_sweep(&grid, out, 4).map_err(|e| e.to_string())?;
    within_time(start, Duration::from_secs(30 * 60), "sweep")?;
    check(report.summary.exists(), || "summary.csv missing".into())?;
    let finite = (0..cells).filter(|&i| metrics_finite(&out.join(cell_name(i)).join(METRICS_FILE))).count();
    check(finite >= 14, || format!("only {finite}/16 cells have finite metrics"))?;
    Ok(format!("{finite}/16 cells finite, {} failed, {:.0?}", report.failed.len(), start.elapsed()))
}

fn same_bytes(a: &Path, b: &Path) -> Result<(), String> {
    let x = fs::read(a).map_err(|e| format!("{}: {e}", a.display()))?;
    let y = fs::read(b).map_err(|e| format!("{}: {e}", b.display()))?;
    check(x == y, || format!("{} differs between runs", a.display()))
}

fn criterion_10(first3: &Path, first9: &Path, root: &Path) -> Outcome {
    let again3 = root.join("rerun_3");
    for d in SHIFTS {
        let cfg = shifted_config(d, PenaltyG::Hinge)?;
        let dir = format!("shift_{d}");
        run_to_dir(&cfg, &again3.join(&dir)).map_err(|e| e.to_string())?;
        same_bytes(&first3.join(&dir).join(METRICS_FILE), &again3.join(&dir).join(METRICS_FILE))?;
    }
    let again9 = root.join("rerun_9");
    run_sweep(&ring_grid()?, &again9, 4).map_err(|e| e.to_string())?;
    for i in 0..16 {
        let rel = PathBuf::from(cell_name(i)).join(METRICS_FILE);
        same_bytes(&first9.join(&rel), &again9.join(&rel))?;
    }
    same_bytes(&first9.join(SUMMARY_FILE), &again9.join(SUMMARY_FILE))?;
    Ok("3 critic runs and 16 sweep cells reproduce byte for byte".into())
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let c3 = root.path().join("criterion_3");
    let c9 = root.path().join("criterion_9");
    let criteria: Vec<Criterion> = vec![
        ("two-lines gradients and values", Box::new(criterion_1)),
        ("two-lines expected margin", Box::new(criterion_2)),
        ("Wasserstein recovery", Box::new(|| criterion_3(&c3))),
        ("Lipschitz enforcement", Box::new(|| criterion_4(&c3))),
        ("margin formula vs projection", Box::new(criterion_5)),
        ("double-backprop gradients", Box::new(criterion_6)),
        ("relativistic identities", Box::new(criterion_7)),
        ("max-min margin recovery", Box::new(criterion_8)),
        ("ring sweep", Box::new(|| criterion_9(&c9))),
        ("determinism", Box::new(|| criterion_10(&c3, &c9, root.path()))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{took:.1?}]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} [{took:.1?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
