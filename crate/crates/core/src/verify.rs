//! Self-check suite: every invariant with a cheap oracle, grouped by area.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, OpKind, Tensor};
use crate::data::{blobs_separable, gaussian_ring, latent_sampler, two_lines, DatasetSpec};
use crate::error::Result;
use crate::geometry::{dual_order, lp_norm, margin_before, smooth_max, NormOrder};
use crate::models::{load_critic, save_critic, Activation, Bound, Critic, CriticModel, LinearModel, Mlp, SigmoidLinear};
use crate::objectives::{
    apply_f, apply_f2, critic_loss, interpolate, ObjectiveF, PenaltyG, PenaltySpec, RelativisticMode,
};
use crate::oracles::{
    brute_force_maxmin_margin, exact_w1, lipschitz_quotient_max, project_to_boundary, ProjectionConfig,
};
use crate::training::{adam_step, train_mmc, AdamState, MmcSetup, OptimConfig, TrainConfig};

pub const GROUPS: [&str; 8] = [
    "autodiff",
    "geometry",
    "two-lines",
    "objectives",
    "models",
    "oracles",
    "data",
    "training",
];

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub group: &'static str,
    pub name: String,
    pub outcome: std::result::Result<(), String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }

    /// Fixed-width pass/fail table.
    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.group.len() + c.name.len() + 3).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let label = format!("{} / {}", c.group, c.name);
            match &c.outcome {
                Ok(()) => out.push_str(&format!("{label:<width$}  PASS\n")),
                Err(why) => out.push_str(&format!("{label:<width$}  FAIL  {why}\n")),
            }
        }
        let failed = self.failures().count();
        out.push_str(&format!("{} checks, {} failed\n", self.checks.len(), failed));
        out
    }
}

struct Suite {
    group: &'static str,
    checks: Vec<CheckResult>,
}

impl Suite {
    fn new(group: &'static str) -> Self {
        Suite { group, checks: Vec::new() }
    }

    fn check(&mut self, name: impl Into<String>, f: impl FnOnce() -> std::result::Result<(), String>) {
        let outcome = f();
        self.checks.push(CheckResult {
            group: self.group,
            name: name.into(),
            outcome,
        });
    }
}

fn near(what: &str, got: f64, want: f64, tol: f64) -> std::result::Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, want {want} ± {tol}"))
    }
}

fn holds(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Runs one group, or every group when `group` is `None`. Unknown names
/// yield `None`.
pub fn run(group: Option<&str>) -> Option<Report> {
    run_with_fault(group, None)
}

/// As [`run`], with one derivative rule deliberately corrupted in the
/// autodiff group.
pub fn run_with_fault(group: Option<&str>, fault: Option<OpKind>) -> Option<Report> {
    if let Some(g) = group {
        if !GROUPS.contains(&g) {
            return None;
        }
    }
    let selected = |g: &str| group.is_none_or(|s| s == g);
    let mut report = Report::default();
    let suites: [(&str, &dyn Fn() -> Suite); 8] = [
        ("autodiff", &|| autodiff_checks(fault)),
        ("geometry", &geometry_checks),
        ("two-lines", &two_lines_checks),
        ("objectives", &objective_checks),
        ("models", &model_checks),
        ("oracles", &oracle_checks),
        ("data", &data_checks),
        ("training", &training_checks),
    ];
    for (name, build) in suites {
        if selected(name) {
            report.checks.extend(build().checks);
        }
    }
    Some(report)
}

// ── autodiff ────────────────────────────────────────────────────────────

struct Case {
    graph: Graph,
    vars: Vec<NodeId>,
    output: NodeId,
}

/// A scalar function of three variables that exercises `op`.
fn op_case(op: OpKind, fault: Option<OpKind>) -> Result<Case> {
    let mut g = match fault {
        Some(f) => Graph::with_faulty_rule(f),
        None => Graph::new(),
    };
    let x = g.variable(Tensor::vector(vec![0.3, -0.7, 1.1]))?;
    let y = g.variable(Tensor::vector(vec![0.5, 0.2, -0.4]))?;
    let m = g.variable(Tensor::matrix(2, 3, vec![0.4, -0.3, 0.8, 0.1, 0.6, -0.5]))?;
    let square_sum = |g: &mut Graph, v: NodeId| -> Result<NodeId> {
        let s = g.mul(v, v)?;
        g.sum(s)
    };
    let out = match op {
        OpKind::Add => {
            let s = g.add(x, y)?;
            square_sum(&mut g, s)?
        }
        OpKind::Sub => {
            let s = g.sub(x, y)?;
            square_sum(&mut g, s)?
        }
        OpKind::Mul => {
            let a = g.mul(x, y)?;
            let b = g.mul(a, x)?;
            g.sum(b)?
        }
        OpKind::Div => {
            let sq = g.mul(y, y)?;
            let one = g.vector(vec![1.0; 3])?;
            let pos = g.add(sq, one)?;
            let q = g.div(x, pos)?;
            square_sum(&mut g, q)?
        }
        OpKind::Neg => {
            let n = g.neg(x)?;
            let p = g.mul(n, y)?;
            square_sum(&mut g, p)?
        }
        OpKind::MatVec => {
            let v = g.matvec(m, x)?;
            square_sum(&mut g, v)?
        }
        OpKind::Transpose => {
            let t = g.transpose(m)?;
            let c = g.constant(Tensor::vector(vec![0.7, -1.3]))?;
            let v = g.matvec(t, c)?;
            let p = g.mul(v, x)?;
            square_sum(&mut g, p)?
        }
        OpKind::Outer => {
            let o = g.outer(x, y)?;
            let v = g.matvec(o, x)?;
            square_sum(&mut g, v)?
        }
        OpKind::Sum => {
            let p = g.mul(x, y)?;
            let s = g.sum(p)?;
            g.mul(s, s)?
        }
        OpKind::Mean => {
            let p = g.mul(x, y)?;
            let s = g.mean(p)?;
            g.mul(s, s)?
        }
        OpKind::Index => {
            let p = g.mul(x, y)?;
            let i = g.index(p, 1)?;
            let sq = g.mul(i, i)?;
            g.mul(sq, i)?
        }
        OpKind::Exp => {
            let p = g.mul(x, y)?;
            let e = g.exp(p)?;
            g.sum(e)?
        }
        OpKind::Log => {
            let sq = g.mul(x, y)?;
            let sq = g.mul(sq, sq)?;
            let one = g.vector(vec![1.0; 3])?;
            let pos = g.add(sq, one)?;
            let l = g.log(pos)?;
            g.sum(l)?
        }
        OpKind::Abs => {
            let a = g.abs(x)?;
            let p = g.mul(a, y)?;
            square_sum(&mut g, p)?
        }
        OpKind::MaxReduce => {
            let p = g.mul(x, y)?;
            let mx = g.max_reduce(p)?;
            g.mul(mx, mx)?
        }
        OpKind::Power => {
            let sq = g.mul(x, y)?;
            let one = g.vector(vec![1.0; 3])?;
            let pos = g.add(sq, one)?;
            let p = g.power(pos, 2.5)?;
            g.sum(p)?
        }
        OpKind::Sigmoid => {
            let p = g.mul(x, y)?;
            let s = g.sigmoid(p)?;
            g.sum(s)?
        }
        OpKind::Tanh => {
            let p = g.mul(x, y)?;
            let t = g.tanh(p)?;
            g.sum(t)?
        }
        OpKind::LeakyRelu => {
            let l = g.leaky_relu(x, 0.2)?;
            let p = g.mul(l, y)?;
            square_sum(&mut g, p)?
        }
        other => unreachable!("{other} has no derivative rule"),
    };
    Ok(Case {
        graph: g,
        vars: vec![x, y, m],
        output: out,
    })
}

/// Compares `grad(output)` to central differences of a full forward
/// re-evaluation of the graph.
fn fd_compare(case: &mut Case, output: NodeId, what: &str) -> std::result::Result<(), String> {
    let grads = ok(case.graph.grad(output, &case.vars))?;
    let h = 1e-6;
    for &v in &case.vars {
        let gnode = grads.get(v).expect("requested");
        let ad = ok(case.graph.value(gnode))?.data().to_vec();
        let base = ok(case.graph.value(v))?.clone();
        for (j, &a) in ad.iter().enumerate() {
            let eval = |delta: f64| -> std::result::Result<f64, String> {
                let mut t = base.clone();
                t.data_mut()[j] += delta;
                let vals = ok(case.graph.forward(&HashMap::from([(v, t)])))?;
                Ok(vals[output.index()].item())
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let tol = 1e-5 * a.abs().max(fd.abs()).max(1.0);
            if (a - fd).abs() > tol {
                return Err(format!("{what}: variable {v}[{j}] autodiff {a} vs finite difference {fd}"));
            }
        }
    }
    Ok(())
}

fn autodiff_checks(fault: Option<OpKind>) -> Suite {
    let mut s = Suite::new("autodiff");
    s.check("sigmoid(0) = 0.5 and its slope is 0.25", || {
        let mut g = Graph::new();
        let x = ok(g.variable(Tensor::scalar(0.0)))?;
        let y = ok(g.sigmoid(x))?;
        let d = ok(g.grad(y, &[x]))?.get(x).expect("requested");
        near("value", ok(g.scalar_value(y))?, 0.5, 0.0)?;
        near("slope", ok(g.scalar_value(d))?, 0.25, 0.0)
    });
    for op in OpKind::DIFFERENTIABLE {
        s.check(format!("{op}: first derivative"), || {
            let mut case = ok(op_case(op, fault))?;
            let out = case.output;
            fd_compare(&mut case, out, op.name())
        });
        s.check(format!("{op}: second derivative"), || {
            let mut case = ok(op_case(op, fault))?;
            let grads = ok(case.graph.grad(case.output, &case.vars))?;
            let mut terms = Vec::new();
            for &v in &case.vars {
                let gv = grads.get(v).expect("requested");
                let sq = ok(case.graph.mul(gv, gv))?;
                terms.push(ok(case.graph.sum(sq))?);
            }
            let z = ok(case.graph.add_all(&terms))?;
            fd_compare(&mut case, z, op.name())
        });
    }
    s
}

// ── geometry ────────────────────────────────────────────────────────────

fn linear(w: &[f64], b: f64) -> CriticModel {
    CriticModel::Linear(LinearModel::new(w.to_vec(), b))
}

fn margin(model: &CriticModel, x: &[f64], y: f64, p: NormOrder) -> Result<f64> {
    let mut g = Graph::new();
    let b = Bound::register(&mut g, model)?;
    Ok(margin_before(&mut g, &b, x, y, p)?.value)
}

fn geometry_checks() -> Suite {
    let mut s = Suite::new("geometry");
    s.check("dual pairs L1↔Linf, L2↔L2, none for smooth max", || {
        holds(
            dual_order(NormOrder::L1).ok() == Some(NormOrder::Linf)
                && dual_order(NormOrder::Linf).ok() == Some(NormOrder::L1)
                && dual_order(NormOrder::L2).ok() == Some(NormOrder::L2)
                && dual_order(NormOrder::SmoothMax).is_err(),
            || "wrong dual table".into(),
        )
    });
    s.check("margin examples for w = (3, 4)", || {
        let m = linear(&[3.0, 4.0], 0.0);
        near("L2", ok(margin(&m, &[1.0, 1.0], 1.0, NormOrder::L2))?, 1.4, 1e-12)?;
        near("L2, y = -1", ok(margin(&m, &[1.0, 1.0], -1.0, NormOrder::L2))?, -1.4, 1e-12)?;
        near("L1", ok(margin(&m, &[1.0, 1.0], 1.0, NormOrder::L1))?, 1.75, 1e-12)?;
        near("Linf", ok(margin(&m, &[1.0, 1.0], 1.0, NormOrder::Linf))?, 1.0, 1e-12)
    });
    s.check("Hölder: |aᵀr| ≤ ‖a‖_q‖r‖_p on random vectors", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let r: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let dot: f64 = a.iter().zip(&r).map(|(x, y)| x * y).sum();
            for p in [NormOrder::L1, NormOrder::L2, NormOrder::Linf] {
                let bound = ok(lp_norm(&a, ok(dual_order(p))?))? * ok(lp_norm(&r, p))?;
                holds(dot.abs() <= bound * (1.0 + 1e-12), || format!("{p}: {dot} > {bound}"))?;
            }
        }
        Ok(())
    });
    s.check("smooth max lies between mean and max", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-20.0..20.0)).collect();
            let sm = ok(smooth_max(&v))?;
            let mean = v.iter().sum::<f64>() / 5.0;
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            holds(mean - 1e-9 <= sm && sm <= max + 1e-9, || format!("{sm} outside [{mean}, {max}]"))?;
        }
        Ok(())
    });
    s
}

// ── the two-lines example ───────────────────────────────────────────────

fn two_lines_checks() -> Suite {
    let mut s = Suite::new("two-lines");
    s.check("optimal boundary: gradient .07 at the samples", || {
        let m = SigmoidLinear::new(4.0, 0.0);
        near("fake side", m.input_grad(&[-1.0, 0.0])[0], 0.07, 0.005)?;
        near("real side", m.input_grad(&[1.0, 0.0])[0], 0.07, 0.005)
    });
    s.check("shifted boundary: gradient .03 at the fake side", || {
        near("gradient", SigmoidLinear::new(4.0, -1.0).input_grad(&[-1.0, 0.0])[0], 0.03, 0.005)
    });
    s.check("critic values {.02, .98}", || {
        let m = SigmoidLinear::new(4.0, 0.0);
        let mut pair = [m.value(&[-1.0, 0.0]), m.value(&[1.0, 0.0])];
        pair.sort_by(f64::total_cmp);
        near("low", pair[0], 0.02, 0.005)?;
        near("high", pair[1], 0.98, 0.005)
    });
    s.check("class-summed expected L2 margin of w₁x₍₁₎ is ±2", || {
        let data = ok(two_lines(50, &mut ChaCha8Rng::seed_from_u64(3)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let w1 = rng.random_range(0.1..5.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let m = linear(&[w1, 0.0], 0.0);
            let mut total = 0.0;
            for label in [1.0, -1.0] {
                let class = data.class(label);
                for x in &class {
                    total += ok(margin(&m, x, label, NormOrder::L2))? / class.len() as f64;
                }
            }
            near(&format!("w1 = {w1}"), total, 2.0 * w1.signum(), 1e-12)?;
        }
        Ok(())
    });
    s.check("w₁ = 4 keeps the gradient at most 1, w₁ = 8 reaches 2", || {
        let grid = (0..=2000).map(|k| -5.0 + k as f64 * 0.005);
        let max4 = grid.clone().map(|x| SigmoidLinear::new(4.0, 0.0).input_grad(&[x, 0.0])[0]).fold(0.0, f64::max);
        let max8 = grid.map(|x| SigmoidLinear::new(8.0, 0.0).input_grad(&[x, 0.0])[0]).fold(0.0, f64::max);
        near("w1 = 4", max4, 1.0, 1e-12)?;
        near("w1 = 8", max8, 2.0, 1e-12)
    });
    s
}

// ── objectives ──────────────────────────────────────────────────────────

fn random_batch(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| vec![rng.random_range(-1.0..1.0) + shift, rng.random_range(-1.0..1.0)])
        .collect()
}

fn critic_value(
    model: &CriticModel,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    f: ObjectiveF,
    pen: &PenaltySpec,
    mode: RelativisticMode,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let b = Bound::register(&mut g, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = critic_loss(&mut g, &b, real, fake, f, pen, mode, &mut rng)?;
    Ok((g.scalar_value(t.loss)?, t.penalty_mean))
}

fn objective_checks() -> Suite {
    let mut s = Suite::new("objectives");
    s.check("f₂(z) = f₁(−z) on [−5, 5]", || {
        for tag in ObjectiveF::ALL {
            for k in 0..=100 {
                let z = -5.0 + 0.1 * k as f64;
                holds(apply_f2(tag, z) == apply_f(tag, -z), || format!("{} at {z}", tag.name()))?;
            }
        }
        Ok(())
    });
    s.check("relativistic average equals WGAN for F = identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pen = PenaltySpec::new(NormOrder::L2, PenaltyG::Ls, 0.0);
        for _ in 0..100 {
            let m = CriticModel::Mlp(ok(Mlp::default_critic(2, &mut rng))?);
            let real = random_batch(&mut rng, 16, 0.5);
            let fake = random_batch(&mut rng, 16, -0.5);
            let (a, _) = ok(critic_value(&m, &real, &fake, ObjectiveF::Identity, &pen, RelativisticMode::Average))?;
            let (b, _) = ok(critic_value(&m, &real, &fake, ObjectiveF::Identity, &pen, RelativisticMode::None))?;
            near("difference", a - b, 0.0, 1e-9)?;
        }
        Ok(())
    });
    s.check("critic loss is non-decreasing in λ", || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = CriticModel::Mlp(ok(Mlp::default_critic(2, &mut rng))?);
        let real = random_batch(&mut rng, 16, 1.0);
        let fake = random_batch(&mut rng, 16, -1.0);
        let mut prev = f64::NEG_INFINITY;
        for lambda in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let pen = PenaltySpec::new(NormOrder::L2, PenaltyG::Ls, lambda);
            let (v, _) = ok(critic_value(&m, &real, &fake, ObjectiveF::NegHinge, &pen, RelativisticMode::None))?;
            holds(v >= prev, || format!("λ = {lambda}: {v} < {prev}"))?;
            prev = v;
        }
        Ok(())
    });
    s.check("interpolates stay on the segment", || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let a = [rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)];
            let b = [rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)];
            let x = ok(interpolate(&a, &b, rng.random::<f64>()))?;
            for i in 0..2 {
                holds(a[i].min(b[i]) <= x[i] && x[i] <= a[i].max(b[i]), || format!("{x:?} off [{a:?}, {b:?}]"))?;
            }
        }
        Ok(())
    });
    s.check("hinge penalty is exactly zero under unit gradients", || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = linear(&[0.6, 0.8], 0.2);
        let pen = PenaltySpec::new(NormOrder::L2, PenaltyG::Hinge, 10.0);
        let (_, p) = ok(critic_value(
            &m,
            &random_batch(&mut rng, 16, 1.0),
            &random_batch(&mut rng, 16, -1.0),
            ObjectiveF::Identity,
            &pen,
            RelativisticMode::None,
        ))?;
        holds(p == 0.0, || format!("penalty {p}"))
    });
    s
}

// ── models ──────────────────────────────────────────────────────────────

fn model_checks() -> Suite {
    let mut s = Suite::new("models");
    s.check("graph and hand-written input gradients agree", || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = CriticModel::Mlp(ok(Mlp::init(&[2, 8, 8, 1], Activation::Tanh, Activation::Identity, 1.0, &mut rng))?);
            let x = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let mut g = Graph::new();
            let b = ok(Bound::register(&mut g, &m))?;
            let xv = ok(g.variable(Tensor::vector(x.clone())))?;
            let f = ok(b.forward(&mut g, xv))?;
            let gx = ok(g.grad(f, &[xv]))?.get(xv).expect("requested");
            let ad = ok(g.value(gx))?.data().to_vec();
            for (a, h) in ad.iter().zip(m.input_grad(&x)) {
                near("gradient", *a, h, 1e-12)?;
            }
        }
        Ok(())
    });
    s.check("linear input gradient is w everywhere", || {
        let m = LinearModel::new(vec![3.0, 4.0], 1.0);
        holds(m.input_grad(&[-9.0, 2.0]) == vec![3.0, 4.0], || "gradient differs from w".into())
    });
    s.check("initialisation is seeded and zero in, zero out", || {
        let a = ok(Mlp::default_critic(2, &mut ChaCha8Rng::seed_from_u64(1)))?;
        let b = ok(Mlp::default_critic(2, &mut ChaCha8Rng::seed_from_u64(1)))?;
        let c = ok(Mlp::default_critic(2, &mut ChaCha8Rng::seed_from_u64(2)))?;
        holds(a == b && a != c && a.value(&[0.0, 0.0]) == 0.0, || "init not reproducible".into())
    });
    s.check("model files round-trip bit for bit", || {
        let m = CriticModel::Mlp(ok(Mlp::default_critic(2, &mut ChaCha8Rng::seed_from_u64(3)))?);
        let back = ok(load_critic(&save_critic(&m)))?;
        holds(back == m, || "parameters changed".into())
    });
    s
}

// ── oracles ─────────────────────────────────────────────────────────────

fn oracle_checks() -> Suite {
    let mut s = Suite::new("oracles");
    s.check("projection distances for w = (3, 4) at (1, 1)", || {
        let m = LinearModel::new(vec![3.0, 4.0], 0.0);
        let cfg = ProjectionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        near("L2", ok(project_to_boundary(&m, &[1.0, 1.0], NormOrder::L2, &cfg, &mut rng))?.distance, 1.4, 1e-6)?;
        near("Linf", ok(project_to_boundary(&m, &[1.0, 1.0], NormOrder::Linf, &cfg, &mut rng))?.distance, 1.0, 1e-4)
    });
    s.check("margin formula equals projection distance for linear models", || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = ProjectionConfig::default();
        for _ in 0..5 {
            let w = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let m = LinearModel::new(w.to_vec(), rng.random_range(-0.5..0.5));
            let cm = CriticModel::Linear(m.clone());
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let y = m.value(&x).signum();
            for p in [NormOrder::L2, NormOrder::L1, NormOrder::Linf] {
                let formula = ok(margin(&cm, &x, y, p))?;
                let oracle = ok(project_to_boundary(&m, &x, p, &cfg, &mut rng))?.distance;
                near(&format!("{p}"), formula, oracle, 1e-6 * oracle.max(1.0))?;
            }
        }
        Ok(())
    });
    s.check("exact W1 examples and the 1-D sorted matching", || {
        let pts = |v: &[f64]| v.iter().map(|x| vec![*x]).collect::<Vec<_>>();
        near("points", ok(exact_w1(&pts(&[0.0]), &pts(&[1.0]), NormOrder::L2))?.value, 1.0, 0.0)?;
        near("pairs", ok(exact_w1(&pts(&[0.0, 2.0]), &pts(&[1.0, 3.0]), NormOrder::L2))?.value, 1.0, 0.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut a: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut b: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let w = ok(exact_w1(&pts(&a), &pts(&b), NormOrder::L2))?.value;
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let sorted = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 100.0;
        near("sorted", w, sorted, 1e-9)
    });
    s.check("W1 is symmetric and satisfies the triangle inequality", || {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let mut pts = || -> Vec<Vec<f64>> {
                (0..20).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect()
            };
            let (a, b, c) = (pts(), pts(), pts());
            let w = |x: &[Vec<f64>], y: &[Vec<f64>]| exact_w1(x, y, NormOrder::L2).map(|r| r.value);
            near("symmetry", ok(w(&a, &b))?, ok(w(&b, &a))?, 1e-9)?;
            let (ac, ab, bc) = (ok(w(&a, &c))?, ok(w(&a, &b))?, ok(w(&b, &c))?);
            holds(ac <= ab + bc + 1e-9, || format!("{ac} > {ab} + {bc}"))?;
        }
        Ok(())
    });
    s.check("bounded gradient implies Lipschitz (dual norm)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let m = ok(Mlp::init(&[2, 8, 1], Activation::Tanh, Activation::Identity, 1.0, &mut rng))?;
            let samples: Vec<Vec<f64>> =
                (0..30).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            for p in [NormOrder::L2, NormOrder::Linf] {
                let q = ok(dual_order(p))?;
                let quotient = ok(lipschitz_quotient_max(&m, &samples, p))?;
                let mut max_grad: f64 = 0.0;
                for i in 0..=100 {
                    for j in 0..=100 {
                        let x = [-1.0 + 0.02 * i as f64, -1.0 + 0.02 * j as f64];
                        max_grad = max_grad.max(ok(lp_norm(&m.input_grad(&x), q))?);
                    }
                }
                holds(quotient <= max_grad + 1e-3, || format!("{p}: quotient {quotient} > {max_grad}"))?;
            }
        }
        Ok(())
    });
    s.check("Lipschitz implies bounded gradient in L2", || {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let m = ok(Mlp::init(&[2, 8, 1], Activation::Tanh, Activation::Identity, 1.0, &mut rng))?;
            let mut samples = Vec::new();
            let mut max_grad: f64 = 0.0;
            for _ in 0..20 {
                let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let gx = m.input_grad(&x);
                let n = ok(lp_norm(&gx, NormOrder::L2))?;
                max_grad = max_grad.max(n);
                // A partner a short step along the gradient direction.
                let step = 1e-4 / n.max(1e-12);
                samples.push(vec![x[0] + step * gx[0], x[1] + step * gx[1]]);
                samples.push(x);
            }
            let quotient = ok(lipschitz_quotient_max(&m, &samples, NormOrder::L2))?;
            holds(max_grad <= quotient + 1e-2, || format!("gradient {max_grad} > quotient {quotient}"))?;
        }
        Ok(())
    });
    s.check("max-min-margin separators", || {
        let lines = ok(two_lines(100, &mut ChaCha8Rng::seed_from_u64(16)))?;
        let sep = ok(brute_force_maxmin_margin(&lines))?;
        near("two-lines angle", sep.angle, 0.0, 1e-12)?;
        near("two-lines offset", sep.offset, 0.0, 1e-12)?;
        near("two-lines margin", sep.min_margin, 1.0, 1e-12)?;
        let blobs = ok(blobs_separable(1.0, 1000, &mut ChaCha8Rng::seed_from_u64(17)))?;
        near("blobs margin", ok(brute_force_maxmin_margin(&blobs))?.min_margin, 1.0, 0.02)
    });
    s
}

// ── data ────────────────────────────────────────────────────────────────

fn data_checks() -> Suite {
    let mut s = Suite::new("data");
    s.check("two-lines classes sit on x₍₁₎ = ±1", || {
        let d = ok(two_lines(1000, &mut ChaCha8Rng::seed_from_u64(18)))?;
        let on_lines = d.iter().all(|(x, y)| x[0] == y && x[1].abs() <= 1.0);
        holds(on_lines, || "point off its line".into())
    });
    s.check("samplers replay under a fixed seed", || {
        let a = ok(gaussian_ring(8, 2.0, 0.1, 5))?.batch(100);
        let b = ok(gaussian_ring(8, 2.0, 0.1, 5))?.batch(100);
        let c = ok(DatasetSpec::BlobsSeparable { gap: 1.0, n_per_class: 50 }.generate(5))?;
        let d = ok(DatasetSpec::BlobsSeparable { gap: 1.0, n_per_class: 50 }.generate(5))?;
        holds(a == b && c == d, || "streams differ".into())
    });
    s.check("ring sample mean is near the origin", || {
        let pts = ok(gaussian_ring(8, 2.0, 0.05, 6))?.batch(100_000);
        let bound = 3.0 * 2f64.sqrt() / (100_000f64).sqrt();
        for i in 0..2 {
            let mean = pts.iter().map(|p| p[i]).sum::<f64>() / 1e5;
            near("mean", mean, 0.0, bound)?;
        }
        Ok(())
    });
    s.check("latent covariance is the identity", || {
        let pts = ok(latent_sampler(8, 7))?.batch(100_000);
        for i in 0..8 {
            for j in 0..8 {
                let c = pts.iter().map(|p| p[i] * p[j]).sum::<f64>() / 1e5;
                near(&format!("cov[{i}][{j}]"), c, if i == j { 1.0 } else { 0.0 }, 0.03)?;
            }
        }
        Ok(())
    });
    s.check("blobs are separable for any positive gap", || {
        for gap in [0.05, 0.3, 1.0, 2.5] {
            let d = ok(blobs_separable(gap, 200, &mut ChaCha8Rng::seed_from_u64(19)))?;
            ok(brute_force_maxmin_margin(&d))?;
        }
        Ok(())
    });
    s
}

// ── training ────────────────────────────────────────────────────────────

fn training_checks() -> Suite {
    let mut s = Suite::new("training");
    s.check("Adam's first step is lr·sign(g)", || {
        let cfg = OptimConfig { epsilon: 0.0, ..OptimConfig::adam(0.1) };
        for g in [1e-4, -2.0, 50.0] {
            let mut p = [0.0];
            ok(adam_step(&mut p, &[g], &mut AdamState::new(1), &cfg))?;
            near("step", p[0], -0.1 * g.signum(), 1e-12)?;
        }
        Ok(())
    });
    s.check("hinge MMC on two-lines puts the boundary at x₍₁₎ ≈ 0", || {
        let data = ok(two_lines(200, &mut ChaCha8Rng::seed_from_u64(20)))?;
        let mut model = linear(&[0.3, 0.4], 0.5);
        let setup = MmcSetup {
            objective: ObjectiveF::NegHinge,
            penalty: PenaltySpec::new(NormOrder::L2, PenaltyG::Ls, 20.0),
            optim: OptimConfig::adam(1e-2),
            train: TrainConfig {
                iterations: 1500,
                batch_size: 32,
                metric_interval: 500,
                seed: 1,
                ..TrainConfig::default()
            },
            margin_norm: NormOrder::L2,
            margin_interval: 0,
        };
        ok(train_mmc(&data, &mut model, &setup))?;
        let CriticModel::Linear(m) = &model else { unreachable!() };
        near("crossing", m.b / m.w[0], 0.0, 0.1)
    });
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn autodiff_group_passes_and_catches_a_faulty_rule() {
        let clean = run(Some("autodiff")).unwrap();
        assert!(clean.all_passed(), "{}", clean.table());
        let faulty = run_with_fault(Some("autodiff"), Some(OpKind::Tanh)).unwrap();
        let failed: Vec<_> = faulty.failures().collect();
        assert!(!failed.is_empty());
        assert!(failed.iter().all(|c| c.name.starts_with("tanh")), "{}", faulty.table());
        assert!(failed.iter().all(|c| c.outcome.as_ref().unwrap_err().contains("tanh")));
    }

    #[test]
    fn every_group_passes() {
        let report = run(None).unwrap();
        assert!(report.all_passed(), "{}", report.table());
    }

    #[test]
    fn unknown_group() {
        assert!(run(Some("nope")).is_none());
    }
}
