//! Optimisers and the two training loops: supervised margin maximisation
//! and alternating critic/generator training.

mod optim;
mod record;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{LabeledDataset, Sampler};
use crate::error::{Error, Result};
use crate::geometry::{dual_order, lp_norm, NormOrder, DENOMINATOR_FLOOR};
use crate::models::{Bound, Critic, CriticModel, DiffModel, Mlp};
use crate::objectives::{critic_loss, generator_loss, mmc_loss, LossTerms, ObjectiveF, PenaltySpec, RelativisticMode};
use crate::oracles::exact_w1;

pub use optim::{adam_step, AdamState, Algorithm, OptimConfig, Optimizer};
pub use record::{csv_row, MetricRow, RunRecord, CSV_HEADER};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Generator iterations for GAN runs, gradient steps for MMC runs.
    pub iterations: usize,
    pub batch_size: usize,
    pub critic_steps: usize,
    pub seed: u64,
    pub metric_interval: usize,
    /// Fill the `wall_ms` column. Off by default so metric files are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 5000,
            batch_size: 64,
            critic_steps: 1,
            seed: 0,
            metric_interval: 100,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        for (name, v) in [
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("critic_steps", self.critic_steps),
            ("metric_interval", self.metric_interval),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{field}.{name}"), "must be at least 1"));
            }
        }
        Ok(())
    }

    fn logs(&self, iter: usize) -> bool {
        iter.is_multiple_of(self.metric_interval) || iter == self.iterations
    }
}

/// When to run the slower diagnostics. An interval of 0 disables one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub w1_interval: usize,
    pub margin_interval: usize,
    /// Norm in which margins are measured; defaults to the dual of the
    /// penalty norm (L1 for a smooth-max penalty).
    pub margin_norm: Option<NormOrder>,
    /// Samples per side for the exact W1 and the margin estimate.
    pub heldout: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            w1_interval: 0,
            margin_interval: 0,
            margin_norm: None,
            heldout: 256,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.margin_norm == Some(NormOrder::SmoothMax) {
            return Err(Error::config(format!("{field}.margin_norm"), "smooth max is not a margin norm"));
        }
        if self.heldout == 0 {
            return Err(Error::config(format!("{field}.heldout"), "must be at least 1"));
        }
        Ok(())
    }

    pub fn margin_norm_for(&self, pen: &PenaltySpec) -> NormOrder {
        self.margin_norm.unwrap_or_else(|| dual_order(pen.grad_norm).unwrap_or(NormOrder::L1))
    }
}

fn due(interval: usize, iter: usize, last: usize) -> bool {
    interval > 0 && (iter.is_multiple_of(interval) || iter == last)
}

/// Independent streams drawn from one run seed, in a fixed order.
struct Streams {
    penalty: ChaCha8Rng,
    batches: ChaCha8Rng,
    seeds: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mut root = ChaCha8Rng::seed_from_u64(seed);
        Streams {
            penalty: ChaCha8Rng::seed_from_u64(root.random()),
            batches: ChaCha8Rng::seed_from_u64(root.random()),
            seeds: ChaCha8Rng::seed_from_u64(root.random()),
        }
    }

    fn next_seed(&mut self) -> u64 {
        self.seeds.random()
    }
}

/// Initialisation rng for models built for a run with `seed`.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)
}

fn diverged(iteration: usize, cause: impl ToString, record: &RunRecord) -> Error {
    Error::Diverged {
        iteration,
        cause: cause.to_string(),
        record: Box::new(record.clone()),
    }
}

/// Runs one gradient step on `model`; returns the loss diagnostics.
fn step_model<M: DiffModel + ?Sized>(
    model: &mut M,
    opt: &mut Optimizer,
    build: impl FnOnce(&mut Graph, &Bound<'_, M>) -> Result<LossTerms>,
) -> Result<(f64, LossTerms)> {
    let mut g = Graph::new();
    let (value, terms, grads) = {
        let bound = Bound::register(&mut g, &*model)?;
        let terms = build(&mut g, &bound)?;
        let value = g.scalar_value(terms.loss)?;
        let grads = g.grad(terms.loss, &bound.params)?;
        (value, terms, bound.flat_grad(&g, &grads)?)
    };
    if let Some(i) = grads.iter().position(|v| !v.is_finite()) {
        return Err(Error::config("gradient", format!("component {i} is not finite")));
    }
    let mut params = model.flat_params();
    opt.step(&mut params, &grads)?;
    model.set_flat_params(&params)?;
    Ok((value, terms))
}

fn norm_stats(norms: &[f64]) -> (f64, f64, f64) {
    let n = norms.len().max(1) as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

/// Mean of `y·f(x)/‖∇ₓf(x)‖_q` over labelled points, skipping points whose
/// gradient is below the margin floor. `None` if every point was skipped.
pub fn expected_margin<C: Critic + ?Sized>(
    model: &C,
    points: impl IntoIterator<Item = (Vec<f64>, f64)>,
    p: NormOrder,
) -> Result<Option<f64>> {
    let q = dual_order(p)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, y) in points {
        let n = lp_norm(&model.input_grad(&x), q)?;
        if n > DENOMINATOR_FLOOR {
            sum += y * model.value(&x) / n;
            count += 1;
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

fn sample_with_replacement(rng: &mut ChaCha8Rng, pool: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
}

/// Expected-margin classifier training on a fixed labelled dataset.
#[derive(Clone, Debug)]
pub struct MmcSetup {
    pub objective: ObjectiveF,
    pub penalty: PenaltySpec,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub margin_norm: NormOrder,
    pub margin_interval: usize,
}

pub fn train_mmc(data: &LabeledDataset, model: &mut CriticModel, setup: &MmcSetup) -> Result<RunRecord> {
    let cfg = &setup.train;
    cfg.validate("train")?;
    setup.penalty.validate()?;
    setup.optim.validate("optimizer")?;
    let positive = data.class(1.0);
    let negative = data.class(-1.0);
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::config("dataset", "both labels must be present"));
    }
    let mut streams = Streams::new(cfg.seed);
    let mut opt = Optimizer::new(setup.optim, model.num_params());
    let mut record = RunRecord::default();
    let start = Instant::now();
    for iter in 1..=cfg.iterations {
        let pos = sample_with_replacement(&mut streams.batches, &positive, cfg.batch_size);
        let neg = sample_with_replacement(&mut streams.batches, &negative, cfg.batch_size);
        let rng = &mut streams.penalty;
        let (loss, terms) = step_model(model, &mut opt, |g, b| {
            mmc_loss(g, b, &pos, &neg, setup.objective, &setup.penalty, rng)
        })
        .map_err(|e| diverged(iter, e, &record))?;
        if !model.flat_params().iter().all(|v| v.is_finite()) {
            return Err(diverged(iter, "parameters became non-finite", &record));
        }
        if cfg.logs(iter) {
            let (mean, min, max) = norm_stats(&terms.grad_norms);
            let margin = if due(setup.margin_interval, iter, cfg.iterations) {
                let pts = data.iter().map(|(x, y)| (x.to_vec(), y));
                expected_margin(&*model, pts, setup.margin_norm)?
            } else {
                None
            };
            let row = MetricRow {
                iter,
                critic_loss: loss,
                gen_loss: None,
                penalty_mean: terms.penalty_mean,
                grad_norm_mean: mean,
                grad_norm_min: min,
                grad_norm_max: max,
                expected_margin: margin,
                w1_exact: None,
                wall_ms: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64() * 1e3),
                heldout_ipm: None,
            };
            if !row.is_finite() {
                return Err(diverged(iter, "non-finite metric", &record));
            }
            record.push(row);
        }
    }
    Ok(record)
}

/// Source of fake samples for the critic.
#[derive(Clone, Debug)]
pub enum FakeSource {
    /// A trained generator fed by a latent sampler.
    Generator {
        model: Mlp,
        latent: Sampler,
        optim: OptimConfig,
    },
    /// A fixed distribution; only the critic trains.
    Fixed(Sampler),
}

#[derive(Clone, Debug)]
pub struct GanSetup {
    pub real: Sampler,
    pub fake: FakeSource,
    pub critic: CriticModel,
    pub objective: ObjectiveF,
    pub mode: RelativisticMode,
    pub penalty: PenaltySpec,
    pub critic_optim: OptimConfig,
    pub train: TrainConfig,
    pub oracles: OracleConfig,
}

#[derive(Clone, Debug)]
pub struct GanOutcome {
    pub critic: CriticModel,
    pub generator: Option<Mlp>,
    pub record: RunRecord,
}

fn generate(generator: &Mlp, latent: &[Vec<f64>]) -> Vec<Vec<f64>> {
    latent.iter().map(|z| generator.eval(z)).collect()
}

struct FakeStream {
    generator: Option<(Mlp, Optimizer)>,
    sampler: Sampler,
}

impl FakeStream {
    fn batch(&mut self, n: usize) -> Vec<Vec<f64>> {
        match &self.generator {
            Some((g, _)) => generate(g, &self.sampler.batch(n)),
            None => self.sampler.batch(n),
        }
    }
}

/// Alternating training: `critic_steps` critic updates per generator
/// update. With a fixed fake source only the critic trains.
pub fn train_gan(setup: GanSetup) -> Result<GanOutcome> {
    let cfg = setup.train;
    cfg.validate("train")?;
    setup.penalty.validate()?;
    setup.critic_optim.validate("optimizer")?;
    setup.oracles.validate("oracles")?;
    let mut streams = Streams::new(cfg.seed);
    let mut real = setup.real.with_seed(streams.next_seed());
    let mut fake = match setup.fake {
        FakeSource::Generator { model, latent, optim } => {
            optim.validate("generator.optimizer")?;
            let opt = Optimizer::new(optim, model.num_params());
            FakeStream {
                generator: Some((model, opt)),
                sampler: latent.with_seed(streams.next_seed()),
            }
        }
        FakeSource::Fixed(s) => FakeStream {
            generator: None,
            sampler: s.with_seed(streams.next_seed()),
        },
    };
    let mut heldout_real = real.with_seed(streams.next_seed());
    let mut heldout_fake = fake.sampler.with_seed(streams.next_seed());
    let mut critic = setup.critic;
    let mut critic_opt = Optimizer::new(setup.critic_optim, critic.num_params());
    let margin_norm = setup.oracles.margin_norm_for(&setup.penalty);
    let mut record = RunRecord::default();
    let start = Instant::now();
    for iter in 1..=cfg.iterations {
        let mut last = None;
        for _ in 0..cfg.critic_steps {
            let xr = real.batch(cfg.batch_size);
            let xf = fake.batch(cfg.batch_size);
            let rng = &mut streams.penalty;
            let out = step_model(&mut critic, &mut critic_opt, |g, b| {
                critic_loss(g, b, &xr, &xf, setup.objective, &setup.penalty, setup.mode, rng)
            })
            .map_err(|e| diverged(iter, e, &record))?;
            last = Some(out);
        }
        let (critic_value, terms) = last.expect("at least one critic step");
        if !critic.flat_params().iter().all(|v| v.is_finite()) {
            return Err(diverged(iter, "critic parameters became non-finite", &record));
        }

        let mut gen_value = None;
        if let Some((generator, opt)) = fake.generator.as_mut() {
            let latent = fake.sampler.batch(cfg.batch_size);
            let xr = match setup.mode {
                RelativisticMode::None => None,
                _ => Some(real.batch(cfg.batch_size)),
            };
            let critic_ref = &critic;
            let (v, _) = step_model(generator, opt, |g, gb| {
                let cb = Bound::register(g, critic_ref)?;
                let loss = generator_loss(g, &cb, gb, &latent, setup.objective, setup.mode, xr.as_deref())?;
                Ok(LossTerms {
                    loss,
                    penalty_mean: 0.0,
                    grad_norms: Vec::new(),
                })
            })
            .map_err(|e| diverged(iter, e, &record))?;
            if !generator.flat_params().iter().all(|v| v.is_finite()) {
                return Err(diverged(iter, "generator parameters became non-finite", &record));
            }
            gen_value = Some(v);
        }

        if !cfg.logs(iter) {
            continue;
        }
        let w1_due = due(setup.oracles.w1_interval, iter, cfg.iterations);
        let margin_due = due(setup.oracles.margin_interval, iter, cfg.iterations);
        let (mut w1, mut ipm, mut margin) = (None, None, None);
        if w1_due || margin_due {
            let n = setup.oracles.heldout;
            let hr = heldout_real.batch(n);
            let hf = match &fake.generator {
                Some((g, _)) => generate(g, &heldout_fake.batch(n)),
                None => heldout_fake.batch(n),
            };
            if w1_due {
                w1 = Some(exact_w1(&hr, &hf, NormOrder::L2)?.value);
                let mean = |b: &[Vec<f64>]| b.iter().map(|x| critic.value(x)).sum::<f64>() / b.len() as f64;
                ipm = Some(mean(&hr) - mean(&hf));
            }
            if margin_due {
                let labelled = hr.into_iter().map(|x| (x, 1.0)).chain(hf.into_iter().map(|x| (x, -1.0)));
                margin = expected_margin(&critic, labelled, margin_norm)?;
            }
        }
        let (mean, min, max) = norm_stats(&terms.grad_norms);
        let row = MetricRow {
            iter,
            critic_loss: critic_value,
            gen_loss: gen_value,
            penalty_mean: terms.penalty_mean,
            grad_norm_mean: mean,
            grad_norm_min: min,
            grad_norm_max: max,
            expected_margin: margin,
            w1_exact: w1,
            wall_ms: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64() * 1e3),
            heldout_ipm: ipm,
        };
        if !row.is_finite() {
            return Err(diverged(iter, "non-finite metric", &record));
        }
        record.push(row);
    }
    Ok(GanOutcome {
        critic,
        generator: fake.generator.map(|(g, _)| g),
        record,
    })
}
