//! GAN and max-margin objectives assembled as differentiable losses.
//!
//! Every loss is returned in minimisation form. The critic maximises
//! `F-term − λ·E g(‖∇f(x̃)‖)`, so its loss is the negation of that.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{norm_node, NormOrder};
use crate::models::{Bound, DiffModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveF {
    /// WGAN: `F(z) = z`.
    #[serde(alias = "wgan")]
    Identity,
    /// SGAN: `F(z) = log σ(z)`.
    #[serde(alias = "sgan")]
    LogSigmoid,
    /// LSGAN: `F(z) = −(1 − z)²`.
    #[serde(alias = "lsgan")]
    NegLeastSquares,
    /// HingeGAN: `F(z) = −max(0, 1 − z)`.
    #[serde(alias = "hinge")]
    NegHinge,
}

impl ObjectiveF {
    pub const ALL: [ObjectiveF; 4] = [
        ObjectiveF::Identity,
        ObjectiveF::LogSigmoid,
        ObjectiveF::NegLeastSquares,
        ObjectiveF::NegHinge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveF::Identity => "identity",
            ObjectiveF::LogSigmoid => "log_sigmoid",
            ObjectiveF::NegLeastSquares => "neg_least_squares",
            ObjectiveF::NegHinge => "neg_hinge",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyG {
    /// `(z − 1)²`
    Ls,
    /// `max(0, z − 1)`
    Hinge,
    /// `z² − 1`; may be negative.
    Kkt,
}

impl PenaltyG {
    pub const ALL: [PenaltyG; 3] = [PenaltyG::Ls, PenaltyG::Hinge, PenaltyG::Kkt];

    pub fn name(self) -> &'static str {
        match self {
            PenaltyG::Ls => "ls",
            PenaltyG::Hinge => "hinge",
            PenaltyG::Kkt => "kkt",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleAt {
    #[default]
    Interpolates,
    Real,
    Fake,
    BothClasses,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelativisticMode {
    #[default]
    None,
    Paired,
    Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub grad_norm: NormOrder,
    pub g: PenaltyG,
    pub lambda: f64,
    #[serde(default)]
    pub sample_at: SampleAt,
}

impl PenaltySpec {
    pub fn new(grad_norm: NormOrder, g: PenaltyG, lambda: f64) -> Self {
        PenaltySpec {
            grad_norm,
            g,
            lambda,
            sample_at: SampleAt::Interpolates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("penalty.lambda", format!("{} is not a finite non-negative number", self.lambda)));
        }
        Ok(())
    }
}

// ── scalar maps ─────────────────────────────────────────────────────────

/// `f₁ = F`.
pub fn apply_f(tag: ObjectiveF, z: f64) -> f64 {
    match tag {
        ObjectiveF::Identity => z,
        ObjectiveF::LogSigmoid => log_sigmoid(z),
        ObjectiveF::NegLeastSquares => -(1.0 - z).powi(2),
        ObjectiveF::NegHinge => -(1.0 - z).max(0.0),
    }
}

/// `f₂(z) = f₁(−z)`, applied to the critic value of a fake sample.
pub fn apply_f2(tag: ObjectiveF, z: f64) -> f64 {
    apply_f(tag, -z)
}

/// Per-sample generator loss `f₃`, minimised by the generator.
pub fn apply_f3(tag: ObjectiveF, z: f64) -> f64 {
    match tag {
        ObjectiveF::Identity | ObjectiveF::NegHinge => -z,
        ObjectiveF::LogSigmoid => -log_sigmoid(z),
        ObjectiveF::NegLeastSquares => (1.0 - z).powi(2),
    }
}

pub fn apply_g(tag: PenaltyG, z: f64) -> f64 {
    match tag {
        PenaltyG::Ls => (z - 1.0).powi(2),
        PenaltyG::Hinge => (z - 1.0).max(0.0),
        PenaltyG::Kkt => z * z - 1.0,
    }
}

/// `log σ(z) = −log(1 + e^{−z})` without overflow.
pub fn log_sigmoid(z: f64) -> f64 {
    z.min(0.0) - (-z.abs()).exp().ln_1p()
}

pub fn interpolate(x1: &[f64], x2: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            got: x2.len(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    Ok(x1
        .iter()
        .zip(x2)
        .map(|(a, b)| {
            let v = alpha * a + (1.0 - alpha) * b;
            // Rounding can step just outside the segment; clamp back onto it.
            v.clamp(a.min(*b), a.max(*b))
        })
        .collect())
}

// ── graph maps ──────────────────────────────────────────────────────────

fn log_sigmoid_node(g: &mut Graph, z: NodeId) -> Result<NodeId> {
    // (z − |z|)/2 − log(1 + e^{−|z|})
    let a = g.abs(z)?;
    let d = g.sub(z, a)?;
    let lin = g.scale(d, 0.5)?;
    let na = g.neg(a)?;
    let e = g.exp(na)?;
    let e1 = g.add_scalar(e, 1.0)?;
    let l = g.log(e1)?;
    g.sub(lin, l)
}

fn one_minus(g: &mut Graph, z: NodeId) -> Result<NodeId> {
    let n = g.neg(z)?;
    g.add_scalar(n, 1.0)
}

pub fn f_node(g: &mut Graph, tag: ObjectiveF, z: NodeId) -> Result<NodeId> {
    match tag {
        ObjectiveF::Identity => Ok(z),
        ObjectiveF::LogSigmoid => log_sigmoid_node(g, z),
        ObjectiveF::NegLeastSquares => {
            let u = one_minus(g, z)?;
            let sq = g.power(u, 2.0)?;
            g.neg(sq)
        }
        ObjectiveF::NegHinge => {
            let u = one_minus(g, z)?;
            let r = g.relu(u)?;
            g.neg(r)
        }
    }
}

pub fn f2_node(g: &mut Graph, tag: ObjectiveF, z: NodeId) -> Result<NodeId> {
    let n = g.neg(z)?;
    f_node(g, tag, n)
}

pub fn f3_node(g: &mut Graph, tag: ObjectiveF, z: NodeId) -> Result<NodeId> {
    match tag {
        ObjectiveF::Identity | ObjectiveF::NegHinge => g.neg(z),
        ObjectiveF::LogSigmoid => {
            let l = log_sigmoid_node(g, z)?;
            g.neg(l)
        }
        ObjectiveF::NegLeastSquares => {
            let u = one_minus(g, z)?;
            g.power(u, 2.0)
        }
    }
}

pub fn g_node(g: &mut Graph, tag: PenaltyG, z: NodeId) -> Result<NodeId> {
    let shifted = g.add_scalar(z, -1.0)?;
    match tag {
        PenaltyG::Ls => g.power(shifted, 2.0),
        PenaltyG::Hinge => g.relu(shifted),
        PenaltyG::Kkt => {
            let sq = g.power(z, 2.0)?;
            g.add_scalar(sq, -1.0)
        }
    }
}

/// Gradient norm as used inside the penalty. An exactly zero L² gradient
/// gets the zero subgradient instead of the infinite slope of `√s` at 0.
pub fn penalty_norm_node(g: &mut Graph, v: NodeId, order: NormOrder) -> Result<NodeId> {
    if order == NormOrder::L2 && g.value(v)?.data().iter().all(|x| *x == 0.0) {
        let s = g.sum(v)?;
        return g.scale(s, 0.0);
    }
    norm_node(g, v, order)
}

// ── losses ──────────────────────────────────────────────────────────────

/// A loss node together with the penalty diagnostics computed on the way.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub loss: NodeId,
    pub penalty_mean: f64,
    /// `‖∇ₓf‖` at each penalty sample, in the penalty norm.
    pub grad_norms: Vec<f64>,
}

fn nonempty(batch: &[Vec<f64>], what: &'static str) -> Result<()> {
    if batch.is_empty() {
        Err(Error::Empty(what))
    } else {
        Ok(())
    }
}

fn paired(real: usize, fake: usize) -> Result<()> {
    if real == fake {
        Ok(())
    } else {
        Err(Error::UnpairedBatches { real, fake })
    }
}

fn scores<M: DiffModel + ?Sized>(
    g: &mut Graph,
    critic: &Bound<'_, M>,
    batch: &[Vec<f64>],
) -> Result<Vec<NodeId>> {
    batch.iter().map(|x| critic.forward_point(g, x)).collect()
}

fn map_mean(
    g: &mut Graph,
    zs: &[NodeId],
    mut f: impl FnMut(&mut Graph, NodeId) -> Result<NodeId>,
) -> Result<NodeId> {
    let terms = zs.iter().map(|&z| f(g, z)).collect::<Result<Vec<_>>>()?;
    g.mean_all(&terms)
}

/// Points where the penalty is evaluated.
pub fn penalty_points(
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    sample_at: SampleAt,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    match sample_at {
        SampleAt::Interpolates => {
            paired(real.len(), fake.len())?;
            real.iter()
                .zip(fake)
                .map(|(a, b)| interpolate(a, b, rng.random::<f64>()))
                .collect()
        }
        SampleAt::Real => Ok(real.to_vec()),
        SampleAt::Fake => Ok(fake.to_vec()),
        SampleAt::BothClasses => Ok(real.iter().chain(fake).cloned().collect()),
    }
}

/// `E g(‖∇ₓf(x̃)‖)` over `points`, differentiable in the model parameters.
pub fn penalty_term<M: DiffModel + ?Sized>(
    g: &mut Graph,
    critic: &Bound<'_, M>,
    points: &[Vec<f64>],
    pen: &PenaltySpec,
) -> Result<(NodeId, Vec<f64>)> {
    nonempty(points, "penalty sample set")?;
    let vars = points
        .iter()
        .map(|x| g.variable(Tensor::vector(x.clone())))
        .collect::<Result<Vec<_>>>()?;
    let fs = vars
        .iter()
        .map(|&v| critic.forward(g, v))
        .collect::<Result<Vec<_>>>()?;
    let total = g.add_all(&fs)?;
    let grads = g.grad(total, &vars)?;
    let mut norms = Vec::with_capacity(vars.len());
    let mut terms = Vec::with_capacity(vars.len());
    for &v in &vars {
        let gv = grads.get(v).expect("requested variable");
        let n = penalty_norm_node(g, gv, pen.grad_norm)?;
        norms.push(g.scalar_value(n)?);
        terms.push(g_node(g, pen.g, n)?);
    }
    Ok((g.mean_all(&terms)?, norms))
}

fn finish(g: &mut Graph, objective: NodeId, penalty: NodeId, norms: Vec<f64>, lambda: f64) -> Result<LossTerms> {
    let penalty_mean = g.scalar_value(penalty)?;
    let neg = g.neg(objective)?;
    let loss = if lambda == 0.0 {
        neg
    } else {
        let weighted = g.scale(penalty, lambda)?;
        g.add(neg, weighted)?
    };
    let value = g.scalar_value(loss)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            node: loss,
            op: g.op_kind(loss),
        });
    }
    Ok(LossTerms {
        loss,
        penalty_mean,
        grad_norms: norms,
    })
}

/// Critic loss on a real and a fake batch.
///
/// * `None`: `E_real F(f) + E_fake f₂(f)`.
/// * `Paired`: `E F(f(x₁) − f(x₂))` over index-paired samples.
/// * `Average`: `½[E_real f₁(f − E_fake f) + E_fake f₂(f − E_real f)]`.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss<M: DiffModel + ?Sized>(
    g: &mut Graph,
    critic: &Bound<'_, M>,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    f: ObjectiveF,
    pen: &PenaltySpec,
    mode: RelativisticMode,
    rng: &mut impl Rng,
) -> Result<LossTerms> {
    nonempty(real, "real batch")?;
    nonempty(fake, "fake batch")?;
    pen.validate()?;
    let fr = scores(g, critic, real)?;
    let ff = scores(g, critic, fake)?;
    let objective = match mode {
        RelativisticMode::None => {
            let a = map_mean(g, &fr, |g, z| f_node(g, f, z))?;
            let b = map_mean(g, &ff, |g, z| f2_node(g, f, z))?;
            g.add(a, b)?
        }
        RelativisticMode::Paired => {
            paired(real.len(), fake.len())?;
            let diffs = fr
                .iter()
                .zip(&ff)
                .map(|(&a, &b)| g.sub(a, b))
                .collect::<Result<Vec<_>>>()?;
            map_mean(g, &diffs, |g, z| f_node(g, f, z))?
        }
        RelativisticMode::Average => relativistic_average(g, &fr, &ff, f)?,
    };
    let points = penalty_points(real, fake, pen.sample_at, rng)?;
    let (penalty, norms) = penalty_term(g, critic, &points, pen)?;
    finish(g, objective, penalty, norms, pen.lambda)
}

/// `½[E_a f₁(f(a) − E f(b)) + E_b f₂(f(b) − E f(a))]`.
fn relativistic_average(g: &mut Graph, fa: &[NodeId], fb: &[NodeId], f: ObjectiveF) -> Result<NodeId> {
    let ma = g.mean_all(fa)?;
    let mb = g.mean_all(fb)?;
    let a = map_mean(g, fa, |g, z| {
        let d = g.sub(z, mb)?;
        f_node(g, f, d)
    })?;
    let b = map_mean(g, fb, |g, z| {
        let d = g.sub(z, ma)?;
        f2_node(g, f, d)
    })?;
    let s = g.add(a, b)?;
    g.scale(s, 0.5)
}

/// Generator loss for latent codes pushed through `generator` and scored by
/// `critic`. The relativistic modes swap the roles of real and fake.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss<C: DiffModel + ?Sized, G: DiffModel + ?Sized>(
    g: &mut Graph,
    critic: &Bound<'_, C>,
    generator: &Bound<'_, G>,
    latent: &[Vec<f64>],
    f: ObjectiveF,
    mode: RelativisticMode,
    real: Option<&[Vec<f64>]>,
) -> Result<NodeId> {
    nonempty(latent, "latent batch")?;
    let ff = latent
        .iter()
        .map(|z| {
            let x = generator.forward_point(g, z)?;
            critic.forward(g, x)
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = match mode {
        RelativisticMode::None => map_mean(g, &ff, |g, z| f3_node(g, f, z))?,
        RelativisticMode::Paired | RelativisticMode::Average => {
            let real = real.ok_or(Error::MissingRealBatch)?;
            nonempty(real, "real batch")?;
            let fr = scores(g, critic, real)?;
            let objective = if mode == RelativisticMode::Paired {
                paired(real.len(), latent.len())?;
                let diffs = ff
                    .iter()
                    .zip(&fr)
                    .map(|(&a, &b)| g.sub(a, b))
                    .collect::<Result<Vec<_>>>()?;
                map_mean(g, &diffs, |g, z| f_node(g, f, z))?
            } else {
                relativistic_average(g, &ff, &fr, f)?
            };
            g.neg(objective)?
        }
    };
    let value = g.scalar_value(loss)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            node: loss,
            op: g.op_kind(loss),
        });
    }
    Ok(loss)
}

/// Expected-margin classifier loss `−E F(y·f(x)) + λ·E g(‖∇f(x̃)‖)` with
/// `x̃` drawn per `pen.sample_at` between positive and negative samples.
pub fn mmc_loss<M: DiffModel + ?Sized>(
    g: &mut Graph,
    model: &Bound<'_, M>,
    positive: &[Vec<f64>],
    negative: &[Vec<f64>],
    f: ObjectiveF,
    pen: &PenaltySpec,
    rng: &mut impl Rng,
) -> Result<LossTerms> {
    nonempty(positive, "positive batch")?;
    nonempty(negative, "negative batch")?;
    pen.validate()?;
    let fp = scores(g, model, positive)?;
    let fnn = scores(g, model, negative)?;
    let mut terms = Vec::with_capacity(fp.len() + fnn.len());
    for &z in &fp {
        terms.push(f_node(g, f, z)?);
    }
    for &z in &fnn {
        terms.push(f2_node(g, f, z)?);
    }
    let objective = g.mean_all(&terms)?;
    let points = penalty_points(positive, negative, pen.sample_at, rng)?;
    let (penalty, norms) = penalty_term(g, model, &points, pen)?;
    finish(g, objective, penalty, norms, pen.lambda)
}
