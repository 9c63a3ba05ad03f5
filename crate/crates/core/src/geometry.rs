//! Norms, dual norms, the smooth maximum, and input-space margins.
//!
//! All margin estimates share the form `numerator / ‖∇ₓf(x)‖_q` where `q`
//! is the dual of the margin norm `p`. They are built on a caller-owned
//! graph so the estimate stays differentiable with respect to the model.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::models::{Bound, DiffModel};

/// Margin denominators at or below this are reported as errors.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormOrder {
    L1,
    L2,
    Linf,
    /// Smooth maximum of absolute components. Usable as a gradient-norm
    /// penalty, never as a margin norm.
    SmoothMax,
}

impl NormOrder {
    pub const ALL: [NormOrder; 4] = [
        NormOrder::L1,
        NormOrder::L2,
        NormOrder::Linf,
        NormOrder::SmoothMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormOrder::L1 => "l1",
            NormOrder::L2 => "l2",
            NormOrder::Linf => "linf",
            NormOrder::SmoothMax => "smoothmax",
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hölder conjugate: `1/p + 1/q = 1`.
pub fn dual_order(p: NormOrder) -> Result<NormOrder> {
    match p {
        NormOrder::L1 => Ok(NormOrder::Linf),
        NormOrder::L2 => Ok(NormOrder::L2),
        NormOrder::Linf => Ok(NormOrder::L1),
        NormOrder::SmoothMax => Err(Error::NoDual(p)),
    }
}

pub fn lp_norm(v: &[f64], order: NormOrder) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("norm argument"));
    }
    Ok(match order {
        NormOrder::L1 => v.iter().map(|x| x.abs()).sum(),
        NormOrder::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormOrder::Linf => v.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
        NormOrder::SmoothMax => {
            let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
            smooth_max(&abs)?
        }
    })
}

/// `Σ vᵢ e^{vᵢ} / Σ e^{vᵢ}`, evaluated with the maximum subtracted inside
/// the exponentials.
pub fn smooth_max(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("smooth-max argument"));
    }
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for &x in v {
        let e = (x - m).exp();
        num += x * e;
        den += e;
    }
    Ok(num / den)
}

/// Graph version of [`lp_norm`] on a vector node.
pub fn norm_node(g: &mut Graph, v: NodeId, order: NormOrder) -> Result<NodeId> {
    match order {
        NormOrder::L1 => {
            let a = g.abs(v)?;
            g.sum(a)
        }
        NormOrder::L2 => {
            let sq = g.mul(v, v)?;
            let s = g.sum(sq)?;
            g.power(s, 0.5)
        }
        NormOrder::Linf => {
            let a = g.abs(v)?;
            g.max_reduce(a)
        }
        NormOrder::SmoothMax => {
            let a = g.abs(v)?;
            smooth_max_node(g, a)
        }
    }
}

pub fn smooth_max_node(g: &mut Graph, v: NodeId) -> Result<NodeId> {
    let ones = g.constant(Tensor::filled(g.shape(v), 1.0))?;
    let m = g.max_reduce(v)?;
    let shift = g.mul(m, ones)?;
    let centered = g.sub(v, shift)?;
    let e = g.exp(centered)?;
    let weighted = g.mul(v, e)?;
    let num = g.sum(weighted)?;
    let den = g.sum(e)?;
    g.div(num, den)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarginKind {
    GeometricBefore,
    GeometricAfterL2,
    RelativisticAverage,
    RelativisticPaired,
    RelativisticPairedApprox,
}

/// A signed margin in input-space distance units, with the graph node that
/// produced it.
#[derive(Clone, Copy, Debug)]
pub struct MarginEstimate {
    pub value: f64,
    pub kind: MarginKind,
    pub node: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct PairedMargin {
    pub exact: MarginEstimate,
    /// Shared denominator evaluated at the first point.
    pub approximate: MarginEstimate,
}

/// `f(x)` and `‖∇ₓf(x)‖_q` as nodes on `g`.
fn score_and_grad_norm<M: DiffModel + ?Sized>(
    g: &mut Graph,
    critic: &Bound<'_, M>,
    x: &[f64],
    q: NormOrder,
) -> Result<(NodeId, NodeId)> {
    let xv = g.variable(Tensor::vector(x.to_vec()))?;
    let f = critic.forward(g, xv)?;
    let grad = g.grad(f, &[xv])?.get(xv).expect("requested variable");
    let norm = norm_node(g, grad, q)?;
    let n = g.scalar_value(norm)?;
    if n <= DENOMINATOR_FLOOR {
        return Err(Error::VanishingGradient { norm: n });
    }
    Ok((f, norm))
}

fn ratio(g: &mut Graph, num: NodeId, den: NodeId) -> Result<NodeId> {
    g.div(num, den)
}

fn estimate(g: &Graph, node: NodeId, kind: MarginKind) -> Result<MarginEstimate> {
    Ok(MarginEstimate {
        value: g.scalar_value(node)?,
        kind,
        node,
    })
}

fn check_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(Error::config("label", format!("{y} is not ±1")))
    }
}

/// `y·f(x) / ‖∇ₓf(x)‖_q` with `q = dual_order(p)`: the first-order margin
/// obtained by linearising the constraint before solving the projection.
pub fn margin_before<M: DiffModel + ?Sized>(
    g: &mut Graph,
    critic: &Bound<'_, M>,
    x: &[f64],
    y: f64,
    p: NormOrder,
) -> Result<MarginEstimate> {
    check_label(y)?;
    let q = dual_order(p)?;
    let (f, norm) = score_and_grad_norm(g, critic, x, q)?;
    let yf = g.scale(f, y)?;
    let m = ratio(g, yf, norm)?;
    estimate(g, m, MarginKind::GeometricBefore)
}

/// The L² pseudo-margin from linearising after the projection is solved.
/// Same closed form as `margin_before(.., L2)`.
pub fn margin_after_l2<M: DiffModel + ?Sized>(
    g: &mut Graph,
    critic: &Bound<'_, M>,
    x: &[f64],
    y: f64,
) -> Result<MarginEstimate> {
    let m = margin_before(g, critic, x, y, NormOrder::L2)?;
    Ok(MarginEstimate {
        kind: MarginKind::GeometricAfterL2,
        ..m
    })
}

/// Numerator of the relativistic average margin:
/// `((y+1)/2)(f − E_fake f) + ((y−1)/2)(f − E_real f)`.
pub fn relativistic_average_numerator(f: f64, y: f64, mean_f_real: f64, mean_f_fake: f64) -> f64 {
    ((y + 1.0) / 2.0) * (f - mean_f_fake) + ((y - 1.0) / 2.0) * (f - mean_f_real)
}

pub fn relativistic_average_margin<M: DiffModel + ?Sized>(
    g: &mut Graph,
    critic: &Bound<'_, M>,
    x: &[f64],
    y: f64,
    mean_f_real: f64,
    mean_f_fake: f64,
    p: NormOrder,
) -> Result<MarginEstimate> {
    check_label(y)?;
    let q = dual_order(p)?;
    let (f, norm) = score_and_grad_norm(g, critic, x, q)?;
    // The batch means enter as constants.
    let pos = g.scalar((y + 1.0) / 2.0)?;
    let neg = g.scalar((y - 1.0) / 2.0)?;
    let off_fake = g.add_scalar(f, -mean_f_fake)?;
    let off_real = g.add_scalar(f, -mean_f_real)?;
    let a = g.mul(pos, off_fake)?;
    let b = g.mul(neg, off_real)?;
    let num = g.add(a, b)?;
    let m = ratio(g, num, norm)?;
    estimate(g, m, MarginKind::RelativisticAverage)
}

/// `f(x1)/‖∇f(x1)‖_q − f(x2)/‖∇f(x2)‖_q`, plus the shared-denominator
/// approximation `(f(x1) − f(x2)) / ‖∇f(x1)‖_q`.
pub fn relativistic_paired_margin<M: DiffModel + ?Sized>(
    g: &mut Graph,
    critic: &Bound<'_, M>,
    x1: &[f64],
    x2: &[f64],
    p: NormOrder,
) -> Result<PairedMargin> {
    let q = dual_order(p)?;
    let (f1, n1) = score_and_grad_norm(g, critic, x1, q)?;
    let (f2, n2) = score_and_grad_norm(g, critic, x2, q)?;
    let m1 = ratio(g, f1, n1)?;
    let m2 = ratio(g, f2, n2)?;
    let exact = g.sub(m1, m2)?;
    let diff = g.sub(f1, f2)?;
    let approx = ratio(g, diff, n1)?;
    Ok(PairedMargin {
        exact: estimate(g, exact, MarginKind::RelativisticPaired)?,
        approximate: estimate(g, approx, MarginKind::RelativisticPairedApprox)?,
    })
}
