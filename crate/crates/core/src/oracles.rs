//! Brute-force reference computations used to check the fast paths.

use rand::Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::geometry::{lp_norm, NormOrder};
use crate::models::Critic;

/// Central differences, one coordinate at a time.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

// ── projection onto the decision boundary ───────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionConfig {
    /// Allowed `|f(x0) − level|`.
    pub tol: f64,
    pub restarts: usize,
    /// The boundary is `{f = level}`.
    pub level: f64,
    /// Search box is `[−half_width, half_width]^d`.
    pub half_width: f64,
    pub inner_iterations: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            tol: 1e-6,
            restarts: 16,
            level: 0.0,
            half_width: 3.0,
            inner_iterations: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    pub point: Vec<f64>,
    pub distance: f64,
    pub residual: f64,
}

/// Nearest point of `{f = level}` to `x` under the `p`-norm.
///
/// Each restart minimises `‖r‖_p + μ(f(x + r) − level)²` by proximal
/// gradient steps while `μ` doubles from 1 to 2¹⁶, then bisects along the
/// ray through the result to land on the boundary.
pub fn project_to_boundary<C: Critic + ?Sized>(
    model: &C,
    x: &[f64],
    p: NormOrder,
    cfg: &ProjectionConfig,
    rng: &mut impl Rng,
) -> Result<ProjectionResult> {
    if p == NormOrder::SmoothMax {
        return Err(Error::config("p", "projection needs an L1, L2 or Linf norm"));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::config("tol", "must be positive"));
    }
    let d = model.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let h = |z: &[f64]| model.value(z) - cfg.level;
    let h0 = h(x);
    if h0 == 0.0 {
        return Ok(ProjectionResult {
            point: x.to_vec(),
            distance: 0.0,
            residual: 0.0,
        });
    }
    let starts = start_points(x, cfg, rng);
    if !box_has_sign_change(&h, h0, d, cfg.half_width, &starts) {
        return Err(Error::NoSignChange);
    }
    let mut best: Option<ProjectionResult> = None;
    for start in &starts {
        let r0: Vec<f64> = start.iter().zip(x).map(|(s, xi)| s - xi).collect();
        let r = penalty_descent(model, x, r0, p, cfg);
        let Some(point) = polish(&h, h0, x, &r) else {
            continue;
        };
        let residual = h(&point).abs();
        if residual > cfg.tol {
            continue;
        }
        let diff: Vec<f64> = point.iter().zip(x).map(|(a, b)| a - b).collect();
        let distance = lp_norm(&diff, p)?;
        if best.as_ref().is_none_or(|b| distance < b.distance) {
            best = Some(ProjectionResult {
                point,
                distance,
                residual,
            });
        }
    }
    best.ok_or(Error::NoSignChange)
}

fn start_points(x: &[f64], cfg: &ProjectionConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let w = cfg.half_width;
    let mut out = vec![x.to_vec()];
    for _ in 1..cfg.restarts.max(1) {
        out.push((0..x.len()).map(|_| rng.random_range(-w..=w)).collect());
    }
    out
}

fn box_has_sign_change(h: &impl Fn(&[f64]) -> f64, h0: f64, d: usize, w: f64, extra: &[Vec<f64>]) -> bool {
    let opposite = |z: &[f64]| h(z) * h0 <= 0.0;
    if extra.iter().any(|z| opposite(z)) {
        return true;
    }
    // Regular grid over the box, coarser in higher dimension.
    let per_axis = match d {
        1 => 401,
        2 => 81,
        3 => 21,
        _ => 5,
    };
    let total = (per_axis as u64).saturating_pow(d as u32).min(1 << 20);
    let mut z = vec![0.0; d];
    for idx in 0..total {
        let mut k = idx;
        for zi in z.iter_mut() {
            let step = (k % per_axis as u64) as f64 / (per_axis - 1) as f64;
            *zi = -w + 2.0 * w * step;
            k /= per_axis as u64;
        }
        if opposite(&z) {
            return true;
        }
    }
    false
}

fn penalty_descent<C: Critic + ?Sized>(model: &C, x: &[f64], mut r: Vec<f64>, p: NormOrder, cfg: &ProjectionConfig) -> Vec<f64> {
    let shifted = |r: &[f64]| -> Vec<f64> { x.iter().zip(r).map(|(a, b)| a + b).collect() };
    let mut step = 1.0;
    for k in 0..=16 {
        let mu = f64::from(1u32 << k);
        let smooth = |r: &[f64]| {
            let v = model.value(&shifted(r)) - cfg.level;
            mu * v * v
        };
        for _ in 0..cfg.inner_iterations {
            let xr = shifted(&r);
            let v = model.value(&xr) - cfg.level;
            let s0 = mu * v * v;
            let grad: Vec<f64> = model.input_grad(&xr).iter().map(|g| 2.0 * mu * v * g).collect();
            let mut accepted = None;
            for _ in 0..60 {
                let moved: Vec<f64> = r.iter().zip(&grad).map(|(ri, gi)| ri - step * gi).collect();
                let cand = prox(&moved, step, p);
                let delta: Vec<f64> = cand.iter().zip(&r).map(|(a, b)| a - b).collect();
                let lin: f64 = grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
                let quad: f64 = delta.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
                if smooth(&cand) <= s0 + lin + quad + 1e-15 * s0.abs() {
                    accepted = Some((cand, delta));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, delta)) = accepted else { break };
            let moved = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
            let scale = 1.0 + r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r = cand;
            step *= 1.5;
            if moved <= 1e-14 * scale {
                break;
            }
        }
    }
    r
}

/// Proximal operator of `t·‖·‖_p`.
fn prox(v: &[f64], t: f64, p: NormOrder) -> Vec<f64> {
    match p {
        NormOrder::L1 => v.iter().map(|x| x.signum() * (x.abs() - t).max(0.0)).collect(),
        NormOrder::L2 => {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n <= t {
                vec![0.0; v.len()]
            } else {
                v.iter().map(|x| x * (1.0 - t / n)).collect()
            }
        }
        // Moreau: prox of t‖·‖_∞ is v minus its projection onto the L1 ball of radius t.
        _ => {
            let proj = project_l1_ball(v, t);
            v.iter().zip(proj).map(|(a, b)| a - b).collect()
        }
    }
}

fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - radius) / (j + 1) as f64;
        if *uj > t {
            theta = t;
        }
    }
    v.iter().map(|x| x.signum() * (x.abs() - theta).max(0.0)).collect()
}

/// Bisection for the boundary crossing on the ray `x + t·r`, `t > 0`.
fn polish(h: &impl Fn(&[f64]) -> f64, h0: f64, x: &[f64], r: &[f64]) -> Option<Vec<f64>> {
    if r.iter().all(|v| *v == 0.0) {
        return None;
    }
    let at = |t: f64| -> Vec<f64> { x.iter().zip(r).map(|(a, b)| a + t * b).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut grown = 0;
    while h(&at(hi)) * h0 > 0.0 {
        lo = hi;
        hi *= 2.0;
        grown += 1;
        if grown > 60 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(&at(mid)) * h0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (at(lo), at(hi));
    Some(if h(&a).abs() <= h(&b).abs() { a } else { b })
}

// ── exact Wasserstein-1 ─────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct W1Result {
    pub value: f64,
    /// `matching[i]` is the index in the second sample set paired with `i`.
    pub matching: Vec<usize>,
}

/// Empirical W1 between equal-size samples: the optimal assignment on the
/// pairwise ground-metric costs, solved exactly.
pub fn exact_w1(p: &[Vec<f64>], q: &[Vec<f64>], ground: NormOrder) -> Result<W1Result> {
    if p.len() != q.len() {
        return Err(Error::UnequalSampleCounts { p: p.len(), q: q.len() });
    }
    if p.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    let n = p.len();
    let mut cost = vec![0.0; n * n];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
            }
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            cost[i * n + j] = lp_norm(&diff, ground)?;
        }
    }
    let matching = assignment(&cost, n);
    let value = matching.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64;
    Ok(W1Result { value, matching })
}

/// Shortest-augmenting-path Hungarian method on a dense `n × n` cost
/// matrix. Returns the column assigned to each row.
fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based rows/columns; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut matching = vec![0; n];
    for j in 1..=n {
        matching[row_of[j] - 1] = j - 1;
    }
    matching
}

// ── Lipschitz quotient ──────────────────────────────────────────────────

/// Points inserted on each pair's segment.
pub const LIPSCHITZ_REFINEMENT: usize = 10;

/// Largest `|f(a) − f(b)| / ‖a − b‖_p` over every pair of samples and over
/// consecutive points of the segment between them.
pub fn lipschitz_quotient_max<C: Critic + ?Sized>(model: &C, samples: &[Vec<f64>], p: NormOrder) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: samples.len() });
    }
    let values: Vec<f64> = samples.iter().map(|s| model.value(s)).collect();
    let mut best: f64 = 0.0;
    let steps = LIPSCHITZ_REFINEMENT + 1;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (a, b) = (&samples[i], &samples[j]);
            let diff: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
            let dist = lp_norm(&diff, p)?;
            if dist < 1e-9 {
                continue;
            }
            best = best.max((values[j] - values[i]).abs() / dist);
            let sub = dist / steps as f64;
            let mut prev = values[i];
            for k in 1..=steps {
                let cur = if k == steps {
                    values[j]
                } else {
                    let t = k as f64 / steps as f64;
                    let z: Vec<f64> = a.iter().zip(&diff).map(|(x, d)| x + t * d).collect();
                    model.value(&z)
                };
                best = best.max((cur - prev).abs() / sub);
                prev = cur;
            }
        }
    }
    Ok(best)
}

// ── exact max-min-margin linear separator ───────────────────────────────

/// `f(x) = (cos θ, sin θ)·x − offset`, positive on the `+1` class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separator {
    /// Normal direction θ in radians, in `[0, 2π)`.
    pub angle: f64,
    pub offset: f64,
    pub min_margin: f64,
}

impl Separator {
    pub fn normal(&self) -> [f64; 2] {
        [self.angle.cos(), self.angle.sin()]
    }
}

pub const SEPARATOR_GRID_DEGREES: f64 = 0.1;

/// Grid search over unit normals; for each direction the optimal offset is
/// the midpoint between the innermost projections of the two classes.
pub fn brute_force_maxmin_margin(data: &LabeledDataset) -> Result<Separator> {
    if data.points.iter().any(|x| x.len() != 2) {
        return Err(Error::config("dataset", "separator search is two-dimensional"));
    }
    let steps = (360.0 / SEPARATOR_GRID_DEGREES).round() as usize;
    let mut best: Option<Separator> = None;
    for k in 0..steps {
        let angle = (k as f64 * SEPARATOR_GRID_DEGREES).to_radians();
        let (c, s) = (angle.cos(), angle.sin());
        let mut min_pos = f64::INFINITY;
        let mut max_neg = f64::NEG_INFINITY;
        for (x, y) in data.iter() {
            let proj = c * x[0] + s * x[1];
            if y > 0.0 {
                min_pos = min_pos.min(proj);
            } else {
                max_neg = max_neg.max(proj);
            }
        }
        let margin = 0.5 * (min_pos - max_neg);
        if best.is_none_or(|b| margin > b.min_margin) {
            best = Some(Separator {
                angle,
                offset: 0.5 * (min_pos + max_neg),
                min_margin: margin,
            });
        }
    }
    match best {
        Some(b) if b.min_margin > 0.0 => Ok(b),
        _ => Err(Error::NotSeparable),
    }
}

/// Smallest angle between two directions, in degrees.
pub fn angle_between_degrees(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}
