//! Synthetic distributions and labelled datasets.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A distribution over points, described declaratively.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    /// Isotropic Gaussian.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Equal-weight mixture of `modes` isotropic Gaussians centred at angles
    /// `2πj/modes` on the circle of the given radius.
    GaussianRing { modes: usize, radius: f64, std: f64 },
    StandardNormal { dim: usize },
    /// `(x1, U(−1, 1))`: one class of the two-lines construction.
    VerticalLine { x1: f64 },
    PointMass { point: Vec<f64> },
    /// Uniform on a disk in the plane.
    Disk { center: [f64; 2], radius: f64 },
}

impl Distribution {
    pub fn dim(&self) -> usize {
        match self {
            Distribution::Gaussian { mean, .. } => mean.len(),
            Distribution::StandardNormal { dim } => *dim,
            Distribution::PointMass { point } => point.len(),
            Distribution::GaussianRing { .. } | Distribution::VerticalLine { .. } | Distribution::Disk { .. } => 2,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let bad = |reason: &str| Err(Error::config(field, reason));
        match self {
            Distribution::Gaussian { mean, std } => {
                if mean.is_empty() {
                    return bad("mean must not be empty");
                }
                if !(*std > 0.0) {
                    return bad("std must be positive");
                }
            }
            Distribution::GaussianRing { modes, radius, std } => {
                if *modes == 0 {
                    return bad("modes must be at least 1");
                }
                if !(*std > 0.0) || !(*radius >= 0.0) {
                    return bad("std must be positive and radius non-negative");
                }
            }
            Distribution::StandardNormal { dim } if *dim == 0 => return bad("dim must be at least 1"),
            Distribution::PointMass { point } if point.is_empty() => return bad("point must not be empty"),
            Distribution::Disk { radius, .. } if !(*radius >= 0.0) => return bad("radius must be non-negative"),
            _ => {}
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            Distribution::Gaussian { mean, std } => mean.iter().map(|m| m + std * normal(rng)).collect(),
            Distribution::GaussianRing { modes, radius, std } => {
                let j = rng.random_range(0..*modes);
                let theta = 2.0 * PI * j as f64 / *modes as f64;
                vec![
                    radius * theta.cos() + std * normal(rng),
                    radius * theta.sin() + std * normal(rng),
                ]
            }
            Distribution::StandardNormal { dim } => (0..*dim).map(|_| normal(rng)).collect(),
            Distribution::VerticalLine { x1 } => vec![*x1, rng.random_range(-1.0..=1.0)],
            Distribution::PointMass { point } => point.clone(),
            Distribution::Disk { center, radius } => {
                let r = radius * rng.random::<f64>().sqrt();
                let theta = 2.0 * PI * rng.random::<f64>();
                vec![center[0] + r * theta.cos(), center[1] + r * theta.sin()]
            }
        }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// A seeded i.i.d. stream from a [`Distribution`].
#[derive(Clone, Debug)]
pub struct Sampler {
    dist: Distribution,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(dist: Distribution, seed: u64) -> Self {
        Sampler {
            dist,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    pub fn dim(&self) -> usize {
        self.dist.dim()
    }

    pub fn sample(&mut self) -> Vec<f64> {
        self.dist.sample(&mut self.rng)
    }

    pub fn batch(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample()).collect()
    }

    /// Same distribution, independent stream.
    pub fn with_seed(&self, seed: u64) -> Self {
        Sampler::new(self.dist.clone(), seed)
    }
}

pub fn gaussian_ring(modes: usize, radius: f64, std: f64, seed: u64) -> Result<Sampler> {
    let dist = Distribution::GaussianRing { modes, radius, std };
    dist.validate("gaussian_ring")?;
    Ok(Sampler::new(dist, seed))
}

pub fn latent_sampler(dim: usize, seed: u64) -> Result<Sampler> {
    let dist = Distribution::StandardNormal { dim };
    dist.validate("latent_dim")?;
    Ok(Sampler::new(dist, seed))
}

/// Points with labels in `{−1, +1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl LabeledDataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: labels.len(),
            });
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::config("labels", "labels must be ±1"));
        }
        if !labels.contains(&1.0) || !labels.contains(&-1.0) {
            return Err(Error::config("labels", "both classes must be present"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("points", "coordinates must be finite"));
        }
        Ok(LabeledDataset { points, labels })
    }

    fn from_classes(positive: Vec<Vec<f64>>, negative: Vec<Vec<f64>>) -> Result<Self> {
        let labels = std::iter::repeat_n(1.0, positive.len())
            .chain(std::iter::repeat_n(-1.0, negative.len()))
            .collect();
        let mut points = positive;
        points.extend(negative);
        Self::new(points, labels)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }

    pub fn class(&self, label: f64) -> Vec<Vec<f64>> {
        self.iter().filter(|(_, y)| *y == label).map(|(x, _)| x.to_vec()).collect()
    }

    /// `x1,x2,y` rows with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,x2,y\n");
        for (x, y) in self.iter() {
            let _ = writeln!(out, "{},{},{}", x[0], x.get(1).copied().unwrap_or(0.0), y);
        }
        out
    }
}

/// Class `+1` on the line `x₍₁₎ = 1`, class `−1` on `x₍₁₎ = −1`, with
/// `x₍₂₎ ~ U(−1, 1)` on both.
pub fn two_lines(n_per_class: usize, rng: &mut impl Rng) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(Error::config("n_per_class", "must be at least 1"));
    }
    let pos = Distribution::VerticalLine { x1: 1.0 };
    let neg = Distribution::VerticalLine { x1: -1.0 };
    let positive = (0..n_per_class).map(|_| pos.sample(rng)).collect();
    let negative = (0..n_per_class).map(|_| neg.sample(rng)).collect();
    LabeledDataset::from_classes(positive, negative)
}

/// Uniform disks of radius ½ centred at `(±(½ + gap), 0)`; the best
/// separator `x₍₁₎ = 0` has minimum margin `gap`.
pub fn blobs_separable(gap: f64, n_per_class: usize, rng: &mut impl Rng) -> Result<LabeledDataset> {
    if !(gap > 0.0) {
        return Err(Error::config("gap", "must be positive"));
    }
    if n_per_class == 0 {
        return Err(Error::config("n_per_class", "must be at least 1"));
    }
    let c = 0.5 + gap;
    let pos = Distribution::Disk { center: [c, 0.0], radius: 0.5 };
    let neg = Distribution::Disk { center: [-c, 0.0], radius: 0.5 };
    let positive = (0..n_per_class).map(|_| pos.sample(rng)).collect();
    let negative = (0..n_per_class).map(|_| neg.sample(rng)).collect();
    LabeledDataset::from_classes(positive, negative)
}

/// Declarative description of a labelled dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoLines {
        n_per_class: usize,
    },
    BlobsSeparable {
        gap: f64,
        n_per_class: usize,
    },
    /// Class `+1` from `positive`, class `−1` from `negative`.
    Pair {
        positive: Distribution,
        negative: Distribution,
        n_per_class: usize,
    },
}

impl DatasetSpec {
    pub fn validate(&self, field: &str) -> Result<()> {
        match self {
            DatasetSpec::TwoLines { n_per_class } | DatasetSpec::BlobsSeparable { n_per_class, .. } | DatasetSpec::Pair { n_per_class, .. }
                if *n_per_class == 0 =>
            {
                Err(Error::config(format!("{field}.n_per_class"), "must be at least 1"))
            }
            DatasetSpec::BlobsSeparable { gap, .. } if !(*gap > 0.0) => {
                Err(Error::config(format!("{field}.gap"), "must be positive"))
            }
            DatasetSpec::Pair { positive, negative, .. } => {
                positive.validate(&format!("{field}.positive"))?;
                negative.validate(&format!("{field}.negative"))?;
                if positive.dim() != negative.dim() {
                    return Err(Error::config(field, "class dimensions differ"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::Pair { positive, .. } => positive.dim(),
            _ => 2,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<LabeledDataset> {
        self.validate("dataset")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            DatasetSpec::TwoLines { n_per_class } => two_lines(*n_per_class, &mut rng),
            DatasetSpec::BlobsSeparable { gap, n_per_class } => blobs_separable(*gap, *n_per_class, &mut rng),
            DatasetSpec::Pair {
                positive,
                negative,
                n_per_class,
            } => {
                let p = (0..*n_per_class).map(|_| positive.sample(&mut rng)).collect();
                let n = (0..*n_per_class).map(|_| negative.sample(&mut rng)).collect();
                LabeledDataset::from_classes(p, n)
            }
        }
    }
}

/// A dataset description plus the seed it is drawn with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeededDataset {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub seed: u64,
}

impl SeededDataset {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("dataset", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_lines_support() {
        let d = two_lines(500, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (x, y) in d.iter() {
            assert_eq!(x[0], y);
            assert!(x[1].abs() <= 1.0);
        }
        assert_eq!(d.class(1.0).len(), 500);
    }

    #[test]
    fn ring_geometry_and_mean() {
        let concentrated = gaussian_ring(1, 0.0, 1e-9, 0).unwrap().batch(100);
        assert!(concentrated.iter().all(|x| x[0].abs() < 1e-7 && x[1].abs() < 1e-7));

        let mut ring = gaussian_ring(8, 2.0, 0.02, 7).unwrap();
        let n = 100_000;
        let pts = ring.batch(n);
        let mean: Vec<f64> = (0..2).map(|i| pts.iter().map(|p| p[i]).sum::<f64>() / n as f64).collect();
        // Mode-choice variance dominates: per-coordinate std ≈ radius/√2.
        let bound = 3.0 * (2.0 / 2f64.sqrt()) / (n as f64).sqrt();
        assert!(mean.iter().all(|m| m.abs() < bound), "{mean:?}");
        for p in &pts {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 2.0).abs() < 0.2);
        }
    }

    #[test]
    fn latent_covariance_is_identity() {
        let mut z = latent_sampler(8, 3).unwrap();
        let n = 100_000;
        let pts = z.batch(n);
        for i in 0..8 {
            for j in 0..8 {
                let c = pts.iter().map(|p| p[i] * p[j]).sum::<f64>() / n as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((c - target).abs() < 0.03, "cov[{i}][{j}] = {c}");
            }
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let a = gaussian_ring(8, 2.0, 0.1, 11).unwrap().batch(50);
        let b = gaussian_ring(8, 2.0, 0.1, 11).unwrap().batch(50);
        let c = gaussian_ring(8, 2.0, 0.1, 12).unwrap().batch(50);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn blobs_keep_their_gap() {
        let d = blobs_separable(1.0, 400, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (x, y) in d.iter() {
            let c = y * 1.5;
            assert!(((x[0] - c).powi(2) + x[1].powi(2)).sqrt() <= 0.5 + 1e-12);
            assert!(y * x[0] >= 1.0 - 1e-12);
        }
        assert!(blobs_separable(0.0, 5, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }

    #[test]
    fn csv_round_trips_through_text() {
        let d = DatasetSpec::TwoLines { n_per_class: 3 }.generate(5).unwrap();
        let csv = d.to_csv();
        assert!(csv.starts_with("x1,x2,y\n"));
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 6);
        for (row, (x, y)) in rows.iter().zip(d.iter()) {
            assert_eq!(row, &vec![x[0], x[1], y]);
        }
    }

    #[test]
    fn spec_rejects_unknown_fields() {
        let ok: DatasetSpec = serde_json::from_str(r#"{"kind":"two_lines","n_per_class":4}"#).unwrap();
        assert_eq!(ok, DatasetSpec::TwoLines { n_per_class: 4 });
        assert!(serde_json::from_str::<DatasetSpec>(r#"{"kind":"two_lines","n_per_class":4,"x":1}"#).is_err());
        assert!(serde_json::from_str::<Distribution>(r#"{"kind":"gaussian","mean":[0],"std":1,"extra":0}"#).is_err());
    }

    #[test]
    fn dataset_invariants() {
        assert!(LabeledDataset::new(vec![vec![0.0, 0.0]], vec![1.0]).is_err());
        assert!(LabeledDataset::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![1.0, 0.5]).is_err());
        assert!(LabeledDataset::new(vec![vec![f64::NAN, 0.0], vec![1.0, 0.0]], vec![1.0, -1.0]).is_err());
    }
}
