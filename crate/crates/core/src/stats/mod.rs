//! Estimators, two-sample tests and the exact transient oracle.

mod uniformization;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::matrix::Matrix;

pub use uniformization::{
    transient_distribution, TransientDistribution, TruncatedGenerator, DEFAULT_LEAK_THRESHOLD,
};

/// Probability (or frequency) table over integer lattice points.
pub type LatticeDistribution = BTreeMap<Vec<i64>, f64>;

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Classical two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "samples must be nonempty");
    let (a, b) = (sorted(a), sorted(b));
    let statistic = ks_statistic_sorted(&a, &b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let en = (n * m / (n + m)).sqrt();
    KsResult {
        statistic,
        p_value: kolmogorov_survival((en + 0.12 + 0.11 / en) * statistic),
    }
}

fn ks_statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp();
        let s: f64 = (1..=7)
            .map(|k| y.powi((2 * k - 1) * (2 * k - 1)))
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * x * x).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Wasserstein-1 distance between two empirical laws on the line.
///
/// Computed exactly through the quantile coupling, so the samples may have
/// different sizes; for equal sizes it is the mean absolute difference of the
/// sorted samples.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    wasserstein1_sorted(&sorted(a), &sorted(b))
}

pub fn wasserstein1_sorted(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "samples must be nonempty");
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    let (n, m) = (a.len() as u128, b.len() as u128);
    // Quantile levels i/n and j/m on the common grid 1/(n m).
    let (mut i, mut j) = (0usize, 0usize);
    let mut level: u128 = 0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        acc += (next - level) as f64 * (a[i] - b[j]).abs();
        level = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    acc / (n * m) as f64
}

/// Percentile bootstrap interval for the W₁ distance, resampling both sides.
pub fn bootstrap_w1_interval<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    reps: usize,
    level: f64,
    rng: &mut R,
) -> (f64, f64) {
    let (a, b) = (sorted(a), sorted(b));
    let mut idx_a = vec![0u32; a.len()];
    let mut idx_b = vec![0u32; b.len()];
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    let mut stats: Vec<f64> = (0..reps)
        .map(|_| {
            resample_sorted(&a, &mut idx_a, &mut ra, rng);
            resample_sorted(&b, &mut idx_b, &mut rb, rng);
            wasserstein1_sorted(&ra, &rb)
        })
        .collect();
    stats.sort_unstable_by(f64::total_cmp);
    percentile_interval(&stats, level)
}

// Drawing sorted indices into a sorted sample yields a sorted resample.
fn resample_sorted<R: Rng + ?Sized>(src: &[f64], idx: &mut [u32], out: &mut [f64], rng: &mut R) {
    let n = src.len() as u32;
    for k in idx.iter_mut() {
        *k = rng.random_range(0..n);
    }
    idx.sort_unstable();
    for (o, &k) in out.iter_mut().zip(idx.iter()) {
        *o = src[k as usize];
    }
}

fn percentile_interval(sorted_stats: &[f64], level: f64) -> (f64, f64) {
    let n = sorted_stats.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let alpha = (1.0 - level) / 2.0;
    let lo = ((alpha * n as f64).floor() as usize).min(n - 1);
    let hi = (((1.0 - alpha) * n as f64).ceil() as usize).saturating_sub(1).min(n - 1);
    (sorted_stats[lo], sorted_stats[hi])
}

/// Total variation distance `½ Σ |p − q|` over the union of supports.
pub fn tv_distance(p: &LatticeDistribution, q: &LatticeDistribution) -> f64 {
    let mut sum = 0.0;
    for (k, &pv) in p {
        sum += (pv - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, &qv) in q {
        if !p.contains_key(k) {
            sum += qv.abs();
        }
    }
    0.5 * sum
}

/// Empirical distribution of lattice samples.
pub fn empirical_distribution<'a>(
    samples: impl IntoIterator<Item = &'a [i64]>,
) -> LatticeDistribution {
    let mut counts = LatticeDistribution::new();
    let mut n = 0usize;
    for s in samples {
        *counts.entry(s.to_vec()).or_insert(0.0) += 1.0;
        n += 1;
    }
    for v in counts.values_mut() {
        *v /= n as f64;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Two-sample chi-square homogeneity test on lattice occupancy.
///
/// States with a coordinate above `cap` share one overflow cell; cells with
/// pooled expected count below 5 are merged before testing.
pub fn chi_square_homogeneity(a: &[Vec<i64>], b: &[Vec<i64>], cap: i64) -> ChiSquareResult {
    let key = |s: &Vec<i64>| {
        if s.iter().any(|&x| x > cap) {
            None
        } else {
            Some(s.clone())
        }
    };
    let mut cells: BTreeMap<Option<Vec<i64>>, (f64, f64)> = BTreeMap::new();
    for s in a {
        cells.entry(key(s)).or_default().0 += 1.0;
    }
    for s in b {
        cells.entry(key(s)).or_default().1 += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let share_a = na / (na + nb);
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut pool = (0.0, 0.0);
    for (_, (ca, cb)) in cells {
        let total = ca + cb;
        if total * share_a.min(1.0 - share_a) < 5.0 {
            pool.0 += ca;
            pool.1 += cb;
        } else {
            merged.push((ca, cb));
        }
    }
    if pool.0 + pool.1 > 0.0 {
        merged.push(pool);
    }
    let statistic: f64 = merged
        .iter()
        .map(|&(ca, cb)| {
            let total = ca + cb;
            let (ea, eb) = (total * share_a, total * (1.0 - share_a));
            (ca - ea).powi(2) / ea + (cb - eb).powi(2) / eb
        })
        .sum();
    let dof = merged.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .expect("positive degrees of freedom")
            .sf(statistic)
    };
    ChiSquareResult {
        statistic,
        dof,
        p_value,
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub n: usize,
    pub mean: f64,
    pub std_err: f64,
}

impl MeanEstimate {
    pub fn from_samples(xs: impl IntoIterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for x in xs {
            n += 1;
            let delta = x - mean;
            mean += delta / n as f64;
            m2 += delta * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        MeanEstimate {
            n,
            mean,
            std_err: (var / n.max(1) as f64).sqrt(),
        }
    }

    /// Whether `target` lies within `k` standard errors.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_err
    }
}

/// Per-coordinate summary of a vector-valued sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    /// Sorted coordinate samples; the empirical CDF of coordinate `j` is a
    /// binary search into `sorted[j]`.
    pub sorted: Vec<Vec<f64>>,
}

impl SampleSummary {
    pub fn new(samples: &[Vec<f64>]) -> Self {
        assert!(!samples.is_empty(), "summary of an empty sample");
        let d = samples[0].len();
        let n = samples.len();
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x / n as f64;
            }
        }
        let mut cov = Matrix::zeros(d);
        for s in samples {
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]);
                }
            }
        }
        let denom = (n.max(2) - 1) as f64;
        let covariance = cov.scaled(1.0 / denom);
        let sorted = (0..d)
            .map(|j| sorted(&samples.iter().map(|s| s[j]).collect::<Vec<_>>()))
            .collect();
        SampleSummary {
            n,
            mean,
            covariance,
            sorted,
        }
    }

    pub fn ecdf(&self, j: usize, x: f64) -> f64 {
        self.sorted[j].partition_point(|&v| v <= x) as f64 / self.n as f64
    }
}
