//! Exact transient law of a discrete model on a truncated lattice box.

use serde::{Deserialize, Serialize};

use super::LatticeDistribution;
use crate::error::{Error, Result};
use crate::model::DiscreteModelSpec;

pub const DEFAULT_LEAK_THRESHOLD: f64 = 1e-3;

const POISSON_TAIL: f64 = 1e-12;
const MAX_UNIFORMIZATION_RATE: f64 = 1e7;

/// Generator restricted to `{0..=cap}^d`; every transition leaving the box
/// is redirected to a single absorbing leak state.
#[derive(Debug, Clone)]
pub struct TruncatedGenerator {
    pub dim: usize,
    pub cap: i64,
    /// `(target, rate)` pairs for transitions staying inside the box.
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub leak_rate: Vec<f64>,
    pub exit_rate: Vec<f64>,
}

impl TruncatedGenerator {
    pub fn new(spec: &DiscreteModelSpec, cap: i64) -> Result<Self> {
        if cap < 0 {
            return Err(Error::InvalidArgument(format!("lattice cap {cap} is negative")));
        }
        let d = spec.dim();
        let side = (cap + 1) as usize;
        let n_states = side
            .checked_pow(d as u32)
            .filter(|&n| n <= 5_000_000)
            .ok_or_else(|| Error::InvalidArgument(format!("box {side}^{d} is too large")))?;
        let mut transitions = Vec::with_capacity(n_states);
        let mut leak_rate = Vec::with_capacity(n_states);
        let mut exit_rate = Vec::with_capacity(n_states);
        let mut u = vec![0i64; d];
        let mut target = vec![0i64; d];
        for s in 0..n_states {
            decode(s, side, &mut u);
            let mut out: Vec<(usize, f64)> = Vec::new();
            let mut leak = 0.0;
            let mut push = |target: &[i64], rate: f64, out: &mut Vec<(usize, f64)>| {
                if rate <= 0.0 {
                    return;
                }
                if target.iter().any(|&x| x > cap) {
                    leak += rate;
                } else {
                    debug_assert!(target.iter().all(|&x| x >= 0));
                    out.push((encode(target, side), rate));
                }
            };
            for i in 0..d {
                if u[i] == 0 {
                    continue;
                }
                for o in &spec.offspring[i].outcomes {
                    for j in 0..d {
                        target[j] = u[j] + o.offspring[j] as i64 - (i == j) as i64;
                    }
                    push(&target, spec.lambda[i] * u[i] as f64 * o.prob, &mut out);
                }
            }
            for (i, j, c) in spec.interaction.entries() {
                if c == 0.0 || u[i] == 0 || u[j] == 0 {
                    continue;
                }
                target.copy_from_slice(&u);
                target[j] += c.signum() as i64;
                push(&target, c.abs() * (u[i] * u[j]) as f64, &mut out);
            }
            let total = out.iter().map(|(_, r)| r).sum::<f64>() + leak;
            transitions.push(out);
            leak_rate.push(leak);
            exit_rate.push(total);
        }
        Ok(TruncatedGenerator {
            dim: d,
            cap,
            transitions,
            leak_rate,
            exit_rate,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn state(&self, s: usize) -> Vec<i64> {
        let mut u = vec![0; self.dim];
        decode(s, (self.cap + 1) as usize, &mut u);
        u
    }

    pub fn index(&self, u: &[i64]) -> Option<usize> {
        if u.len() != self.dim || u.iter().any(|&x| x < 0 || x > self.cap) {
            return None;
        }
        Some(encode(u, (self.cap + 1) as usize))
    }
}

fn encode(u: &[i64], side: usize) -> usize {
    u.iter().rev().fold(0, |acc, &x| acc * side + x as usize)
}

fn decode(mut s: usize, side: usize, out: &mut [i64]) {
    for x in out.iter_mut() {
        *x = (s % side) as i64;
        s /= side;
    }
}

/// Transient law `P(Z_t = ·)` on the box together with the leaked mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientDistribution {
    pub states: Vec<Vec<i64>>,
    pub probs: Vec<f64>,
    pub leak: f64,
}

impl TransientDistribution {
    pub fn prob(&self, state: &[i64]) -> f64 {
        self.states
            .iter()
            .position(|s| s == state)
            .map_or(0.0, |k| self.probs[k])
    }

    pub fn to_distribution(&self) -> LatticeDistribution {
        self.states
            .iter()
            .cloned()
            .zip(self.probs.iter().copied())
            .filter(|(_, p)| *p > 0.0)
            .collect()
    }

    /// Marginal law of coordinate `j`.
    pub fn marginal(&self, j: usize) -> LatticeDistribution {
        let mut out = LatticeDistribution::new();
        for (s, &p) in self.states.iter().zip(&self.probs) {
            *out.entry(vec![s[j]]).or_insert(0.0) += p;
        }
        out
    }
}

/// Uniformization of the truncated chain started at `z`.
///
/// Fails with [`Error::BoxTooSmall`] when more than `leak_threshold` of the
/// mass leaves the box by time `t`.
pub fn transient_distribution(
    spec: &DiscreteModelSpec,
    z: &[i64],
    t: f64,
    cap: i64,
    leak_threshold: f64,
) -> Result<TransientDistribution> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time {t} must be finite and nonnegative")));
    }
    let gen = TruncatedGenerator::new(spec, cap)?;
    let start = gen
        .index(z)
        .ok_or_else(|| Error::InvalidArgument(format!("initial state {z:?} is outside the box")))?;
    let n = gen.n_states();
    let rate = gen.exit_rate.iter().cloned().fold(0.0, f64::max);
    let mean = rate * t;
    if mean > MAX_UNIFORMIZATION_RATE {
        return Err(Error::InvalidArgument(format!(
            "uniformization needs about {mean:.3e} steps"
        )));
    }

    let mut v = vec![0.0; n];
    v[start] = 1.0;
    let mut leak = 0.0;
    let mut acc = vec![0.0; n];
    let mut acc_leak = 0.0;
    let mut next = vec![0.0; n];
    let mut weight_sum = 0.0;
    let max_steps = (mean + 50.0 * mean.sqrt() + 100.0).ceil() as usize;
    for k in 0..=max_steps {
        let log_w = if mean > 0.0 {
            -mean + k as f64 * mean.ln() - ln_factorial(k)
        } else if k == 0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        let w = log_w.exp();
        weight_sum += w;
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += w * x;
        }
        acc_leak += w * leak;
        if weight_sum >= 1.0 - POISSON_TAIL && k as f64 >= mean {
            break;
        }
        // One step of the uniformized chain.
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..n {
            let mass = v[s];
            if mass == 0.0 {
                continue;
            }
            next[s] += mass * (1.0 - gen.exit_rate[s] / rate);
            for &(target, r) in &gen.transitions[s] {
                next[target] += mass * r / rate;
            }
            leak += mass * gen.leak_rate[s] / rate;
        }
        std::mem::swap(&mut v, &mut next);
    }
    if acc_leak > leak_threshold {
        return Err(Error::BoxTooSmall {
            leak: acc_leak,
            threshold: leak_threshold,
        });
    }
    Ok(TransientDistribution {
        states: (0..n).map(|s| gen.state(s)).collect(),
        probs: acc,
        leak: acc_leak,
    })
}

fn ln_factorial(k: usize) -> f64 {
    statrs::function::gamma::ln_gamma(k as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::OffspringPmf;
    use approx::assert_relative_eq;

    fn pure_death() -> DiscreteModelSpec {
        DiscreteModelSpec {
            lambda: vec![1.0],
            offspring: vec![OffspringPmf::point(vec![0])],
            interaction: Matrix::zeros(1),
        }
    }

    #[test]
    fn pure_death_extinction_probability() {
        let law = transient_distribution(&pure_death(), &[3], 1.0, 5, 1e-3).unwrap();
        // Each of three independent unit-rate lifetimes has ended.
        let p = (1.0 - (-1.0f64).exp()).powi(3);
        assert_relative_eq!(law.prob(&[0]), p, epsilon = 1e-10);
        assert_relative_eq!(p, 0.2525, epsilon = 1e-4);
        assert_eq!(law.leak, 0.0);
        // Binomial survivors.
        let q = (-1.0f64).exp();
        assert_relative_eq!(law.prob(&[3]), q.powi(3), epsilon = 1e-10);
        assert_relative_eq!(law.prob(&[1]), 3.0 * q * (1.0 - q).powi(2), epsilon = 1e-10);
    }

    #[test]
    fn mass_is_conserved_with_leak() {
        let spec = DiscreteModelSpec {
            lambda: vec![1.0],
            offspring: vec![OffspringPmf::new([(vec![0], 0.3), (vec![2], 0.7)])],
            interaction: Matrix::zeros(1),
        };
        let law = transient_distribution(&spec, &[2], 1.0, 60, 1e-3).unwrap();
        let total: f64 = law.probs.iter().sum::<f64>() + law.leak;
        assert_relative_eq!(total, 1.0, epsilon = 1e-10);
        let small = transient_distribution(&spec, &[2], 1.0, 3, 1e-3);
        assert!(matches!(small, Err(Error::BoxTooSmall { .. })));
    }

    #[test]
    fn birth_death_extinction_matches_closed_form() {
        // Linear birth-death with birth rate b and death rate m from one
        // particle: P(Z_t = 0) = m (e^{(b-m)t} - 1) / (b e^{(b-m)t} - m).
        let (b, m) = (0.4, 0.6);
        let spec = DiscreteModelSpec {
            lambda: vec![b + m],
            offspring: vec![OffspringPmf::new([(vec![0], m / (b + m)), (vec![2], b / (b + m))])],
            interaction: Matrix::zeros(1),
        };
        let t = 2.0;
        let law = transient_distribution(&spec, &[1], t, 80, 1e-6).unwrap();
        let e = ((b - m) * t).exp();
        assert_relative_eq!(law.prob(&[0]), m * (e - 1.0) / (b * e - m), epsilon = 1e-9);
    }

    #[test]
    fn zero_time_is_point_mass() {
        let law = transient_distribution(&pure_death(), &[2], 0.0, 4, 1e-3).unwrap();
        assert_eq!(law.prob(&[2]), 1.0);
    }

    #[test]
    fn pure_birth_is_geometric() {
        // Yule process from one particle: P(Z_t = k) = e^{-t} (1 - e^{-t})^{k-1}.
        let spec = DiscreteModelSpec {
            lambda: vec![1.0],
            offspring: vec![OffspringPmf::point(vec![2])],
            interaction: Matrix::zeros(1),
        };
        let (t, cap) = (0.5, 40);
        let law = transient_distribution(&spec, &[1], t, cap, 1e-3).unwrap();
        let q = 1.0 - (-t as f64).exp();
        for k in 1..=cap as i64 {
            let exact = (-t as f64).exp() * q.powi(k as i32 - 1);
            assert_relative_eq!(law.prob(&[k]), exact, epsilon = 1e-8);
        }
        assert_relative_eq!(law.leak, q.powi(cap as i32), epsilon = 1e-8);
    }

    #[test]
    fn enlarging_the_box_moves_at_most_the_leak() {
        let spec = DiscreteModelSpec {
            lambda: vec![1.0, 0.8],
            offspring: vec![
                OffspringPmf::new([(vec![0, 0], 0.4), (vec![2, 0], 0.4), (vec![1, 1], 0.2)]),
                OffspringPmf::new([(vec![0, 0], 0.5), (vec![0, 2], 0.5)]),
            ],
            interaction: Matrix::from_rows(&[&[0.0, -0.3], &[0.2, 0.0]]),
        };
        let mut prev: Option<TransientDistribution> = None;
        for cap in [4, 6, 9, 14] {
            let law = transient_distribution(&spec, &[2, 1], 1.0, cap, 1.0).unwrap();
            if let Some(small) = &prev {
                let mut change: f64 = small
                    .states
                    .iter()
                    .zip(&small.probs)
                    .map(|(s, p)| (law.prob(s) - p).abs())
                    .sum();
                change += law
                    .states
                    .iter()
                    .zip(&law.probs)
                    .filter(|(s, _)| !small.states.contains(s))
                    .map(|(_, p)| p)
                    .sum::<f64>();
                assert!(change <= small.leak + 1e-12, "cap {cap}: {change} > {}", small.leak);
                assert!(law.leak <= small.leak + 1e-12);
            }
            prev = Some(law);
        }
    }
}
