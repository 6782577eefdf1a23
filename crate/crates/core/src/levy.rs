//! Driving noise: compound-Poisson random walks, unit Poisson processes and
//! Lévy increments, all sampled lazily as their clocks are advanced.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ValidationReport, Violation};
use crate::model::{ContinuousModelSpec, DiscreteModelSpec, JumpMeasureSpec, PMF_TOLERANCE};
use crate::rng::SimRng;

/// Random stream owned by one driver, with the driver's consumed clock.
#[derive(Debug, Clone)]
pub struct IncrementStream {
    rng: SimRng,
    cursor: f64,
}

impl IncrementStream {
    pub fn new(rng: SimRng) -> Self {
        IncrementStream { rng, cursor: 0.0 }
    }

    /// Total clock consumed so far.
    pub fn cursor(&self) -> f64 {
        self.cursor
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    fn advance(&mut self, by: f64) {
        debug_assert!(by >= 0.0);
        self.cursor += by;
    }
}

/// Compound Poisson walk `X^i` with values in `Z^d`.
///
/// The diagonal coordinate is downwards skip-free (jumps `>= -1`) and the
/// off-diagonal coordinates never decrease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomWalkSpec {
    pub own_type: usize,
    pub jump_rate: f64,
    /// `(jump vector, probability)` atoms.
    pub jumps: Vec<(Vec<i64>, f64)>,
}

impl RandomWalkSpec {
    /// Walk driving type `i` of a discrete model: rate `λ_i`, jump `v − e_i`
    /// with probability `μ_i(v)`.
    pub fn from_model(spec: &DiscreteModelSpec, i: usize) -> Self {
        let jumps = spec.offspring[i]
            .outcomes
            .iter()
            .filter(|o| o.prob > 0.0)
            .map(|o| {
                let mut w: Vec<i64> = o.offspring.iter().map(|&x| i64::from(x)).collect();
                w[i] -= 1;
                (w, o.prob)
            })
            .collect();
        RandomWalkSpec {
            own_type: i,
            jump_rate: spec.lambda[i],
            jumps,
        }
    }

    pub fn all_from_model(spec: &DiscreteModelSpec) -> Vec<Self> {
        (0..spec.dim()).map(|i| Self::from_model(spec, i)).collect()
    }

    pub fn dim(&self) -> usize {
        self.jumps.first().map_or(0, |(w, _)| w.len())
    }

    pub fn validate(self) -> Result<Self, ValidationReport> {
        ValidationReport::from_violations(self.violations())?;
        Ok(self)
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !self.jump_rate.is_finite() || self.jump_rate <= 0.0 {
            out.push(Violation::NonpositiveRate {
                field: "jump_rate".into(),
                value: self.jump_rate,
            });
        }
        let d = self.dim();
        if self.own_type >= d.max(1) {
            out.push(Violation::DimensionMismatch {
                field: "own_type".into(),
                expected: d,
                found: self.own_type,
            });
        }
        let mut total = 0.0;
        for (k, (w, p)) in self.jumps.iter().enumerate() {
            total += p;
            if *p < 0.0 {
                out.push(Violation::NegativeProbability {
                    field: format!("jumps[{k}]"),
                    value: *p,
                });
            }
            if w.len() != d {
                out.push(Violation::DimensionMismatch {
                    field: format!("jumps[{k}]"),
                    expected: d,
                    found: w.len(),
                });
                continue;
            }
            for (j, &x) in w.iter().enumerate() {
                let field = format!("jumps[{k}][{j}]");
                if j == self.own_type && x < -1 {
                    out.push(Violation::SkipFreeViolation {
                        field,
                        value: x,
                        reason: "diagonal jumps must be >= -1",
                    });
                } else if j != self.own_type && x < 0 {
                    out.push(Violation::SkipFreeViolation {
                        field,
                        value: x,
                        reason: "off-diagonal coordinates must be nondecreasing",
                    });
                }
            }
            if w.iter().all(|&x| x == 0) {
                out.push(Violation::SkipFreeViolation {
                    field: format!("jumps[{k}]"),
                    value: 0,
                    reason: "null jump",
                });
            }
        }
        if (total - 1.0).abs() > PMF_TOLERANCE {
            out.push(Violation::NonstochasticPmf {
                field: "jumps".into(),
                total,
            });
        }
        out
    }

    /// Picks a jump by inverting the cumulative law at `u ∈ [0, 1)`.
    #[inline]
    pub fn jump_at(&self, u: f64) -> &[i64] {
        let mut acc = 0.0;
        for (w, p) in &self.jumps {
            acc += p;
            if u < acc {
                return w;
            }
        }
        &self.jumps[self.jumps.len() - 1].0
    }
}

/// Count of a rate-`rate` Poisson process over `window`.
pub fn sample_poisson_count(rate: f64, window: f64, stream: &mut IncrementStream) -> u64 {
    stream.advance(window);
    poisson(rate * window, &mut stream.rng)
}

#[inline]
pub(crate) fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(mean).expect("finite positive mean").sample(rng);
    draw as u64
}

/// Increment of the walk over `clock_advance` units of its own clock.
///
/// Each atom of the jump law is an independent Poisson stream (thinning),
/// so the cost is one Poisson draw per atom regardless of the window.
pub fn sample_walk_increment(
    spec: &RandomWalkSpec,
    clock_advance: f64,
    stream: &mut IncrementStream,
) -> Vec<i64> {
    let mut out = vec![0; spec.dim()];
    stream.advance(clock_advance);
    if clock_advance == 0.0 {
        return out;
    }
    for (w, p) in &spec.jumps {
        let n = poisson(spec.jump_rate * p * clock_advance, &mut stream.rng) as i64;
        for (o, x) in out.iter_mut().zip(w) {
            *o += n * x;
        }
    }
    out
}

/// Limit driver `X^i`: drift, Brownian part on the own coordinate, and a
/// jump measure with nonnegative jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyDriverSpec {
    pub own_type: usize,
    pub drift: Vec<f64>,
    #[serde(default)]
    pub brownian_variance: f64,
    #[serde(default)]
    pub jumps: JumpMeasureSpec,
}

impl LevyDriverSpec {
    pub fn zero(own_type: usize, d: usize) -> Self {
        LevyDriverSpec {
            own_type,
            drift: vec![0.0; d],
            brownian_variance: 0.0,
            jumps: JumpMeasureSpec::none(),
        }
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    /// Deterministic linear part per unit clock, compensators included.
    pub fn effective_drift(&self) -> Vec<f64> {
        let corr = self.jumps.drift_correction(self.dim());
        self.drift.iter().zip(corr).map(|(a, b)| a + b).collect()
    }

    pub fn validate(self) -> Result<Self, ValidationReport> {
        ValidationReport::from_violations(self.violations())?;
        Ok(self)
    }

    pub fn violations(&self) -> Vec<Violation> {
        let d = self.dim();
        let mut out = Vec::new();
        if self.own_type >= d {
            out.push(Violation::DimensionMismatch {
                field: "own_type".into(),
                expected: d,
                found: self.own_type,
            });
        }
        if !self.brownian_variance.is_finite() || self.brownian_variance < 0.0 {
            out.push(Violation::NegativeSigma {
                field: "brownian_variance".into(),
                value: self.brownian_variance,
            });
        }
        out.extend(
            self.jumps
                .violations(d)
                .into_iter()
                .map(|v| v.prefixed("jumps")),
        );
        if out.is_empty() {
            for (j, drift) in self.effective_drift().into_iter().enumerate() {
                if j != self.own_type && drift < 0.0 {
                    out.push(Violation::SubordinatorViolation {
                        field: format!("drift[{j}]"),
                        drift,
                    });
                }
            }
        }
        out
    }
}

impl ContinuousModelSpec {
    /// Lévy drivers whose time change solves the same SDE when `C = 0`:
    /// drift row `b[i]`, Brownian variance `2σ_i`, jump measure `m^(i)`.
    pub fn levy_drivers(&self) -> Result<Vec<LevyDriverSpec>, ValidationReport> {
        let d = self.dim();
        let drivers: Vec<LevyDriverSpec> = (0..d)
            .map(|i| LevyDriverSpec {
                own_type: i,
                drift: self.b.row(i).to_vec(),
                brownian_variance: 2.0 * self.sigma[i],
                jumps: self.jumps(i).cloned().unwrap_or_default(),
            })
            .collect();
        let violations: Vec<Violation> = drivers
            .iter()
            .enumerate()
            .flat_map(|(i, dr)| {
                dr.violations()
                    .into_iter()
                    .map(move |v| v.prefixed(&format!("drivers[{i}]")))
            })
            .collect();
        ValidationReport::from_violations(violations)?;
        Ok(drivers)
    }
}

/// Increment of a limit driver over `clock_advance`.
pub fn sample_levy_increment(
    spec: &LevyDriverSpec,
    clock_advance: f64,
    stream: &mut IncrementStream,
) -> Vec<f64> {
    let mut out = vec![0.0; spec.dim()];
    add_levy_increment(spec, &spec.effective_drift(), clock_advance, stream, &mut out);
    out
}

/// Adds an increment into `out`; `drift` is the precomputed effective drift.
pub(crate) fn add_levy_increment(
    spec: &LevyDriverSpec,
    drift: &[f64],
    clock_advance: f64,
    stream: &mut IncrementStream,
    out: &mut [f64],
) {
    stream.advance(clock_advance);
    if clock_advance == 0.0 {
        return;
    }
    for (o, a) in out.iter_mut().zip(drift) {
        *o += a * clock_advance;
    }
    if spec.brownian_variance > 0.0 {
        let g: f64 = StandardNormal.sample(&mut stream.rng);
        out[spec.own_type] += (spec.brownian_variance * clock_advance).sqrt() * g;
    }
    if spec.jumps.components.is_empty() {
        return;
    }
    let mut jump = vec![0.0; out.len()];
    for c in &spec.jumps.components {
        let n = poisson(c.mass * clock_advance, &mut stream.rng);
        for _ in 0..n {
            c.sampler.sample_into(&mut stream.rng, &mut jump);
            for (o, r) in out.iter_mut().zip(&jump) {
                *o += r;
            }
        }
    }
}

/// Event clock of a driver running on its own time scale.
///
/// Jumps occur at the points of a rate-`rate` Poisson process on the clock
/// axis, or on the lattice `spacing, 2·spacing, ...` in deterministic mode.
#[derive(Debug, Clone)]
pub struct EventClock {
    stream: IncrementStream,
    rate: f64,
    lattice: Option<f64>,
    next: f64,
}

impl EventClock {
    pub fn poisson(rate: f64, rng: SimRng) -> Self {
        let mut clock = EventClock {
            stream: IncrementStream::new(rng),
            rate,
            lattice: None,
            next: 0.0,
        };
        clock.next = clock.gap();
        clock
    }

    pub fn lattice(spacing: f64, rng: SimRng) -> Self {
        EventClock {
            stream: IncrementStream::new(rng),
            rate: 1.0 / spacing,
            lattice: Some(spacing),
            next: spacing,
        }
    }

    #[inline]
    fn gap(&mut self) -> f64 {
        match self.lattice {
            Some(s) => s,
            None => {
                let e: f64 = Exp1.sample(&mut self.stream.rng);
                e / self.rate
            }
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn position(&self) -> f64 {
        self.stream.cursor
    }

    /// Clock distance to the next event.
    #[inline]
    pub fn remaining(&self) -> f64 {
        self.next - self.stream.cursor
    }

    #[inline]
    pub fn advance(&mut self, by: f64) {
        self.stream.cursor += by;
    }

    /// Moves the clock onto its pending event and schedules the next one.
    #[inline]
    pub fn fire(&mut self) {
        self.stream.cursor = self.next;
        self.next += self.gap();
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.stream.rng
    }
}
