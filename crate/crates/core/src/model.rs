//! Parameter containers for the discrete and continuous models.
//!
//! Both specs are plain data (serde-friendly); `validate` consumes a spec and
//! hands it back only if every invariant holds, collecting all violations in
//! one pass otherwise.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{ValidationReport, Violation};
use crate::matrix::Matrix;
use crate::quadrature;

/// Tolerance on the total mass of an offspring law.
pub const PMF_TOLERANCE: f64 = 1e-12;

/// One atom of an offspring law: `offspring[j]` children of type `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffspringOutcome {
    pub offspring: Vec<u32>,
    pub prob: f64,
}

/// Finite-support offspring distribution of one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OffspringPmf {
    pub outcomes: Vec<OffspringOutcome>,
}

impl OffspringPmf {
    pub fn new(outcomes: impl IntoIterator<Item = (Vec<u32>, f64)>) -> Self {
        OffspringPmf {
            outcomes: outcomes
                .into_iter()
                .map(|(offspring, prob)| OffspringOutcome { offspring, prob })
                .collect(),
        }
    }

    /// Point mass on one offspring vector.
    pub fn point(offspring: Vec<u32>) -> Self {
        Self::new([(offspring, 1.0)])
    }

    pub fn total_mass(&self) -> f64 {
        self.outcomes.iter().map(|o| o.prob).sum()
    }

    /// Expected number of children of type `j`.
    pub fn mean(&self, j: usize) -> f64 {
        self.outcomes
            .iter()
            .map(|o| o.prob * f64::from(o.offspring[j]))
            .sum()
    }
}

/// Parameters of the discrete-state model: `lambda[i]` is the branching rate
/// of type `i`, `offspring[i]` its offspring law, and `interaction[(i, j)]`
/// the signed per-pair rate at which a type-`i` individual kills (`< 0`) or
/// replicates (`> 0`) a type-`j` individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteModelSpec {
    pub lambda: Vec<f64>,
    pub offspring: Vec<OffspringPmf>,
    pub interaction: Matrix,
}

impl DiscreteModelSpec {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(self) -> Result<Self, ValidationReport> {
        ValidationReport::from_violations(self.violations())?;
        Ok(self)
    }

    pub fn violations(&self) -> Vec<Violation> {
        let d = self.dim();
        let mut out = Vec::new();
        if d == 0 {
            out.push(Violation::EmptyModel {
                field: "lambda".into(),
            });
            return out;
        }
        for (i, &l) in self.lambda.iter().enumerate() {
            let field = format!("lambda[{i}]");
            if !l.is_finite() {
                out.push(Violation::NonFinite { field, value: l });
            } else if l <= 0.0 {
                out.push(Violation::NonpositiveRate { field, value: l });
            }
        }
        if self.offspring.len() != d {
            out.push(Violation::DimensionMismatch {
                field: "offspring".into(),
                expected: d,
                found: self.offspring.len(),
            });
        }
        for (i, pmf) in self.offspring.iter().enumerate() {
            let mut shape_ok = true;
            for (k, o) in pmf.outcomes.iter().enumerate() {
                let field = format!("offspring[{i}][{k}]");
                if o.offspring.len() != d {
                    shape_ok = false;
                    out.push(Violation::DimensionMismatch {
                        field: format!("{field}.offspring"),
                        expected: d,
                        found: o.offspring.len(),
                    });
                }
                if !o.prob.is_finite() {
                    out.push(Violation::NonFinite {
                        field: format!("{field}.prob"),
                        value: o.prob,
                    });
                } else if o.prob < 0.0 {
                    out.push(Violation::NegativeProbability {
                        field: format!("{field}.prob"),
                        value: o.prob,
                    });
                }
            }
            let total = pmf.total_mass();
            if (total - 1.0).abs() > PMF_TOLERANCE || !total.is_finite() {
                out.push(Violation::NonstochasticPmf {
                    field: format!("offspring[{i}]"),
                    total,
                });
            }
            if shape_ok {
                let self_mass: f64 = pmf
                    .outcomes
                    .iter()
                    .filter(|o| is_unit_vector(&o.offspring, i))
                    .map(|o| o.prob)
                    .sum();
                if self_mass != 0.0 {
                    out.push(Violation::SelfOffspringLoop {
                        field: format!("offspring[{i}]"),
                        index: i,
                    });
                }
            }
        }
        if self.interaction.dim() != d {
            out.push(Violation::DimensionMismatch {
                field: "interaction".into(),
                expected: d,
                found: self.interaction.dim(),
            });
        }
        for (i, j, c) in self.interaction.entries() {
            if !c.is_finite() {
                out.push(Violation::NonFinite {
                    field: format!("interaction[{i}][{j}]"),
                    value: c,
                });
            }
        }
        out
    }

    /// First-moment generator of the branching part:
    /// `A[i][j] = λ_i (E_{μ_i}[v_j] − δ_ij)`, so that with no interaction
    /// `E[Z_t] = z · exp(tA)`.
    pub fn mean_matrix(&self) -> Matrix {
        let d = self.dim();
        let mut a = Matrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                a[(i, j)] = self.lambda[i] * (self.offspring[i].mean(j) - delta);
            }
        }
        a
    }

    /// `z · exp(tA)`.
    pub fn mean_flow(&self, z: &[f64], t: f64) -> Vec<f64> {
        self.mean_matrix().scaled(t).expm().left_mul(z)
    }

    /// Copy with a different interaction matrix.
    pub fn with_interaction(&self, interaction: Matrix) -> Self {
        DiscreteModelSpec {
            interaction,
            ..self.clone()
        }
    }
}

fn is_unit_vector(v: &[u32], i: usize) -> bool {
    v.iter()
        .enumerate()
        .all(|(j, &x)| x == u32::from(j == i))
}

/// Law of the magnitude of a ray-shaped jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Magnitude {
    Exponential { mean: f64 },
    Uniform { low: f64, high: f64 },
}

impl Magnitude {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Magnitude::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                mean * e
            }
            Magnitude::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            Magnitude::Exponential { mean } => mean,
            Magnitude::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    fn expect(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        match *self {
            Magnitude::Exponential { mean } => quadrature::laguerre()
                .iter()
                .map(|&(x, w)| w * g(mean * x))
                .sum(),
            Magnitude::Uniform { low, high } => quadrature::legendre_unit()
                .iter()
                .map(|&(u, w)| w * g(low + (high - low) * u))
                .sum(),
        }
    }
}

/// Parametric law of one jump vector `r ∈ R_+^d \ {0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpSampler {
    /// Deterministic jump `r`.
    Atom { r: Vec<f64> },
    /// `r = direction · M` with a random magnitude `M`.
    Ray {
        direction: Vec<f64>,
        magnitude: Magnitude,
    },
}

impl JumpSampler {
    pub fn dim(&self) -> usize {
        match self {
            JumpSampler::Atom { r } => r.len(),
            JumpSampler::Ray { direction, .. } => direction.len(),
        }
    }

    /// Writes one jump into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            JumpSampler::Atom { r } => out.copy_from_slice(r),
            JumpSampler::Ray {
                direction,
                magnitude,
            } => {
                let m = magnitude.sample(rng);
                for (o, d) in out.iter_mut().zip(direction) {
                    *o = d * m;
                }
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            JumpSampler::Atom { r } => r.clone(),
            JumpSampler::Ray {
                direction,
                magnitude,
            } => {
                let m = magnitude.mean();
                direction.iter().map(|d| d * m).collect()
            }
        }
    }

    /// `E[g(r)]`, exact for atoms and by Gauss quadrature otherwise.
    pub fn expect(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        match self {
            JumpSampler::Atom { r } => g(r),
            JumpSampler::Ray {
                direction,
                magnitude,
            } => {
                let mut buf = vec![0.0; direction.len()];
                magnitude.expect(|m| {
                    for (b, d) in buf.iter_mut().zip(direction) {
                        *b = d * m;
                    }
                    g(&buf)
                })
            }
        }
    }

    fn violations(&self, d: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        let (vector, field) = match self {
            JumpSampler::Atom { r } => (r, "r"),
            JumpSampler::Ray { direction, .. } => (direction, "direction"),
        };
        if vector.len() != d {
            out.push(Violation::DimensionMismatch {
                field: field.into(),
                expected: d,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite() || *x < 0.0) {
            out.push(Violation::JumpMeasureIntegrability {
                field: field.into(),
                reason: "jump vectors must lie in the nonnegative orthant".into(),
            });
        } else if vector.iter().all(|&x| x == 0.0) {
            out.push(Violation::JumpMeasureIntegrability {
                field: field.into(),
                reason: "jump law charges the origin".into(),
            });
        }
        if let JumpSampler::Ray { magnitude, .. } = self {
            let ok = match *magnitude {
                Magnitude::Exponential { mean } => mean.is_finite() && mean > 0.0,
                Magnitude::Uniform { low, high } => {
                    low.is_finite() && high.is_finite() && low >= 0.0 && high > low
                }
            };
            if !ok {
                out.push(Violation::JumpMeasureIntegrability {
                    field: "magnitude".into(),
                    reason: format!("invalid magnitude law {magnitude:?}"),
                });
            }
        }
        out
    }
}

fn default_true() -> bool {
    true
}

/// Finite-activity part of a jump measure: `mass` times the law of `sampler`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpComponent {
    pub mass: f64,
    pub sampler: JumpSampler,
    /// Whether the SDE integrates this component against the compensated
    /// measure (subtracting `mass · E[r]` per unit of population and time).
    #[serde(default = "default_true")]
    pub compensated: bool,
}

/// Small jumps below `r_min` replaced by a linear drift per unit population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallJumpTruncation {
    pub r_min: f64,
    pub compensator_drift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpMeasureSpec {
    #[serde(default)]
    pub components: Vec<JumpComponent>,
    #[serde(default)]
    pub small_jump_truncation: Option<SmallJumpTruncation>,
}

impl JumpMeasureSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty() && self.small_jump_truncation.is_none()
    }

    /// Linear drift per unit of the carrying population: truncation drift
    /// minus the compensators of compensated components.
    pub fn drift_correction(&self, d: usize) -> Vec<f64> {
        let mut out = self
            .small_jump_truncation
            .as_ref()
            .map(|t| t.compensator_drift.clone())
            .unwrap_or_else(|| vec![0.0; d]);
        for c in self.components.iter().filter(|c| c.compensated) {
            for (o, m) in out.iter_mut().zip(c.sampler.mean()) {
                *o -= c.mass * m;
            }
        }
        out
    }

    pub fn violations(&self, d: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        for (k, c) in self.components.iter().enumerate() {
            let prefix = format!("components[{k}]");
            if !c.mass.is_finite() || c.mass <= 0.0 {
                out.push(Violation::JumpMeasureIntegrability {
                    field: format!("{prefix}.mass"),
                    reason: format!("mass {} must be positive and finite", c.mass),
                });
            }
            out.extend(
                c.sampler
                    .violations(d)
                    .into_iter()
                    .map(|v| v.prefixed(&format!("{prefix}.sampler"))),
            );
        }
        if let Some(t) = &self.small_jump_truncation {
            if !t.r_min.is_finite() || t.r_min <= 0.0 {
                out.push(Violation::JumpMeasureIntegrability {
                    field: "small_jump_truncation.r_min".into(),
                    reason: format!("r_min {} must be positive and finite", t.r_min),
                });
            }
            if t.compensator_drift.len() != d {
                out.push(Violation::DimensionMismatch {
                    field: "small_jump_truncation.compensator_drift".into(),
                    expected: d,
                    found: t.compensator_drift.len(),
                });
            } else if t.compensator_drift.iter().any(|x| !x.is_finite()) {
                out.push(Violation::JumpMeasureIntegrability {
                    field: "small_jump_truncation.compensator_drift".into(),
                    reason: "compensator drift must be finite".into(),
                });
            }
        }
        out
    }
}

/// Parameters of the continuous-state SDE: linear drift `b`, interaction
/// `c`, diffusion `sigma` and one jump measure per type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousModelSpec {
    pub b: Matrix,
    pub c: Matrix,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub jump_measures: Vec<JumpMeasureSpec>,
}

impl ContinuousModelSpec {
    /// Diffusion-only model (no jumps).
    pub fn diffusion(b: Matrix, c: Matrix, sigma: Vec<f64>) -> Self {
        let d = sigma.len();
        ContinuousModelSpec {
            b,
            c,
            sigma,
            jump_measures: vec![JumpMeasureSpec::none(); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn validate(self) -> Result<Self, ValidationReport> {
        ValidationReport::from_violations(self.violations())?;
        Ok(self)
    }

    pub fn violations(&self) -> Vec<Violation> {
        let d = self.dim();
        let mut out = Vec::new();
        if d == 0 {
            out.push(Violation::EmptyModel {
                field: "sigma".into(),
            });
            return out;
        }
        for (name, m) in [("b", &self.b), ("c", &self.c)] {
            if m.dim() != d {
                out.push(Violation::DimensionMismatch {
                    field: name.into(),
                    expected: d,
                    found: m.dim(),
                });
            }
            for (i, j, x) in m.entries() {
                if !x.is_finite() {
                    out.push(Violation::NonFinite {
                        field: format!("{name}[{i}][{j}]"),
                        value: x,
                    });
                }
            }
        }
        for (i, j, x) in self.b.entries() {
            if i != j && x < 0.0 {
                out.push(Violation::NegativeOffDiagonalB {
                    field: format!("b[{i}][{j}]"),
                    value: x,
                });
            }
        }
        for (i, &s) in self.sigma.iter().enumerate() {
            if !s.is_finite() || s < 0.0 {
                out.push(Violation::NegativeSigma {
                    field: format!("sigma[{i}]"),
                    value: s,
                });
            }
        }
        if !self.jump_measures.is_empty() && self.jump_measures.len() != d {
            out.push(Violation::DimensionMismatch {
                field: "jump_measures".into(),
                expected: d,
                found: self.jump_measures.len(),
            });
        }
        for (i, m) in self.jump_measures.iter().enumerate() {
            out.extend(
                m.violations(d)
                    .into_iter()
                    .map(|v| v.prefixed(&format!("jump_measures[{i}]"))),
            );
        }
        out
    }

    /// Jump measure of type `i` (empty when none configured).
    pub fn jumps(&self, i: usize) -> Option<&JumpMeasureSpec> {
        self.jump_measures.get(i).filter(|m| !m.is_empty())
    }

    pub fn has_jumps(&self) -> bool {
        self.jump_measures.iter().any(|m| !m.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pure_death() -> DiscreteModelSpec {
        DiscreteModelSpec {
            lambda: vec![1.0],
            offspring: vec![OffspringPmf::point(vec![0])],
            interaction: Matrix::zeros(1),
        }
    }

    fn kinds(err: ValidationReport) -> Vec<&'static str> {
        err.violations
            .iter()
            .map(|v| match v {
                Violation::NonstochasticPmf { .. } => "pmf",
                Violation::SelfOffspringLoop { .. } => "self",
                Violation::NonpositiveRate { .. } => "rate",
                Violation::NegativeOffDiagonalB { .. } => "offdiag",
                Violation::NegativeSigma { .. } => "sigma",
                Violation::JumpMeasureIntegrability { .. } => "integrability",
                _ => "other",
            })
            .collect()
    }

    #[test]
    fn minimal_pure_death_is_valid() {
        let spec = pure_death();
        assert_eq!(spec.clone().validate().unwrap(), spec);
    }

    #[test]
    fn self_offspring_is_rejected() {
        let spec = DiscreteModelSpec {
            offspring: vec![OffspringPmf::point(vec![1])],
            ..pure_death()
        };
        assert_eq!(kinds(spec.validate().unwrap_err()), ["self"]);
    }

    #[test]
    fn mass_deficit_is_rejected() {
        let spec = DiscreteModelSpec {
            lambda: vec![1.0, 1.0],
            offspring: vec![
                OffspringPmf::new([(vec![0, 0], 0.5), (vec![2, 0], 0.4)]),
                OffspringPmf::point(vec![0, 0]),
            ],
            interaction: Matrix::zeros(2),
        };
        let err = spec.validate().unwrap_err();
        assert_eq!(kinds(err.clone()), ["pmf"]);
        assert_eq!(err.violations[0].field(), "offspring[0]");
    }

    #[test]
    fn nonpositive_rate_is_rejected() {
        let spec = DiscreteModelSpec {
            lambda: vec![0.0],
            ..pure_death()
        };
        assert_eq!(kinds(spec.validate().unwrap_err()), ["rate"]);
    }

    #[test]
    fn pmf_tolerance_is_tight() {
        let ok = DiscreteModelSpec {
            offspring: vec![OffspringPmf::new([(vec![0], 0.5), (vec![2], 0.5 + 5e-13)])],
            ..pure_death()
        };
        assert!(ok.validate().is_ok());
        let bad = DiscreteModelSpec {
            offspring: vec![OffspringPmf::new([(vec![0], 0.5), (vec![2], 0.5 + 1e-11)])],
            ..pure_death()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mean_matrices() {
        assert_eq!(pure_death().mean_matrix(), Matrix::from_rows(&[&[-1.0]]));
        let fission = DiscreteModelSpec {
            offspring: vec![OffspringPmf::point(vec![2])],
            ..pure_death()
        };
        assert_eq!(fission.mean_matrix(), Matrix::from_rows(&[&[1.0]]));
        let two = DiscreteModelSpec {
            lambda: vec![1.0, 1.0],
            offspring: vec![
                OffspringPmf::point(vec![2, 0]),
                OffspringPmf::point(vec![0, 0]),
            ],
            interaction: Matrix::zeros(2),
        };
        assert_eq!(
            two.mean_matrix(),
            Matrix::from_rows(&[&[1.0, 0.0], &[0.0, -1.0]])
        );
        let flow = two.mean_flow(&[1.0, 1.0], 1.0);
        assert_relative_eq!(flow[0], 1f64.exp(), max_relative = 1e-12);
        assert_relative_eq!(flow[1], (-1f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn continuous_validation() {
        let ok = ContinuousModelSpec::diffusion(
            Matrix::from_rows(&[&[-2.0]]),
            Matrix::zeros(1),
            vec![1.0],
        );
        assert!(ok.validate().is_ok());

        let bad_b = ContinuousModelSpec::diffusion(
            Matrix::from_rows(&[&[0.0, -1.0], &[0.0, 0.0]]),
            Matrix::zeros(2),
            vec![1.0, 1.0],
        );
        let err = bad_b.validate().unwrap_err();
        assert_eq!(kinds(err.clone()), ["offdiag"]);
        assert_eq!(err.violations[0].field(), "b[0][1]");

        let origin = ContinuousModelSpec {
            jump_measures: vec![JumpMeasureSpec {
                components: vec![JumpComponent {
                    mass: 1.0,
                    sampler: JumpSampler::Atom { r: vec![0.0] },
                    compensated: true,
                }],
                small_jump_truncation: None,
            }],
            ..ContinuousModelSpec::diffusion(Matrix::zeros(1), Matrix::zeros(1), vec![1.0])
        };
        let err = origin.validate().unwrap_err();
        assert_eq!(kinds(err.clone()), ["integrability"]);
        assert_eq!(
            err.violations[0].field(),
            "jump_measures[0].components[0].sampler.r"
        );

        let neg_sigma =
            ContinuousModelSpec::diffusion(Matrix::zeros(1), Matrix::zeros(1), vec![-0.1]);
        assert_eq!(kinds(neg_sigma.validate().unwrap_err()), ["sigma"]);
    }

    #[test]
    fn ray_expectations_match_closed_forms() {
        let ray = JumpSampler::Ray {
            direction: vec![1.0, 2.0],
            magnitude: Magnitude::Exponential { mean: 0.5 },
        };
        // E[M^2] = 2 mean^2
        let second = ray.expect(|r| r[0] * r[1]);
        assert_relative_eq!(second, 2.0 * 2.0 * 0.25, max_relative = 1e-10);
        assert_eq!(ray.mean(), vec![0.5, 1.0]);
        let uni = JumpSampler::Ray {
            direction: vec![1.0],
            magnitude: Magnitude::Uniform { low: 1.0, high: 3.0 },
        };
        assert_relative_eq!(uni.expect(|r| r[0] * r[0]), 13.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let json = r#"{
            "b": [[0.0]], "c": [[-1.0]], "sigma": [0.5],
            "jump_measures": [{"components": [{"mass": 2.0,
                "sampler": {"kind": "ray", "direction": [1.0],
                            "magnitude": {"law": "exponential", "mean": 0.1}}}]}]
        }"#;
        let spec: ContinuousModelSpec = serde_json::from_str(json).unwrap();
        assert!(spec.jump_measures[0].components[0].compensated);
        let back: ContinuousModelSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<ContinuousModelSpec>(
            r#"{"b": [[0.0]], "c": [[0.0]], "sigma": [0.5], "typo": 1}"#
        )
        .is_err());
    }
}
