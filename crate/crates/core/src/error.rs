use std::fmt;

use thiserror::Error;

/// A single broken invariant found while validating a model or driver spec.
///
/// `field` is a dotted path into the spec (`offspring[1]`, `b[0][1]`, ...)
/// so that configuration front-ends can point at the offending entry.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("{field}: dimension must be at least 1")]
    EmptyModel { field: String },
    #[error("{field}: expected length {expected}, found {found}")]
    DimensionMismatch {
        field: String,
        expected: usize,
        found: usize,
    },
    #[error("{field}: value {value} is not finite")]
    NonFinite { field: String, value: f64 },
    #[error("{field}: rate {value} must be positive")]
    NonpositiveRate { field: String, value: f64 },
    #[error("{field}: probabilities sum to {total}, expected 1")]
    NonstochasticPmf { field: String, total: f64 },
    #[error("{field}: probability {value} is negative")]
    NegativeProbability { field: String, value: f64 },
    #[error("{field}: type {index} has positive mass on its own unit vector")]
    SelfOffspringLoop { field: String, index: usize },
    #[error("{field}: off-diagonal entry {value} of B is negative")]
    NegativeOffDiagonalB { field: String, value: f64 },
    #[error("{field}: diffusion coefficient {value} is negative")]
    NegativeSigma { field: String, value: f64 },
    #[error("{field}: jump measure is not integrable: {reason}")]
    JumpMeasureIntegrability { field: String, reason: String },
    #[error("{field}: walk jump {value} is not allowed ({reason})")]
    SkipFreeViolation {
        field: String,
        value: i64,
        reason: &'static str,
    },
    #[error("{field}: off-diagonal coordinate can decrease (effective drift {drift})")]
    SubordinatorViolation { field: String, drift: f64 },
}

impl Violation {
    pub fn field(&self) -> &str {
        match self {
            Violation::EmptyModel { field }
            | Violation::DimensionMismatch { field, .. }
            | Violation::NonFinite { field, .. }
            | Violation::NonpositiveRate { field, .. }
            | Violation::NonstochasticPmf { field, .. }
            | Violation::NegativeProbability { field, .. }
            | Violation::SelfOffspringLoop { field, .. }
            | Violation::NegativeOffDiagonalB { field, .. }
            | Violation::NegativeSigma { field, .. }
            | Violation::JumpMeasureIntegrability { field, .. }
            | Violation::SkipFreeViolation { field, .. }
            | Violation::SubordinatorViolation { field, .. } => field,
        }
    }

    pub(crate) fn prefixed(self, prefix: &str) -> Self {
        let join = |f: String| {
            if f.is_empty() {
                prefix.to_string()
            } else {
                format!("{prefix}.{f}")
            }
        };
        match self {
            Violation::EmptyModel { field } => Violation::EmptyModel { field: join(field) },
            Violation::DimensionMismatch {
                field,
                expected,
                found,
            } => Violation::DimensionMismatch {
                field: join(field),
                expected,
                found,
            },
            Violation::NonFinite { field, value } => Violation::NonFinite {
                field: join(field),
                value,
            },
            Violation::NonpositiveRate { field, value } => Violation::NonpositiveRate {
                field: join(field),
                value,
            },
            Violation::NonstochasticPmf { field, total } => Violation::NonstochasticPmf {
                field: join(field),
                total,
            },
            Violation::NegativeProbability { field, value } => Violation::NegativeProbability {
                field: join(field),
                value,
            },
            Violation::SelfOffspringLoop { field, index } => Violation::SelfOffspringLoop {
                field: join(field),
                index,
            },
            Violation::NegativeOffDiagonalB { field, value } => Violation::NegativeOffDiagonalB {
                field: join(field),
                value,
            },
            Violation::NegativeSigma { field, value } => Violation::NegativeSigma {
                field: join(field),
                value,
            },
            Violation::JumpMeasureIntegrability { field, reason } => {
                Violation::JumpMeasureIntegrability {
                    field: join(field),
                    reason,
                }
            }
            Violation::SkipFreeViolation {
                field,
                value,
                reason,
            } => Violation::SkipFreeViolation {
                field: join(field),
                value,
                reason,
            },
            Violation::SubordinatorViolation { field, drift } => Violation::SubordinatorViolation {
                field: join(field),
                drift,
            },
        }
    }
}

/// All violations found in one validation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub(crate) fn from_violations(violations: Vec<Violation>) -> Result<(), Self> {
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ValidationReport { violations })
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Validation(#[from] ValidationReport),
    #[error("total event rate {rate:.3e} exceeds cap {cap:.3e} at t = {time}")]
    RateOverflow { time: f64, rate: f64, cap: f64 },
    #[error("step at t = {time} moves coordinate {coordinate} from {from} to {to}")]
    StepRejected {
        time: f64,
        coordinate: usize,
        from: f64,
        to: f64,
    },
    #[error("truncation box too small: leaked mass {leak:.3e} exceeds {threshold:.3e}")]
    BoxTooSmall { leak: f64, threshold: f64 },
    #[error("scaling family violates its premise: {0}")]
    ScalingPremise(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for the guards that stop a run for numerical reasons rather than bad input.
    pub fn is_numerical_guard(&self) -> bool {
        matches!(
            self,
            Error::RateOverflow { .. } | Error::StepRejected { .. } | Error::BoxTooSmall { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
