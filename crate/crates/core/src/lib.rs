//! Simulation of interacting multitype branching processes.
//!
//! The discrete model is a continuous-time Markov chain on `N^d` in which
//! every individual of type `i` reproduces at rate `λ_i` according to the
//! offspring law `μ_i`, and every ordered pair `(i, j)` adds `sgn(c_ij)` to
//! type `j` at rate `|c_ij| u_i u_j`. The continuous model is the
//! nonnegative jump diffusion with drift `Σ_i c_ij y_i y_j + Σ_i b_ij y_i`,
//! diffusion `√(2 σ_j y_j)` and jumps of intensity `y_i m^(i)(dr)`.
//!
//! Both are also solutions of random time-change equations driven by one
//! Lévy process per type. The crate simulates both representations, the
//! `(ε, δ)` grid that freezes the competition term, and the rescaled
//! sequences along which the discrete model converges to the continuous one.

pub mod continuous;
pub mod discrete;
pub mod ensemble;
pub mod error;
pub mod export;
pub mod grid;
pub mod levy;
pub mod matrix;
pub mod model;
pub mod path;
mod quadrature;
pub mod rng;
pub mod scaling;
pub mod stats;

pub use continuous::{
    euler_simulate, generator_apply, lamperti_simulate, martingale_residual, martingale_residual_mc,
    EulerConfig, EulerStats, Monomial, TestFunction,
};
pub use discrete::{
    law_equivalence_check, simulate_gillespie, simulate_time_change, EngineKind, EngineOptions,
    EventLog, RunStats, TimeChangeOptions,
};
pub use ensemble::Ensemble;
pub use error::{Error, Result, ValidationReport, Violation};
pub use grid::{floor_quantize, simulate_grid_continuous, simulate_grid_discrete, GridConfig};
pub use levy::{LevyDriverSpec, RandomWalkSpec};
pub use matrix::Matrix;
pub use model::{
    ContinuousModelSpec, DiscreteModelSpec, JumpComponent, JumpMeasureSpec, JumpSampler, Magnitude,
    OffspringOutcome, OffspringPmf,
};
pub use path::{Checkpoints, ContinuousPath, Path, Recorder};
pub use rng::{SeedTree, SimRng};
pub use scaling::{build_feller_family, feller_limit, rescaled_run, ScalingFamily};
pub use stats::{transient_distribution, TransientDistribution};
