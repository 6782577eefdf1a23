//! Time-population grid: competition frozen at `⌊Z/δ⌋δ` over windows
//! `[mε, (m+1)ε)`, for both the continuous and the discrete model.

use serde::{Deserialize, Serialize};

use crate::continuous::{euler_core, euler_samples_at, EulerConfig, EulerStats, InteractionDrift};
use crate::discrete::{simulate_time_change, FrozenInteraction, RunStats, TimeChangeOptions};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::levy::RandomWalkSpec;
use crate::matrix::Matrix;
use crate::model::{ContinuousModelSpec, DiscreteModelSpec};
use crate::path::{Checkpoints, ContinuousPath, Recorder};
use crate::rng::SeedTree;
use crate::stats::{bootstrap_w1_interval, wasserstein1};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub epsilon: f64,
    pub delta: f64,
}

impl GridConfig {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        GridConfig { epsilon, delta }.checked()
    }

    pub fn checked(self) -> Result<Self> {
        if self.epsilon > 0.0 && self.delta > 0.0 && self.epsilon.is_finite() && self.delta.is_finite() {
            Ok(self)
        } else {
            Err(Error::InvalidArgument(format!(
                "grid ({}, {}) must have positive finite epsilon and delta",
                self.epsilon, self.delta
            )))
        }
    }
}

/// Largest multiple of `delta` not exceeding `x`.
pub fn floor_quantize(x: f64, delta: f64) -> f64 {
    debug_assert!(delta > 0.0);
    let mut k = (x / delta).floor();
    // Division can round across an integer; fix up so k δ <= x < (k+1) δ.
    if k * delta > x {
        k -= 1.0;
    } else if (k + 1.0) * delta <= x {
        k += 1.0;
    }
    k * delta
}

/// Frozen competition drift `Σ_i c_ij q_j y_i`, refreshed at each window start.
struct FrozenDrift<'a> {
    c: &'a Matrix,
    grid: GridConfig,
    dt: f64,
    factor: Vec<f64>,
    next_window: u64,
}

impl InteractionDrift for FrozenDrift<'_> {
    fn add(&mut self, _k: u64, t: f64, y: &[f64], out: &mut [f64]) {
        // Steps starting at or after mε see the factor taken at that step.
        let slack = 1e-9 * self.dt;
        if t + slack >= self.next_window as f64 * self.grid.epsilon {
            for (q, &x) in self.factor.iter_mut().zip(y) {
                *q = floor_quantize(x, self.grid.delta);
            }
            self.next_window = ((t + slack) / self.grid.epsilon).floor() as u64 + 1;
        }
        for (i, j, c) in self.c.entries() {
            if c != 0.0 {
                out[j] += c * self.factor[j] * y[i];
            }
        }
    }
}

/// One path of the grid process built on the continuous model.
///
/// Within a window the model is the branching diffusion with linear drift
/// `b_ij + c_ij q_j`; windows are glued at their endpoints.
#[allow(clippy::too_many_arguments)]
pub fn simulate_grid_continuous<R: Recorder<f64>>(
    spec: &ContinuousModelSpec,
    y: &[f64],
    horizon: f64,
    grid: GridConfig,
    cfg: &EulerConfig,
    seeds: SeedTree,
    path: u64,
    recorder: &mut R,
) -> Result<EulerStats> {
    let grid = grid.checked()?;
    let mut drift = FrozenDrift {
        c: &spec.c,
        grid,
        dt: cfg.dt,
        factor: vec![0.0; spec.dim()],
        next_window: 0,
    };
    euler_core(spec, y, horizon, cfg, seeds, path, &mut drift, recorder)
}

/// Options of the grid version of the discrete time-change engine, in raw
/// (unscaled) time and population units.
pub fn frozen_options(window: f64, quantum: Vec<f64>) -> TimeChangeOptions {
    TimeChangeOptions {
        frozen: Some(FrozenInteraction { window, quantum }),
        ..Default::default()
    }
}

/// One path of the discrete grid process: pair clocks run at
/// `|c_ij| ⌊Z^j(mε)/δ⌋δ Z^i` during window `m`, reproduction is unchanged.
///
/// Driver streams are those of [`simulate_time_change`], so the full and the
/// grid process of one path share their noise.
#[allow(clippy::too_many_arguments)]
pub fn simulate_grid_discrete<R: Recorder<i64>>(
    spec: &DiscreteModelSpec,
    z: &[i64],
    horizon: f64,
    grid: GridConfig,
    seeds: SeedTree,
    path: u64,
    recorder: &mut R,
) -> Result<RunStats> {
    let grid = grid.checked()?;
    let walks = RandomWalkSpec::all_from_model(spec);
    let opts = frozen_options(grid.epsilon, vec![grid.delta; spec.dim()]);
    simulate_time_change(spec, z, horizon, &walks, seeds, path, &opts, recorder)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub grid: GridConfig,
    /// W₁ to the reference per coordinate, then on the coordinate sum.
    pub w1: Vec<f64>,
    /// Bootstrap interval of the W₁ on the coordinate sum.
    pub w1_interval: (f64, f64),
    pub clamp_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub time: f64,
    pub n_paths: usize,
    pub grid_dt: f64,
    pub reference_dt: f64,
    pub reference_clamp_fraction: f64,
    pub rows: Vec<GridRow>,
    /// Sup-norm distance between the common-noise paths of successive grids,
    /// averaged over the coupled paths.
    pub sup_differences: Vec<f64>,
    /// Each interval lies strictly below the previous one.
    pub w1_strictly_decreasing: bool,
    pub sup_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridExperiment {
    pub grids: Vec<GridConfig>,
    pub time: f64,
    pub n_paths: usize,
    pub grid_euler: EulerConfig,
    pub reference_euler: EulerConfig,
    #[serde(default = "default_reps")]
    pub bootstrap_reps: usize,
    #[serde(default = "default_coupled")]
    pub coupled_paths: usize,
}

fn default_reps() -> usize {
    200
}

fn default_coupled() -> usize {
    1
}

pub(crate) fn coordinate_columns(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = samples.first().map_or(0, Vec::len);
    let mut cols: Vec<Vec<f64>> = (0..d)
        .map(|j| samples.iter().map(|s| s[j]).collect())
        .collect();
    cols.push(samples.iter().map(|s| s.iter().sum()).collect());
    cols
}

pub(crate) fn strictly_decreasing(intervals: &[(f64, f64)]) -> bool {
    intervals.windows(2).all(|w| w[1].1 < w[0].0)
}

/// W₁ between grid marginals and a reference Euler sample at `time`, for each
/// grid, plus the common-noise sup-distance between successive grids.
pub fn grid_convergence_experiment(
    spec: &ContinuousModelSpec,
    y: &[f64],
    exp: &GridExperiment,
    seeds: SeedTree,
    ensemble: &Ensemble,
) -> Result<GridReport> {
    let checkpoints = [exp.time];
    let (reference, ref_stats) = euler_samples_at(
        spec,
        y,
        &checkpoints,
        &exp.reference_euler,
        exp.n_paths,
        seeds.subtree(0),
        ensemble,
    )?;
    let reference: Vec<Vec<f64>> = reference.into_iter().map(|mut v| v.remove(0)).collect();
    let ref_cols = coordinate_columns(&reference);
    let mut boot_rng = seeds.subtree(2).stream(0, 0);
    let mut rows = Vec::new();
    for (k, &grid) in exp.grids.iter().enumerate() {
        let grid_seeds = seeds.subtree(1).subtree(k as u64);
        let results = ensemble.map(exp.n_paths, |p| {
            let mut rec = Checkpoints::new(&checkpoints);
            let s = simulate_grid_continuous(spec, y, exp.time, grid, &exp.grid_euler, grid_seeds, p, &mut rec)?;
            Ok((rec.into_values().remove(0), s))
        })?;
        let mut stats = EulerStats::default();
        results.iter().for_each(|(_, s)| stats.merge(s));
        let samples: Vec<Vec<f64>> = results.into_iter().map(|(v, _)| v).collect();
        let cols = coordinate_columns(&samples);
        let w1 = cols.iter().zip(&ref_cols).map(|(a, b)| wasserstein1(a, b)).collect();
        let w1_interval = bootstrap_w1_interval(
            cols.last().expect("sum column"),
            ref_cols.last().expect("sum column"),
            exp.bootstrap_reps,
            0.95,
            &mut boot_rng,
        );
        rows.push(GridRow {
            grid,
            w1,
            w1_interval,
            clamp_fraction: stats.clamp_fraction(),
        });
    }

    // Common-noise trajectories: identical seeds for every grid.
    let coupled_seeds = seeds.subtree(3);
    let mut trajectories: Vec<Vec<ContinuousPath>> = Vec::new();
    for &grid in &exp.grids {
        trajectories.push(ensemble.map(exp.coupled_paths, |p| {
            let mut path = ContinuousPath::new(spec.dim());
            simulate_grid_continuous(spec, y, exp.time, grid, &exp.grid_euler, coupled_seeds, p, &mut path)?;
            Ok(path)
        })?);
    }
    let sup_differences: Vec<f64> = trajectories
        .windows(2)
        .map(|w| {
            let total: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| sup_distance(a, b)).sum();
            total / exp.coupled_paths.max(1) as f64
        })
        .collect();
    let intervals: Vec<(f64, f64)> = rows.iter().map(|r| r.w1_interval).collect();
    Ok(GridReport {
        time: exp.time,
        n_paths: exp.n_paths,
        grid_dt: exp.grid_euler.dt,
        reference_dt: exp.reference_euler.dt,
        reference_clamp_fraction: ref_stats.clamp_fraction(),
        w1_strictly_decreasing: strictly_decreasing(&intervals),
        sup_decreasing: sup_differences.windows(2).all(|w| w[1] < w[0]),
        rows,
        sup_differences,
    })
}

/// Sup-norm distance between two paths recorded on the same time grid.
pub fn sup_distance(a: &ContinuousPath, b: &ContinuousPath) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete::{simulate_gillespie, EngineOptions};
    use crate::model::OffspringPmf;
    use crate::path::Path;
    use crate::rng::channel;
    use crate::stats::{ks_two_sample, MeanEstimate};
    use proptest::prelude::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(floor_quantize(1.26, 0.5), 1.0);
        assert_eq!(floor_quantize(0.0, 0.3), 0.0);
        assert_eq!(floor_quantize(0.3 * 7.0, 0.3), 0.3 * 7.0);
        for k in 0..1000 {
            let x = k as f64 * 0.1;
            let q = floor_quantize(x, 0.1);
            assert!(q <= x && x - q < 0.1);
        }
    }

    proptest! {
        #[test]
        fn quantization_bound(x in 0.0f64..1e6, delta in 1e-6f64..1e3) {
            let q = floor_quantize(x, delta);
            prop_assert!(q <= x);
            prop_assert!(x - q < delta);
            let k = q / delta;
            prop_assert!((k - k.round()).abs() < 1e-6);
        }
    }

    fn logistic(sigma: f64) -> ContinuousModelSpec {
        ContinuousModelSpec::diffusion(Matrix::from_rows(&[&[1.0]]), Matrix::from_rows(&[&[-1.0]]), vec![sigma])
    }

    #[test]
    fn no_competition_reduces_to_the_plain_scheme() {
        let spec = ContinuousModelSpec::diffusion(Matrix::from_rows(&[&[0.3]]), Matrix::zeros(1), vec![0.5]);
        let cfg = EulerConfig::new(1e-2);
        let mut a = ContinuousPath::new(1);
        let mut b = ContinuousPath::new(1);
        crate::continuous::euler_simulate(&spec, &[1.0], 2.0, &cfg, SeedTree::new(1), 3, &mut a).unwrap();
        simulate_grid_continuous(&spec, &[1.0], 2.0, GridConfig::new(0.3, 0.7).unwrap(), &cfg, SeedTree::new(1), 3, &mut b)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_window_is_one_linear_solve() {
        // σ = 0: one window with factor ⌊0.5/0.2⌋0.2 = 0.4 gives y' = (1 − 0.4) y.
        let spec = logistic(0.0);
        let mut p = ContinuousPath::new(1);
        let grid = GridConfig::new(10.0, 0.2).unwrap();
        simulate_grid_continuous(&spec, &[0.5], 1.0, grid, &EulerConfig::new(1e-5), SeedTree::new(0), 0, &mut p).unwrap();
        let exact = 0.5 * (0.6f64).exp();
        assert!((p.final_state()[0] - exact).abs() < 1e-4);
    }

    #[test]
    fn fine_grid_recovers_logistic_ode() {
        let spec = logistic(0.0);
        let mut p = ContinuousPath::new(1);
        let grid = GridConfig::new(0.01, 0.01).unwrap();
        simulate_grid_continuous(&spec, &[0.5], 1.0, grid, &EulerConfig::new(1e-4), SeedTree::new(0), 0, &mut p).unwrap();
        let exact = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((p.final_state()[0] - exact).abs() < 0.02);
    }

    fn branching(c: f64) -> DiscreteModelSpec {
        DiscreteModelSpec {
            lambda: vec![1.0],
            offspring: vec![OffspringPmf::new([(vec![0], 0.45), (vec![2], 0.55)])],
            interaction: Matrix::from_rows(&[&[c]]),
        }
    }

    #[test]
    fn discrete_grid_zero_and_free_cases() {
        let spec = branching(-0.05);
        let mut p = Path::default();
        simulate_grid_discrete(&spec, &[0], 3.0, GridConfig::new(0.5, 1.0).unwrap(), SeedTree::new(0), 0, &mut p).unwrap();
        assert_eq!(p.breakpoints, vec![(0.0, vec![0])]);

        // C = 0: same law as the direct engine.
        let free = branching(0.0);
        let n = 100_000;
        let ens = Ensemble::default();
        let grid = GridConfig::new(0.25, 2.0).unwrap();
        let a = ens
            .map(n, |k| {
                let mut rec = Checkpoints::new(&[1.0]);
                simulate_grid_discrete(&free, &[3], 1.0, grid, SeedTree::new(1), k, &mut rec)?;
                Ok(rec.into_values()[0][0] as f64)
            })
            .unwrap();
        let b = ens
            .map(n, |k| {
                let mut rec = Checkpoints::new(&[1.0]);
                let mut rng = SeedTree::new(2).stream(k, channel::GILLESPIE);
                simulate_gillespie(&free, &[3], 1.0, &mut rng, &EngineOptions::default(), &mut rec, None)?;
                Ok(rec.into_values()[0][0] as f64)
            })
            .unwrap();
        assert!(ks_two_sample(&a, &b).p_value > 0.001);

        // δ above every population: interactions are off and the mean follows
        // the linear flow z e^{tA}.
        let spec = branching(-0.5);
        let grid = GridConfig::new(0.1, 1e9).unwrap();
        let m = MeanEstimate::from_samples(
            ens.map(n, |k| {
                let mut rec = Checkpoints::new(&[1.0]);
                simulate_grid_discrete(&spec, &[3], 1.0, grid, SeedTree::new(3), k, &mut rec)?;
                Ok(rec.into_values()[0][0] as f64)
            })
            .unwrap(),
        );
        let flow = spec.mean_flow(&[3.0], 1.0)[0];
        assert!(m.covers(flow, 3.0), "{m:?} vs {flow}");
    }
}
