//! Rescaled sequences of discrete models and their convergence experiments.

use serde::{Deserialize, Serialize};

use crate::continuous::{euler_samples_at, EulerConfig};
use crate::discrete::{simulate_gillespie, simulate_time_change, EngineOptions, RunStats};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::{coordinate_columns, frozen_options, strictly_decreasing, GridConfig};
use crate::levy::RandomWalkSpec;
use crate::matrix::Matrix;
use crate::model::{ContinuousModelSpec, DiscreteModelSpec, OffspringPmf};
use crate::path::{Checkpoints, Recorder, Rescaled};
use crate::rng::{channel, SeedTree};
use crate::stats::{bootstrap_w1_interval, wasserstein1, MeanEstimate};

/// `coef · n^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLaw {
    pub coef: f64,
    pub exponent: f64,
}

impl PowerLaw {
    pub fn at(&self, n: u64) -> f64 {
        self.coef * (n as f64).powf(self.exponent)
    }
}

/// Sequence of discrete models indexed by `n`: time scale `a_n`, mass scales
/// `b^i_n`, initial states `z_n = ⌈z b_n / a_n⌉`, interactions
/// `c^{ij}_n = c^{ij} / b^i_n`, and a reproduction law shared by all `n`
/// (rates optionally multiplied by `rate_scale(n)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingFamily {
    pub time_scale: PowerLaw,
    pub mass_scales: Vec<PowerLaw>,
    pub lambda: Vec<f64>,
    pub offspring: Vec<OffspringPmf>,
    #[serde(default)]
    pub rate_scale: Option<PowerLaw>,
    pub limit_state: Vec<f64>,
    pub limit_interaction: Matrix,
    pub n_values: Vec<u64>,
}

impl ScalingFamily {
    /// Checks the scaling premise (`a_n → ∞`, `b^i_n / a_n → ∞`) and the
    /// validity of the models.
    pub fn validate(self) -> Result<Self> {
        let d = self.lambda.len();
        if self.mass_scales.len() != d || self.limit_state.len() != d {
            return Err(Error::ScalingPremise(format!(
                "expected {d} mass scales and a {d}-dimensional limit state"
            )));
        }
        let a = self.time_scale;
        if !(a.coef > 0.0 && a.exponent > 0.0) {
            return Err(Error::ScalingPremise(format!(
                "time scale {}·n^{} does not tend to infinity",
                a.coef, a.exponent
            )));
        }
        for (i, b) in self.mass_scales.iter().enumerate() {
            if !(b.coef > 0.0 && b.exponent > a.exponent) {
                return Err(Error::ScalingPremise(format!(
                    "mass scale {i} ({}·n^{}) over time scale does not tend to infinity",
                    b.coef, b.exponent
                )));
            }
        }
        if self.limit_state.iter().any(|&z| !(z >= 0.0 && z.is_finite())) {
            return Err(Error::ScalingPremise("limit state must be finite and nonnegative".into()));
        }
        if self.n_values.contains(&0) {
            return Err(Error::ScalingPremise("n must be positive".into()));
        }
        self.model(self.n_values.first().copied().unwrap_or(1)).validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn model(&self, n: u64) -> DiscreteModelSpec {
        let rate = self.rate_scale.map_or(1.0, |r| r.at(n));
        let d = self.dim();
        let mut c = Matrix::zeros(d);
        for (i, j, x) in self.limit_interaction.entries() {
            c[(i, j)] = x / self.mass_scales[i].at(n);
        }
        DiscreteModelSpec {
            lambda: self.lambda.iter().map(|l| l * rate).collect(),
            offspring: self.offspring.clone(),
            interaction: c,
        }
    }

    pub fn initial_state(&self, n: u64) -> Vec<i64> {
        let a = self.time_scale.at(n);
        self.limit_state
            .iter()
            .zip(&self.mass_scales)
            .map(|(z, b)| (z * b.at(n) / a - 1e-9).ceil().max(0.0) as i64)
            .collect()
    }

    /// Per-coordinate factors `a_n / b^i_n`.
    pub fn mass_factors(&self, n: u64) -> Vec<f64> {
        let a = self.time_scale.at(n);
        self.mass_scales.iter().map(|b| a / b.at(n)).collect()
    }
}

/// Critical binary branching (rate 1, zero or two children with probability
/// ½), `a_n = n`, `b_n = n²`: the rescaled walk tends to a standard Brownian
/// motion and the limit is the Feller diffusion with `σ = ½` and competition `c`.
pub fn build_feller_family(y: f64, c: f64, n_values: &[u64]) -> Result<ScalingFamily> {
    ScalingFamily {
        time_scale: PowerLaw {
            coef: 1.0,
            exponent: 1.0,
        },
        mass_scales: vec![PowerLaw {
            coef: 1.0,
            exponent: 2.0,
        }],
        lambda: vec![1.0],
        offspring: vec![OffspringPmf::new([(vec![0], 0.5), (vec![2], 0.5)])],
        rate_scale: None,
        limit_state: vec![y],
        limit_interaction: Matrix::from_rows(&[&[c]]),
        n_values: n_values.to_vec(),
    }
    .validate()
}

/// Limit model of [`build_feller_family`].
pub fn feller_limit(c: f64) -> ContinuousModelSpec {
    ContinuousModelSpec::diffusion(Matrix::zeros(1), Matrix::from_rows(&[&[c]]), vec![0.5])
}

/// Simulates model `n` up to `a_n · horizon` and hands the recorder the path
/// `t ↦ (a_n / b^i_n) Z^{(n),i}(a_n t)`.
pub fn rescaled_run<R: Recorder<f64>>(
    fam: &ScalingFamily,
    n: u64,
    horizon: f64,
    seeds: SeedTree,
    path: u64,
    opts: &EngineOptions,
    recorder: &mut R,
) -> Result<RunStats> {
    let spec = fam.model(n);
    let a = fam.time_scale.at(n);
    let mut rec = Rescaled::new(recorder, a, fam.mass_factors(n));
    let mut rng = seeds.stream(path, channel::GILLESPIE);
    simulate_gillespie(&spec, &fam.initial_state(n), a * horizon, &mut rng, opts, &mut rec, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingExperiment {
    pub checkpoints: Vec<f64>,
    pub n_paths: usize,
    pub reference_euler: EulerConfig,
    pub reference_paths: usize,
    #[serde(default = "default_reps")]
    pub bootstrap_reps: usize,
    #[serde(default)]
    pub engine: EngineOptions,
}

fn default_reps() -> usize {
    200
}

/// Statistics of one sample at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalStats {
    pub time: f64,
    /// Per coordinate.
    pub mean: Vec<MeanEstimate>,
    /// Fraction of paths at the zero vector.
    pub extinct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: u64,
    pub marginals: Vec<MarginalStats>,
    /// W₁ to the reference on the coordinate sum, per checkpoint.
    pub w1: Vec<f64>,
    pub w1_interval: Vec<(f64, f64)>,
    pub mean_events: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub n_paths: usize,
    pub reference_dt: f64,
    pub reference_paths: usize,
    pub reference: Vec<MarginalStats>,
    pub reference_clamp_fraction: f64,
    pub rows: Vec<ScalingRow>,
    /// At the last checkpoint, every interval lies strictly below the
    /// previous one.
    pub w1_strictly_decreasing: bool,
    /// At the last checkpoint, successive intervals never move up beyond
    /// overlap.
    pub w1_nonincreasing_within_ci: bool,
    /// Convergence is almost sure in path space; this report only measures
    /// marginal distances at finite `n`.
    pub note: String,
}

fn marginal_stats(time: f64, samples: &[Vec<f64>]) -> MarginalStats {
    let d = samples.first().map_or(0, Vec::len);
    MarginalStats {
        time,
        mean: (0..d)
            .map(|j| MeanEstimate::from_samples(samples.iter().map(|s| s[j])))
            .collect(),
        extinct: samples.iter().filter(|s| s.iter().all(|&x| x == 0.0)).count() as f64
            / samples.len().max(1) as f64,
    }
}

fn transpose<T: Clone>(per_path: Vec<Vec<Vec<T>>>, n_checkpoints: usize) -> Vec<Vec<Vec<T>>> {
    let mut out: Vec<Vec<Vec<T>>> = vec![Vec::with_capacity(per_path.len()); n_checkpoints];
    for p in per_path {
        for (k, s) in p.into_iter().enumerate() {
            out[k].push(s);
        }
    }
    out
}

/// Rescaled marginals of model `n` at the checkpoints, with the mean event
/// count per path.
pub fn rescaled_samples_at(
    fam: &ScalingFamily,
    n: u64,
    checkpoints: &[f64],
    n_paths: usize,
    opts: &EngineOptions,
    seeds: SeedTree,
    ensemble: &Ensemble,
) -> Result<(Vec<Vec<Vec<f64>>>, f64)> {
    // Raw checkpoints keep the rescaling out of the event loop.
    let a = fam.time_scale.at(n);
    let raw: Vec<f64> = checkpoints.iter().map(|t| t * a).collect();
    let horizon = raw.iter().cloned().fold(0.0, f64::max);
    let spec = fam.model(n);
    let z = fam.initial_state(n);
    let factors = fam.mass_factors(n);
    let results = ensemble.map(n_paths, |p| {
        let mut rec = Checkpoints::new(&raw);
        let mut rng = seeds.stream(p, channel::GILLESPIE);
        let stats = simulate_gillespie(&spec, &z, horizon, &mut rng, opts, &mut rec, None)?;
        let values: Vec<Vec<f64>> = rec
            .into_values()
            .into_iter()
            .map(|s| s.iter().zip(&factors).map(|(&x, f)| x as f64 * f).collect())
            .collect();
        Ok((values, stats.events))
    })?;
    let mean_events = results.iter().map(|r| r.1 as f64).sum::<f64>() / n_paths.max(1) as f64;
    let per_path = results.into_iter().map(|r| r.0).collect();
    Ok((transpose(per_path, checkpoints.len()), mean_events))
}

/// W₁ distances between rescaled marginals and a reference Euler sample of
/// the limit model, for every `n` of the family.
pub fn scaling_convergence_experiment(
    fam: &ScalingFamily,
    reference: &ContinuousModelSpec,
    exp: &ScalingExperiment,
    seeds: SeedTree,
    ensemble: &Ensemble,
) -> Result<ScalingReport> {
    let (ref_samples, ref_stats) = euler_samples_at(
        reference,
        &fam.limit_state,
        &exp.checkpoints,
        &exp.reference_euler,
        exp.reference_paths,
        seeds.subtree(0),
        ensemble,
    )?;
    let ref_by_time = transpose(ref_samples, exp.checkpoints.len());
    let ref_cols: Vec<Vec<f64>> = ref_by_time
        .iter()
        .map(|s| coordinate_columns(s).pop().expect("sum column"))
        .collect();
    let mut boot_rng = seeds.subtree(2).stream(0, 0);
    let mut rows = Vec::new();
    for &n in &fam.n_values {
        let (by_time, mean_events) = rescaled_samples_at(
            fam,
            n,
            &exp.checkpoints,
            exp.n_paths,
            &exp.engine,
            seeds.subtree(1).subtree(n),
            ensemble,
        )?;
        let mut w1 = Vec::new();
        let mut w1_interval = Vec::new();
        for (k, samples) in by_time.iter().enumerate() {
            let col = coordinate_columns(samples).pop().expect("sum column");
            w1.push(wasserstein1(&col, &ref_cols[k]));
            w1_interval.push(bootstrap_w1_interval(&col, &ref_cols[k], exp.bootstrap_reps, 0.95, &mut boot_rng));
        }
        rows.push(ScalingRow {
            n,
            marginals: exp
                .checkpoints
                .iter()
                .zip(&by_time)
                .map(|(&t, s)| marginal_stats(t, s))
                .collect(),
            w1,
            w1_interval,
            mean_events,
        });
    }
    let last: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.w1_interval.last().copied())
        .collect();
    Ok(ScalingReport {
        n_paths: exp.n_paths,
        reference_dt: exp.reference_euler.dt,
        reference_paths: exp.reference_paths,
        reference: exp
            .checkpoints
            .iter()
            .zip(&ref_by_time)
            .map(|(&t, s)| marginal_stats(t, s))
            .collect(),
        reference_clamp_fraction: ref_stats.clamp_fraction(),
        w1_strictly_decreasing: strictly_decreasing(&last),
        w1_nonincreasing_within_ci: last.windows(2).all(|w| w[1].0 <= w[0].1),
        note: "distributional surrogate: marginal W1 at finite n, not almost-sure path convergence"
            .into(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceRow {
    pub grid: GridConfig,
    /// `E[(a_n/b^j_n) |Z^{(n),j} − Z^{ε,δ,(n),j}|]` per coordinate.
    pub mean_abs_difference: Vec<MeanEstimate>,
    /// Paths on which the two trajectories agree at the checkpoint.
    pub identical_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceReport {
    pub n: u64,
    pub time: f64,
    pub n_paths: usize,
    pub rows: Vec<DifferenceRow>,
    /// Mean differences (summed over coordinates) decrease from grid to grid.
    pub decreasing: bool,
}

/// Shared-noise distance between model `n` and its grid version at `time`.
///
/// Both solve the time-change equation with the same walks and the same unit
/// Poisson processes; the grid uses windows of raw length `a_n ε` and raw
/// population quanta `δ b^j_n / a_n`, i.e. the quantization acts on the
/// rescaled populations.
#[allow(clippy::too_many_arguments)]
pub fn grid_difference_experiment(
    fam: &ScalingFamily,
    grids: &[GridConfig],
    n: u64,
    time: f64,
    n_paths: usize,
    opts: &EngineOptions,
    seeds: SeedTree,
    ensemble: &Ensemble,
) -> Result<DifferenceReport> {
    let spec = fam.model(n);
    let walks = RandomWalkSpec::all_from_model(&spec);
    let z = fam.initial_state(n);
    let a = fam.time_scale.at(n);
    let factors = fam.mass_factors(n);
    let raw_time = a * time;
    let grid_opts: Vec<_> = grids
        .iter()
        .map(|g| {
            let g = g.checked()?;
            let quantum = factors.iter().map(|f| g.delta / f).collect();
            let mut o = frozen_options(a * g.epsilon, quantum);
            o.engine = *opts;
            Ok(o)
        })
        .collect::<Result<_>>()?;
    let full_opts = crate::discrete::TimeChangeOptions {
        engine: *opts,
        ..Default::default()
    };
    let per_path = ensemble.map(n_paths, |p| {
        let run = |o: &crate::discrete::TimeChangeOptions| -> Result<Vec<i64>> {
            let mut rec = Checkpoints::new(&[raw_time]);
            simulate_time_change(&spec, &z, raw_time, &walks, seeds, p, o, &mut rec)?;
            Ok(rec.into_values().remove(0))
        };
        let full = run(&full_opts)?;
        grid_opts
            .iter()
            .map(|o| {
                let g = run(o)?;
                Ok(full
                    .iter()
                    .zip(&g)
                    .zip(&factors)
                    .map(|((x, y), f)| (x - y).abs() as f64 * f)
                    .collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let d = fam.dim();
    let rows: Vec<DifferenceRow> = grids
        .iter()
        .enumerate()
        .map(|(k, &grid)| DifferenceRow {
            grid,
            mean_abs_difference: (0..d)
                .map(|j| MeanEstimate::from_samples(per_path.iter().map(|r| r[k][j])))
                .collect(),
            identical_fraction: per_path
                .iter()
                .filter(|r| r[k].iter().all(|&x| x == 0.0))
                .count() as f64
                / n_paths.max(1) as f64,
        })
        .collect();
    let totals: Vec<f64> = rows
        .iter()
        .map(|r| r.mean_abs_difference.iter().map(|m| m.mean).sum())
        .collect();
    Ok(DifferenceReport {
        n,
        time,
        n_paths,
        decreasing: totals.windows(2).all(|w| w[1] < w[0]),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{sample_walk_increment, IncrementStream};

    #[test]
    fn feller_family_bookkeeping() {
        let fam = build_feller_family(0.75, -1.0, &[10, 100, 1000]).unwrap();
        for &n in &fam.n_values {
            let z = fam.initial_state(n)[0];
            assert_eq!(z, (0.75 * n as f64).ceil() as i64);
            let c_n = fam.model(n).interaction[(0, 0)];
            assert!((c_n * (n * n) as f64 + 1.0).abs() < 1e-12);
        }
        assert_eq!(fam.initial_state(10), vec![8]);
    }

    #[test]
    fn degenerate_family_is_rejected() {
        let mut fam = build_feller_family(1.0, 0.0, &[10]).unwrap();
        fam.mass_scales[0].exponent = 1.0;
        assert!(matches!(fam.clone().validate(), Err(Error::ScalingPremise(_))));
        fam.mass_scales[0].exponent = 2.0;
        fam.time_scale.exponent = 0.0;
        assert!(matches!(fam.validate(), Err(Error::ScalingPremise(_))));
    }

    #[test]
    fn rescaled_walk_variance() {
        // (a_n/b_n) X(b_n t) at n = 100, t = 1 has variance λ b_n (a_n/b_n)² = 1.
        let fam = build_feller_family(1.0, 0.0, &[100]).unwrap();
        let walk = RandomWalkSpec::from_model(&fam.model(100), 0);
        let (a, b) = (100.0, 10_000.0);
        let xs: Vec<f64> = (0..100_000u64)
            .map(|p| {
                let mut s = IncrementStream::new(SeedTree::new(3).stream(p, 0));
                sample_walk_increment(&walk, b, &mut s)[0] as f64 * a / b
            })
            .collect();
        let m = MeanEstimate::from_samples(xs.iter().copied());
        let var = MeanEstimate::from_samples(xs.iter().map(|x| (x - m.mean).powi(2))).mean;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn zero_start_stays_zero() {
        let fam = build_feller_family(0.0, -1.0, &[10, 100]).unwrap();
        for &n in &fam.n_values {
            let mut p = crate::path::ContinuousPath::new(1);
            rescaled_run(&fam, n, 1.0, SeedTree::new(0), 0, &EngineOptions::default(), &mut p).unwrap();
            assert!(p.states.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn critical_mean_is_conserved() {
        let fam = build_feller_family(1.0, 0.0, &[30]).unwrap();
        let (by_time, _) = rescaled_samples_at(
            &fam,
            30,
            &[0.5, 1.0],
            20_000,
            &EngineOptions::default(),
            SeedTree::new(5),
            &Ensemble::default(),
        )
        .unwrap();
        for s in &by_time {
            let m = marginal_stats(0.0, s).mean[0];
            assert!(m.covers(1.0, 3.0), "{m:?}");
        }
    }

    #[test]
    fn no_competition_difference_is_zero() {
        let fam = build_feller_family(0.5, 0.0, &[50]).unwrap();
        let grids = [GridConfig::new(0.5, 0.5).unwrap(), GridConfig::new(0.05, 0.05).unwrap()];
        let r = grid_difference_experiment(
            &fam,
            &grids,
            50,
            1.0,
            200,
            &EngineOptions::default(),
            SeedTree::new(1),
            &Ensemble::default(),
        )
        .unwrap();
        for row in &r.rows {
            assert_eq!(row.mean_abs_difference[0].mean, 0.0);
            assert_eq!(row.identical_fraction, 1.0);
        }
    }

    #[test]
    fn huge_quantum_gives_positive_baseline() {
        let fam = build_feller_family(1.0, -2.0, &[50]).unwrap();
        let r = grid_difference_experiment(
            &fam,
            &[GridConfig::new(0.1, 1e6).unwrap()],
            50,
            1.0,
            500,
            &EngineOptions::default(),
            SeedTree::new(2),
            &Ensemble::default(),
        )
        .unwrap();
        assert!(r.rows[0].mean_abs_difference[0].mean > 0.05);
    }
}
