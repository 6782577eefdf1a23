//! Continuous-state model: Euler scheme for the jump SDE, explicit solver of
//! the Lamperti time-change equation, and generator-based checks.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::levy::{add_levy_increment, poisson, IncrementStream, LevyDriverSpec};
use crate::matrix::Matrix;
use crate::model::{ContinuousModelSpec, JumpMeasureSpec};
use crate::path::Recorder;
use crate::rng::{channel, SeedTree};
use crate::stats::MeanEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EulerConfig {
    pub dt: f64,
    /// Caps states and jump sizes at this level in every coefficient.
    #[serde(default)]
    pub truncation_level: Option<f64>,
    /// Fail with [`Error::StepRejected`] when a step moves a coordinate by
    /// more than this multiple of the largest coordinate.
    #[serde(default)]
    pub reject_ratio: Option<f64>,
    /// Each Brownian increment is the sum of this many unit normals, so runs
    /// at `dt` and `dt / k` with `k` times fewer substeps share their noise.
    #[serde(default = "one")]
    pub noise_substeps: u32,
}

fn one() -> u32 {
    1
}

impl EulerConfig {
    pub fn new(dt: f64) -> Self {
        EulerConfig {
            dt,
            truncation_level: None,
            reject_ratio: None,
            noise_substeps: 1,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt = {} must be positive", self.dt)));
        }
        if self.noise_substeps == 0 {
            return Err(Error::InvalidArgument("noise_substeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerStats {
    pub steps: u64,
    /// Steps after which at least one coordinate was clamped to zero.
    pub clamped_steps: u64,
}

impl EulerStats {
    pub fn clamp_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.clamped_steps as f64 / self.steps as f64
        }
    }

    pub fn merge(&mut self, other: &EulerStats) {
        self.steps += other.steps;
        self.clamped_steps += other.clamped_steps;
    }
}

fn check_state(y: &[f64], d: usize, horizon: f64) -> Result<()> {
    if y.len() != d {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} coordinates, model has {d}",
            y.len()
        )));
    }
    if y.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidArgument(format!("initial state {y:?} must be finite and nonnegative")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be finite and nonnegative")));
    }
    Ok(())
}

fn step_count(horizon: f64, dt: f64) -> u64 {
    ((horizon / dt) - 1e-9).ceil().max(0.0) as u64
}

/// Extra drift hook for the Euler scheme: adds to `out` the drift of the
/// competition part at step `k` (time `t`) and state `y`.
pub(crate) trait InteractionDrift {
    fn add(&mut self, k: u64, t: f64, y: &[f64], out: &mut [f64]);
}

/// The quadratic term `Σ_i c_ij y_i y_j`.
pub(crate) struct Quadratic<'a>(pub &'a Matrix);

impl InteractionDrift for Quadratic<'_> {
    #[inline]
    fn add(&mut self, _k: u64, _t: f64, y: &[f64], out: &mut [f64]) {
        for (i, j, c) in self.0.entries() {
            if c != 0.0 {
                out[j] += c * y[i] * y[j];
            }
        }
    }
}

/// One Euler–Maruyama path of the SDE from `y`, using path `path` of `seeds`.
pub fn euler_simulate<R: Recorder<f64>>(
    spec: &ContinuousModelSpec,
    y: &[f64],
    horizon: f64,
    cfg: &EulerConfig,
    seeds: SeedTree,
    path: u64,
    recorder: &mut R,
) -> Result<EulerStats> {
    euler_core(spec, y, horizon, cfg, seeds, path, &mut Quadratic(&spec.c), recorder)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn euler_core<R: Recorder<f64>, I: InteractionDrift>(
    spec: &ContinuousModelSpec,
    y0: &[f64],
    horizon: f64,
    cfg: &EulerConfig,
    seeds: SeedTree,
    path: u64,
    interaction: &mut I,
    recorder: &mut R,
) -> Result<EulerStats> {
    cfg.check()?;
    let d = spec.dim();
    check_state(y0, d, horizon)?;
    let mut brownian = seeds.stream(path, channel::BROWNIAN);
    let mut jump_rng = seeds.stream(path, channel::JUMPS);
    let jump_measures: Vec<Option<&JumpMeasureSpec>> =
        (0..d).map(|i| spec.jumps(i).filter(|m| !m.is_empty())).collect();
    let jump_drift: Vec<Vec<f64>> = jump_measures
        .iter()
        .map(|m| m.map_or_else(|| vec![0.0; d], |m| m.drift_correction(d)))
        .collect();
    let cap = cfg.truncation_level.unwrap_or(f64::INFINITY);
    let substep_scale = (1.0 / cfg.noise_substeps as f64).sqrt();

    let mut y = y0.to_vec();
    let mut capped = vec![0.0; d];
    let mut delta = vec![0.0; d];
    let mut jump = vec![0.0; d];
    let mut stats = EulerStats::default();
    let n_steps = step_count(horizon, cfg.dt);
    recorder.record(0.0, &y);
    for k in 0..n_steps {
        let t = k as f64 * cfg.dt;
        let t_next = ((k + 1) as f64 * cfg.dt).min(horizon);
        let h = t_next - t;
        for (c, &x) in capped.iter_mut().zip(&y) {
            *c = x.max(0.0).min(cap);
        }
        // Drift.
        delta.iter_mut().for_each(|x| *x = 0.0);
        interaction.add(k, t, &capped, &mut delta);
        for (i, j, b) in spec.b.entries() {
            if b != 0.0 {
                delta[j] += b * capped[i];
            }
        }
        for i in 0..d {
            if jump_measures[i].is_some() && capped[i] > 0.0 {
                for j in 0..d {
                    delta[j] += capped[i] * jump_drift[i][j];
                }
            }
        }
        for x in delta.iter_mut() {
            *x *= h;
        }
        // Diffusion.
        for j in 0..d {
            if spec.sigma[j] > 0.0 {
                let mut g = 0.0;
                for _ in 0..cfg.noise_substeps {
                    let z: f64 = StandardNormal.sample(&mut brownian);
                    g += z;
                }
                delta[j] += (2.0 * spec.sigma[j] * capped[j] * h).sqrt() * g * substep_scale;
            }
        }
        // Jumps, with intensity frozen at the left endpoint.
        let mut jumped = false;
        for i in 0..d {
            let Some(m) = jump_measures[i] else { continue };
            if capped[i] <= 0.0 {
                continue;
            }
            for comp in &m.components {
                let n = poisson(comp.mass * capped[i] * h, &mut jump_rng);
                for _ in 0..n {
                    comp.sampler.sample_into(&mut jump_rng, &mut jump);
                    for (dl, r) in delta.iter_mut().zip(&jump) {
                        *dl += r.min(cap);
                    }
                    jumped = true;
                }
            }
        }
        if let Some(ratio) = cfg.reject_ratio {
            let scale = y.iter().cloned().fold(0.0, f64::max);
            if let Some(j) = (0..d).find(|&j| delta[j].abs() > ratio * scale) {
                return Err(Error::StepRejected {
                    time: t,
                    coordinate: j,
                    from: y[j],
                    to: y[j] + delta[j],
                });
            }
        }
        let mut clamped = false;
        for (x, dl) in y.iter_mut().zip(&delta) {
            *x += dl;
            if *x < 0.0 {
                *x = 0.0;
                clamped = true;
            }
            if !x.is_finite() {
                return Err(Error::InvalidArgument(format!("state became non-finite at t = {t}")));
            }
        }
        stats.steps += 1;
        stats.clamped_steps += clamped as u64;
        if jumped {
            recorder.mark_jump();
        }
        recorder.record(t_next, &y);
    }
    recorder.finish(horizon, &y);
    Ok(stats)
}

/// Explicit solver of the time-change equation
/// `Z^j_t = z^j + Σ_i [X^{i,j}(∫Z^i) + c_ij ∫Z^i Z^j]`.
///
/// Driver `i` draws from channel `DRIVERS + i` of path `path`.
#[allow(clippy::too_many_arguments)]
pub fn lamperti_simulate<R: Recorder<f64>>(
    drivers: &[LevyDriverSpec],
    c: &Matrix,
    z: &[f64],
    horizon: f64,
    dt: f64,
    seeds: SeedTree,
    path: u64,
    recorder: &mut R,
) -> Result<EulerStats> {
    EulerConfig::new(dt).check()?;
    let d = drivers.len();
    if c.dim() != d || drivers.iter().any(|dr| dr.dim() != d) {
        return Err(Error::InvalidArgument(format!(
            "expected {d} drivers of dimension {d} and a {d}x{d} interaction matrix"
        )));
    }
    check_state(z, d, horizon)?;
    let mut streams: Vec<IncrementStream> = (0..d)
        .map(|i| IncrementStream::new(seeds.stream(path, channel::DRIVERS + i as u64)))
        .collect();
    let drifts: Vec<Vec<f64>> = drivers.iter().map(LevyDriverSpec::effective_drift).collect();
    let mut y = z.to_vec();
    let mut delta = vec![0.0; d];
    let mut stats = EulerStats::default();
    recorder.record(0.0, &y);
    for k in 0..step_count(horizon, dt) {
        let t = k as f64 * dt;
        let t_next = ((k + 1) as f64 * dt).min(horizon);
        let h = t_next - t;
        delta.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..d {
            if y[i] > 0.0 {
                add_levy_increment(&drivers[i], &drifts[i], y[i] * h, &mut streams[i], &mut delta);
            }
        }
        for (i, j, cij) in c.entries() {
            if cij != 0.0 {
                delta[j] += cij * y[i] * y[j] * h;
            }
        }
        let mut clamped = false;
        for (x, dl) in y.iter_mut().zip(&delta) {
            *x += dl;
            if *x < 0.0 {
                *x = 0.0;
                clamped = true;
            }
        }
        stats.steps += 1;
        stats.clamped_steps += clamped as u64;
        recorder.record(t_next, &y);
    }
    recorder.finish(horizon, &y);
    Ok(stats)
}

/// A twice-differentiable test function with gradient and Hessian diagonal.
pub trait TestFunction: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian_diag(&self, x: &[f64], out: &mut [f64]);
    fn name(&self) -> String;
}

/// The standard test functions: constants, coordinates, squares, products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Monomial {
    Constant { value: f64 },
    Coordinate { j: usize },
    Square { j: usize },
    Product { i: usize, j: usize },
}

impl Monomial {
    /// `x_j`, `x_j²` and `x_i x_j` (`i < j`) for every coordinate.
    pub fn standard_set(d: usize) -> Vec<Monomial> {
        let mut out: Vec<Monomial> = (0..d).map(|j| Monomial::Coordinate { j }).collect();
        out.extend((0..d).map(|j| Monomial::Square { j }));
        for i in 0..d {
            for j in i + 1..d {
                out.push(Monomial::Product { i, j });
            }
        }
        out
    }
}

impl TestFunction for Monomial {
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Monomial::Constant { value } => value,
            Monomial::Coordinate { j } => x[j],
            Monomial::Square { j } => x[j] * x[j],
            Monomial::Product { i, j } => x[i] * x[j],
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        match *self {
            Monomial::Constant { .. } => {}
            Monomial::Coordinate { j } => out[j] = 1.0,
            Monomial::Square { j } => out[j] = 2.0 * x[j],
            Monomial::Product { i, j } => {
                out[i] += x[j];
                out[j] += x[i];
            }
        }
    }

    fn hessian_diag(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|h| *h = 0.0);
        match *self {
            Monomial::Square { j } => out[j] = 2.0,
            Monomial::Product { i, j } if i == j => out[i] = 2.0,
            _ => {}
        }
    }

    fn name(&self) -> String {
        match *self {
            Monomial::Constant { value } => format!("{value}"),
            Monomial::Coordinate { j } => format!("x{}", j + 1),
            Monomial::Square { j } => format!("x{}^2", j + 1),
            Monomial::Product { i, j } => format!("x{}*x{}", i + 1, j + 1),
        }
    }
}

/// `(A f)(x)` for the generator of the continuous model.
pub fn generator_apply(spec: &ContinuousModelSpec, f: &dyn TestFunction, x: &[f64]) -> f64 {
    let d = spec.dim();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d];
    f.gradient(x, &mut grad);
    f.hessian_diag(x, &mut hess);
    let mut drift = vec![0.0; d];
    Quadratic(&spec.c).add(0, 0.0, x, &mut drift);
    for (i, j, b) in spec.b.entries() {
        drift[j] += b * x[i];
    }
    let mut out = 0.0;
    for j in 0..d {
        out += spec.sigma[j] * x[j] * hess[j];
    }
    let fx = f.value(x);
    let mut shifted = vec![0.0; d];
    for i in 0..d {
        let Some(m) = spec.jumps(i) else { continue };
        if x[i] == 0.0 {
            continue;
        }
        if let Some(tr) = &m.small_jump_truncation {
            for j in 0..d {
                drift[j] += x[i] * tr.compensator_drift[j];
            }
        }
        for comp in &m.components {
            let integral = comp.sampler.expect(|r| {
                for ((s, xv), rv) in shifted.iter_mut().zip(x).zip(r) {
                    *s = xv + rv;
                }
                let lin: f64 = r.iter().zip(&grad).map(|(a, b)| a * b).sum();
                f.value(&shifted) - fx - if comp.compensated { lin } else { 0.0 }
            });
            out += x[i] * comp.mass * integral;
        }
    }
    out + drift.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>()
}

/// Accumulates `f(Y_t) − f(Y_0) − ∫₀ᵗ (A f)(Y_s) ds` along one path, with a
/// left-point rule on the recorded times.
pub struct GeneratorIntegral<'a> {
    spec: &'a ContinuousModelSpec,
    functions: &'a [&'a dyn TestFunction],
    prev_t: f64,
    prev_af: Vec<f64>,
    initial: Vec<f64>,
    integral: Vec<f64>,
    last: Vec<f64>,
}

impl<'a> GeneratorIntegral<'a> {
    pub fn new(spec: &'a ContinuousModelSpec, functions: &'a [&'a dyn TestFunction]) -> Self {
        let n = functions.len();
        GeneratorIntegral {
            spec,
            functions,
            prev_t: 0.0,
            prev_af: vec![0.0; n],
            initial: Vec::new(),
            integral: vec![0.0; n],
            last: vec![0.0; n],
        }
    }

    /// One residual per test function.
    pub fn residuals(&self) -> Vec<f64> {
        (0..self.functions.len())
            .map(|k| self.last[k] - self.initial[k] - self.integral[k])
            .collect()
    }
}

impl Recorder<f64> for GeneratorIntegral<'_> {
    fn record(&mut self, t: f64, state: &[f64]) {
        let values: Vec<f64> = self.functions.iter().map(|f| f.value(state)).collect();
        if self.initial.is_empty() {
            self.initial = values.clone();
        } else {
            for k in 0..values.len() {
                self.integral[k] += self.prev_af[k] * (t - self.prev_t);
            }
        }
        for (k, f) in self.functions.iter().enumerate() {
            self.prev_af[k] = generator_apply(self.spec, *f, state);
        }
        self.prev_t = t;
        self.last = values;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleResidual {
    pub function: String,
    pub estimate: MeanEstimate,
}

impl MartingaleResidual {
    /// Whether zero lies within `k` standard errors.
    pub fn consistent(&self, k: f64) -> bool {
        self.estimate.covers(0.0, k)
    }
}

/// Residual statistics over stored paths.
pub fn martingale_residual(
    spec: &ContinuousModelSpec,
    functions: &[&dyn TestFunction],
    paths: &[crate::path::ContinuousPath],
) -> Vec<MartingaleResidual> {
    let per_path: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| {
            let mut acc = GeneratorIntegral::new(spec, functions);
            for k in 0..p.len() {
                acc.record(p.times[k], p.state(k));
            }
            acc.residuals()
        })
        .collect();
    summarize_residuals(functions, &per_path)
}

fn summarize_residuals(functions: &[&dyn TestFunction], per_path: &[Vec<f64>]) -> Vec<MartingaleResidual> {
    functions
        .iter()
        .enumerate()
        .map(|(k, f)| MartingaleResidual {
            function: f.name(),
            estimate: MeanEstimate::from_samples(per_path.iter().map(|r| r[k])),
        })
        .collect()
}

/// Simulates `n_paths` Euler paths and evaluates the residuals on the fly,
/// without storing trajectories. Also returns the pooled clamp counters.
#[allow(clippy::too_many_arguments)]
pub fn martingale_residual_mc(
    spec: &ContinuousModelSpec,
    functions: &[&dyn TestFunction],
    y: &[f64],
    horizon: f64,
    cfg: &EulerConfig,
    n_paths: usize,
    seeds: SeedTree,
    ensemble: &Ensemble,
) -> Result<(Vec<MartingaleResidual>, EulerStats)> {
    let results = ensemble.map(n_paths, |p| {
        let mut acc = GeneratorIntegral::new(spec, functions);
        let stats = euler_simulate(spec, y, horizon, cfg, seeds, p, &mut acc)?;
        Ok((acc.residuals(), stats))
    })?;
    let mut stats = EulerStats::default();
    for (_, s) in &results {
        stats.merge(s);
    }
    let per_path: Vec<Vec<f64>> = results.into_iter().map(|(r, _)| r).collect();
    Ok((summarize_residuals(functions, &per_path), stats))
}

/// Marginals at `checkpoints` of `n_paths` Euler paths.
#[allow(clippy::too_many_arguments)]
pub fn euler_samples_at(
    spec: &ContinuousModelSpec,
    y: &[f64],
    checkpoints: &[f64],
    cfg: &EulerConfig,
    n_paths: usize,
    seeds: SeedTree,
    ensemble: &Ensemble,
) -> Result<(Vec<Vec<Vec<f64>>>, EulerStats)> {
    let horizon = checkpoints.iter().cloned().fold(0.0, f64::max);
    let results = ensemble.map(n_paths, |p| {
        let mut rec = crate::path::Checkpoints::new(checkpoints);
        let stats = euler_simulate(spec, y, horizon, cfg, seeds, p, &mut rec)?;
        Ok((rec.into_values(), stats))
    })?;
    let mut stats = EulerStats::default();
    for (_, s) in &results {
        stats.merge(s);
    }
    Ok((results.into_iter().map(|(v, _)| v).collect(), stats))
}
