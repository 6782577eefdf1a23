//! Exact simulation of the discrete-state model: the direct event-driven
//! CTMC and the multiparameter random time change.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::floor_quantize;
use crate::levy::{EventClock, RandomWalkSpec};
use crate::model::DiscreteModelSpec;
use crate::path::{Checkpoints, Path, Recorder};
use crate::rng::{channel, SeedTree, SimRng};
use crate::stats::{
    chi_square_homogeneity, empirical_distribution, ks_two_sample, tv_distance, ChiSquareResult,
    KsResult,
};

pub const DEFAULT_RATE_CAP: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineOptions {
    /// Abort with [`Error::RateOverflow`] above this total event rate.
    #[serde(default = "default_rate_cap")]
    pub rate_cap: f64,
}

fn default_rate_cap() -> f64 {
    DEFAULT_RATE_CAP
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            rate_cap: DEFAULT_RATE_CAP,
        }
    }
}

/// Counters of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub events: u64,
    /// Time the zero vector was hit, if before the horizon.
    pub absorbed_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// One type-`i` individual replaced by `offspring`.
    Reproduction { i: usize, offspring: Vec<u32> },
    /// Pair interaction adding `sign` to coordinate `j`.
    Interaction { i: usize, j: usize, sign: i64 },
}

impl EventKind {
    pub fn apply(&self, state: &mut [i64]) {
        match self {
            EventKind::Reproduction { i, offspring } => {
                state[*i] -= 1;
                for (s, &v) in state.iter_mut().zip(offspring) {
                    *s += v as i64;
                }
            }
            EventKind::Interaction { j, sign, .. } => state[*j] += sign,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
    pub pre_state: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    /// Rebuilds the path from the initial state.
    pub fn replay(&self, z: &[i64], horizon: f64) -> Path {
        let mut path = Path::default();
        let mut state = z.to_vec();
        path.record(0.0, &state);
        for e in &self.events {
            e.kind.apply(&mut state);
            path.record(e.time, &state);
        }
        path.finish(horizon, &state);
        path
    }

    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_initial(spec: &DiscreteModelSpec, z: &[i64], horizon: f64) -> Result<()> {
    if z.len() != spec.dim() {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} coordinates, model has {}",
            z.len(),
            spec.dim()
        )));
    }
    if z.iter().any(|&x| x < 0) {
        return Err(Error::InvalidArgument(format!("initial state {z:?} is negative")));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be finite and nonnegative")));
    }
    Ok(())
}

struct PairRate {
    i: usize,
    j: usize,
    rate: f64,
    sign: i64,
}

fn pair_rates(spec: &DiscreteModelSpec) -> Vec<PairRate> {
    spec.interaction
        .entries()
        .filter(|&(_, _, c)| c != 0.0)
        .map(|(i, j, c)| PairRate {
            i,
            j,
            rate: c.abs(),
            sign: c.signum() as i64,
        })
        .collect()
}

/// Rate tables of a model, flattened for the event loop.
struct Compiled {
    d: usize,
    lambda: Vec<f64>,
    /// Outcomes of type `i` occupy `start[i]..start[i + 1]`.
    start: Vec<usize>,
    /// Normalized cumulative probabilities.
    cum: Vec<f64>,
    /// Index into the model's outcome list, for the event log.
    index: Vec<usize>,
    /// Row `k` holds `v − e_i` of outcome `k`.
    deltas: Vec<i64>,
    pairs: Vec<PairRate>,
}

impl Compiled {
    fn new(spec: &DiscreteModelSpec) -> Self {
        let d = spec.dim();
        let mut start = vec![0];
        let (mut cum, mut index, mut deltas) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..d {
            let pmf = &spec.offspring[i];
            let mass = pmf.total_mass();
            let mut acc = 0.0;
            for (k, o) in pmf.outcomes.iter().enumerate().filter(|(_, o)| o.prob > 0.0) {
                acc += o.prob;
                cum.push(acc / mass);
                index.push(k);
                deltas.extend((0..d).map(|j| o.offspring[j] as i64 - (i == j) as i64));
            }
            start.push(cum.len());
        }
        Compiled {
            d,
            lambda: spec.lambda.clone(),
            start,
            cum,
            index,
            deltas,
            pairs: pair_rates(spec),
        }
    }

    /// Outcome row of a type-`i` reproduction, for `u` uniform on `[0, rate)`.
    #[inline]
    fn pick_outcome(&self, i: usize, u: f64, rate: f64) -> usize {
        let (lo, hi) = (self.start[i], self.start[i + 1]);
        let cum = &self.cum[lo..hi - 1];
        lo + cum.iter().position(|&c| u < c * rate).unwrap_or(cum.len())
    }
}

/// Direct CTMC simulation of the model from `z` up to `horizon`.
///
/// The recorder sees the initial state and every post-jump state; `log`
/// receives every event when present.
pub fn simulate_gillespie<R: Recorder<i64>>(
    spec: &DiscreteModelSpec,
    z: &[i64],
    horizon: f64,
    rng: &mut SimRng,
    opts: &EngineOptions,
    recorder: &mut R,
    mut log: Option<&mut EventLog>,
) -> Result<RunStats> {
    check_initial(spec, z, horizon)?;
    let tables = Compiled::new(spec);
    let d = tables.d;
    let n_channels = d + tables.pairs.len();
    let lambda = &tables.lambda[..d];
    let mut state = z.to_vec();
    let mut rates = vec![0.0; n_channels];
    let mut events = 0u64;
    let mut absorbed_at = None;
    let mut t = 0.0;
    recorder.record(t, &state);
    loop {
        let mut total = 0.0;
        for ((r, &l), &x) in rates.iter_mut().zip(lambda).zip(&state) {
            *r = l * x as f64;
            total += *r;
        }
        for (r, p) in rates[d..].iter_mut().zip(&tables.pairs) {
            *r = p.rate * (state[p.i] * state[p.j]) as f64;
            total += *r;
        }
        if total == 0.0 {
            if state.iter().all(|&x| x == 0) {
                absorbed_at = Some(t);
            }
            break;
        }
        if total > opts.rate_cap {
            return Err(Error::RateOverflow {
                time: t,
                rate: total,
                cap: opts.rate_cap,
            });
        }
        let e: f64 = Exp1.sample(rng);
        t += e / total;
        if t >= horizon {
            break;
        }
        // One uniform picks the channel, and its remainder the outcome.
        let mut u = rng.random::<f64>() * total;
        let mut chosen = usize::MAX;
        for (k, &r) in rates.iter().enumerate() {
            if u < r {
                chosen = k;
                break;
            }
            u -= r;
        }
        if chosen == usize::MAX {
            // Rounding ran off the end: take the last open channel.
            chosen = rates.iter().rposition(|&r| r > 0.0).expect("total > 0");
            u = 0.5 * rates[chosen];
        }
        let pre = log.is_some().then(|| state.clone());
        let row = if chosen < d {
            let row = tables.pick_outcome(chosen, u, rates[chosen]);
            if d == 1 {
                state[0] += tables.deltas[row];
            } else {
                for (s, dv) in state.iter_mut().zip(&tables.deltas[row * d..(row + 1) * d]) {
                    *s += dv;
                }
            }
            row
        } else {
            let p = &tables.pairs[chosen - d];
            state[p.j] += p.sign;
            0
        };
        debug_assert!(state.iter().all(|&x| x >= 0));
        events += 1;
        if let (Some(log), Some(pre_state)) = (log.as_deref_mut(), pre) {
            let kind = if chosen < d {
                EventKind::Reproduction {
                    i: chosen,
                    offspring: spec.offspring[chosen].outcomes[tables.index[row]]
                        .offspring
                        .clone(),
                }
            } else {
                let p = &tables.pairs[chosen - d];
                EventKind::Interaction {
                    i: p.i,
                    j: p.j,
                    sign: p.sign,
                }
            };
            log.events.push(Event {
                time: t,
                kind,
                pre_state,
            });
        }
        recorder.mark_jump();
        recorder.record(t, &state);
    }
    recorder.finish(horizon, &state);
    Ok(RunStats {
        events,
        absorbed_at,
    })
}

/// Convenience wrapper returning the full path and event log of path `path`.
pub fn gillespie_path(
    spec: &DiscreteModelSpec,
    z: &[i64],
    horizon: f64,
    seeds: SeedTree,
    path: u64,
    opts: &EngineOptions,
) -> Result<(Path, EventLog)> {
    let mut rng = seeds.stream(path, channel::GILLESPIE);
    let mut out = Path::default();
    let mut log = EventLog::default();
    simulate_gillespie(spec, z, horizon, &mut rng, opts, &mut out, Some(&mut log))?;
    Ok((out, log))
}

/// How driver clocks place their events.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DriverTiming {
    /// Poisson event times (the model).
    #[default]
    Poisson,
    /// Events exactly at `spacing, 2 spacing, ...` on every driver clock.
    /// A deterministic test mode.
    Lattice { spacing: f64 },
}

/// Frozen-competition clocks: during `[mε, (m+1)ε)` the pair clock `(i, j)`
/// runs at `|c_ij| · q_j · Z^i` with `q_j = ⌊Z^j(mε)/quantum_j⌋ quantum_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenInteraction {
    pub window: f64,
    pub quantum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeChangeOptions {
    #[serde(default)]
    pub engine: EngineOptions,
    #[serde(default)]
    pub timing: DriverTiming,
    /// `None` runs the pair clocks at the full rate `|c_ij| Z^i Z^j`.
    #[serde(default)]
    pub frozen: Option<FrozenInteraction>,
}

/// Channel of the walk driving type `i`.
pub fn walk_channel(i: usize) -> u64 {
    channel::DRIVERS + i as u64
}

/// Channel of the unit Poisson process of the pair `(i, j)`.
pub fn pair_channel(d: usize, i: usize, j: usize) -> u64 {
    channel::DRIVERS + (d + i * d + j) as u64
}

/// Solves the random time-change equation driven by one walk per type and
/// one unit Poisson process per nonzero interaction, for path `path`.
///
/// Every driver owns its own stream, so two runs that differ only in the
/// pair clock speeds (full versus frozen) share their noise.
#[allow(clippy::too_many_arguments)]
pub fn simulate_time_change<R: Recorder<i64>>(
    spec: &DiscreteModelSpec,
    z: &[i64],
    horizon: f64,
    walks: &[RandomWalkSpec],
    seeds: SeedTree,
    path: u64,
    opts: &TimeChangeOptions,
    recorder: &mut R,
) -> Result<RunStats> {
    check_initial(spec, z, horizon)?;
    let d = spec.dim();
    if walks.len() != d || walks.iter().any(|w| w.dim() != d) {
        return Err(Error::InvalidArgument(format!(
            "expected {d} walks of dimension {d}"
        )));
    }
    let make_clock = |rate: f64, rng: SimRng| match opts.timing {
        DriverTiming::Poisson => EventClock::poisson(rate, rng),
        DriverTiming::Lattice { spacing } => EventClock::lattice(spacing, rng),
    };
    let mut walk_clocks: Vec<EventClock> = walks
        .iter()
        .enumerate()
        .map(|(i, w)| make_clock(w.jump_rate, seeds.stream(path, walk_channel(i))))
        .collect();
    let pairs = pair_rates(spec);
    let mut pair_clocks: Vec<EventClock> = pairs
        .iter()
        .map(|p| make_clock(1.0, seeds.stream(path, pair_channel(d, p.i, p.j))))
        .collect();
    let frozen = opts.frozen.as_ref().filter(|_| !pairs.is_empty());
    if let Some(f) = frozen {
        if !(f.window > 0.0) || f.quantum.len() != d || f.quantum.iter().any(|&q| !(q > 0.0)) {
            return Err(Error::InvalidArgument(
                "frozen window and quanta must be positive, one quantum per type".into(),
            ));
        }
    }

    let mut state = z.to_vec();
    let mut factor: Vec<f64> = vec![0.0; d];
    let refresh = |state: &[i64], factor: &mut [f64]| {
        if let Some(f) = frozen {
            for j in 0..d {
                factor[j] = floor_quantize(state[j] as f64, f.quantum[j]);
            }
        }
    };
    refresh(&state, &mut factor);
    let mut window_index: u64 = 1;
    let mut next_boundary = frozen.map_or(f64::INFINITY, |f| f.window);

    let mut walk_speed = vec![0.0; d];
    let mut pair_speed = vec![0.0; pairs.len()];
    let mut stats = RunStats::default();
    let mut t = 0.0;
    recorder.record(t, &state);
    loop {
        if state.iter().all(|&x| x == 0) {
            stats.absorbed_at = Some(t);
            break;
        }
        let mut best = f64::INFINITY;
        let mut who: Option<usize> = None;
        let mut total_rate = 0.0;
        for i in 0..d {
            let s = state[i] as f64;
            walk_speed[i] = s;
            if s > 0.0 {
                total_rate += walk_clocks[i].rate() * s;
                let dt = walk_clocks[i].remaining().max(0.0) / s;
                if dt < best {
                    best = dt;
                    who = Some(i);
                }
            }
        }
        for (k, p) in pairs.iter().enumerate() {
            // A frozen kill clock stops while its target is empty.
            let target = if frozen.is_some() {
                if p.sign < 0 && state[p.j] == 0 {
                    0.0
                } else {
                    factor[p.j]
                }
            } else {
                state[p.j] as f64
            };
            let s = p.rate * state[p.i] as f64 * target;
            pair_speed[k] = s;
            if s > 0.0 {
                total_rate += s;
                let dt = pair_clocks[k].remaining().max(0.0) / s;
                if dt < best {
                    best = dt;
                    who = Some(d + k);
                }
            }
        }
        if total_rate > opts.engine.rate_cap {
            return Err(Error::RateOverflow {
                time: t,
                rate: total_rate,
                cap: opts.engine.rate_cap,
            });
        }
        let t_event = t + best;
        if next_boundary < horizon && next_boundary <= t_event {
            let dt = next_boundary - t;
            advance_all(&mut walk_clocks, &walk_speed, &mut pair_clocks, &pair_speed, dt, None);
            t = next_boundary;
            refresh(&state, &mut factor);
            window_index += 1;
            next_boundary = window_index as f64 * frozen.map_or(f64::INFINITY, |f| f.window);
            continue;
        }
        let Some(who) = who else { break };
        if t_event >= horizon {
            break;
        }
        advance_all(&mut walk_clocks, &walk_speed, &mut pair_clocks, &pair_speed, best, Some(who));
        t = t_event;
        if who < d {
            let clock = &mut walk_clocks[who];
            clock.fire();
            let u: f64 = clock.rng().random();
            for (s, x) in state.iter_mut().zip(walks[who].jump_at(u)) {
                *s += x;
            }
        } else {
            let k = who - d;
            pair_clocks[k].fire();
            state[pairs[k].j] += pairs[k].sign;
        }
        debug_assert!(state.iter().all(|&x| x >= 0), "negative state {state:?}");
        stats.events += 1;
        recorder.mark_jump();
        recorder.record(t, &state);
    }
    recorder.finish(horizon, &state);
    Ok(stats)
}

fn advance_all(
    walks: &mut [EventClock],
    walk_speed: &[f64],
    pairs: &mut [EventClock],
    pair_speed: &[f64],
    dt: f64,
    firing: Option<usize>,
) {
    let d = walks.len();
    for (k, (c, &s)) in walks.iter_mut().zip(walk_speed).enumerate() {
        if s > 0.0 && firing != Some(k) {
            c.advance(s * dt);
        }
    }
    for (k, (c, &s)) in pairs.iter_mut().zip(pair_speed).enumerate() {
        if s > 0.0 && firing != Some(d + k) {
            c.advance(s * dt);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Gillespie,
    TimeChange,
}

/// One sampler in a two-sample comparison.
#[derive(Debug, Clone, Copy)]
pub struct EngineRun<'a> {
    pub spec: &'a DiscreteModelSpec,
    pub engine: EngineKind,
    pub seeds: SeedTree,
}

/// Samples `Z_t` for paths `0..n_paths`.
pub fn marginal_samples(
    run: EngineRun<'_>,
    z: &[i64],
    t: f64,
    n_paths: usize,
    ensemble: &Ensemble,
) -> Result<Vec<Vec<i64>>> {
    samples_at(run, z, &[t], n_paths, ensemble).map(|v| v.into_iter().map(|mut s| s.remove(0)).collect())
}

/// Samples the states at each checkpoint for paths `0..n_paths`.
pub fn samples_at(
    run: EngineRun<'_>,
    z: &[i64],
    checkpoints: &[f64],
    n_paths: usize,
    ensemble: &Ensemble,
) -> Result<Vec<Vec<Vec<i64>>>> {
    let horizon = checkpoints.iter().cloned().fold(0.0, f64::max);
    let walks = RandomWalkSpec::all_from_model(run.spec);
    let opts = TimeChangeOptions::default();
    ensemble.map(n_paths, |p| {
        let mut rec = Checkpoints::new(checkpoints);
        match run.engine {
            EngineKind::Gillespie => {
                let mut rng = run.seeds.stream(p, channel::GILLESPIE);
                simulate_gillespie(run.spec, z, horizon, &mut rng, &opts.engine, &mut rec, None)?;
            }
            EngineKind::TimeChange => {
                simulate_time_change(run.spec, z, horizon, &walks, run.seeds, p, &opts, &mut rec)?;
            }
        }
        Ok(rec.into_values())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub n_paths: usize,
    pub time: f64,
    /// Per-coordinate KS tests on the marginals at `time`.
    pub ks: Vec<KsResult>,
    /// Chi-square homogeneity on the joint occupancy of `{0..=cap}^d`.
    pub chi_square: ChiSquareResult,
    pub lattice_cap: i64,
    /// Total variation between the two joint empirical laws.
    pub joint_tv: f64,
}

impl EquivalenceReport {
    pub fn from_samples(a: &[Vec<i64>], b: &[Vec<i64>], time: f64, lattice_cap: i64) -> Self {
        let d = a.first().map_or(0, Vec::len);
        let ks = (0..d)
            .map(|j| {
                let xa: Vec<f64> = a.iter().map(|s| s[j] as f64).collect();
                let xb: Vec<f64> = b.iter().map(|s| s[j] as f64).collect();
                ks_two_sample(&xa, &xb)
            })
            .collect();
        let joint_tv = tv_distance(
            &empirical_distribution(a.iter().map(Vec::as_slice)),
            &empirical_distribution(b.iter().map(Vec::as_slice)),
        );
        EquivalenceReport {
            n_paths: a.len(),
            time,
            ks,
            chi_square: chi_square_homogeneity(a, b, lattice_cap),
            lattice_cap,
            joint_tv,
        }
    }

    pub fn min_ks_p(&self) -> f64 {
        self.ks.iter().map(|k| k.p_value).fold(1.0, f64::min)
    }
}

/// Two-sample comparison of `Z_t` under two samplers.
pub fn compare_engines(
    a: EngineRun<'_>,
    b: EngineRun<'_>,
    z: &[i64],
    t: f64,
    n_paths: usize,
    lattice_cap: i64,
    ensemble: &Ensemble,
) -> Result<EquivalenceReport> {
    let xa = marginal_samples(a, z, t, n_paths, ensemble)?;
    let xb = marginal_samples(b, z, t, n_paths, ensemble)?;
    Ok(EquivalenceReport::from_samples(&xa, &xb, t, lattice_cap))
}

/// Runs the direct and the time-change engine on independent seeds and tests
/// whether their laws at time `t` agree.
pub fn law_equivalence_check(
    spec: &DiscreteModelSpec,
    z: &[i64],
    t: f64,
    n_paths: usize,
    seeds: SeedTree,
    ensemble: &Ensemble,
) -> Result<EquivalenceReport> {
    compare_engines(
        EngineRun {
            spec,
            engine: EngineKind::Gillespie,
            seeds: seeds.subtree(0),
        },
        EngineRun {
            spec,
            engine: EngineKind::TimeChange,
            seeds: seeds.subtree(1),
        },
        z,
        t,
        n_paths,
        20,
        ensemble,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::OffspringPmf;
    use crate::stats::MeanEstimate;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pure_death() -> DiscreteModelSpec {
        DiscreteModelSpec {
            lambda: vec![1.0],
            offspring: vec![OffspringPmf::point(vec![0])],
            interaction: Matrix::zeros(1),
        }
    }

    fn absorption_times(engine: EngineKind, n: usize, seed: u64) -> Vec<f64> {
        let spec = pure_death();
        let walks = RandomWalkSpec::all_from_model(&spec);
        let seeds = SeedTree::new(seed);
        Ensemble::sequential()
            .map(n, |p| {
                let stats = match engine {
                    EngineKind::Gillespie => {
                        let mut rng = seeds.stream(p, channel::GILLESPIE);
                        let opts = EngineOptions::default();
                        simulate_gillespie(&spec, &[1], 1e9, &mut rng, &opts, &mut crate::path::Discard, None)?
                    }
                    EngineKind::TimeChange => simulate_time_change(
                        &spec,
                        &[1],
                        1e9,
                        &walks,
                        seeds,
                        p,
                        &TimeChangeOptions::default(),
                        &mut crate::path::Discard,
                    )?,
                };
                Ok(stats.absorbed_at.expect("pure death is absorbed"))
            })
            .unwrap()
    }

    #[test]
    fn zero_start_is_constant_with_empty_log() {
        let spec = pure_death();
        let (path, log) =
            gillespie_path(&spec, &[0], 5.0, SeedTree::new(1), 0, &EngineOptions::default()).unwrap();
        assert_eq!(path.breakpoints, vec![(0.0, vec![0])]);
        assert!(log.events.is_empty());
        let mut p = Path::default();
        let walks = RandomWalkSpec::all_from_model(&spec);
        simulate_time_change(&spec, &[0], 5.0, &walks, SeedTree::new(1), 0, &Default::default(), &mut p)
            .unwrap();
        assert_eq!(p.breakpoints, vec![(0.0, vec![0])]);
    }

    #[test]
    fn pure_death_absorption_mean() {
        let times = absorption_times(EngineKind::Gillespie, 100_000, 3);
        let m = MeanEstimate::from_samples(times);
        assert!((m.mean - 1.0).abs() < 0.01, "{m:?}");
    }

    #[test]
    fn pure_death_absorption_law_matches_across_engines() {
        let a = absorption_times(EngineKind::Gillespie, 100_000, 5);
        let b = absorption_times(EngineKind::TimeChange, 100_000, 6);
        let ks = ks_two_sample(&a, &b);
        assert!(ks.p_value > 0.001, "{ks:?}");
    }

    #[test]
    fn fission_second_moment() {
        // Type 2 is a pure-death chain independent of type 1: E[Z²_1] = e^{-1}.
        let spec = DiscreteModelSpec {
            lambda: vec![1.0, 1.0],
            offspring: vec![OffspringPmf::point(vec![2, 0]), OffspringPmf::point(vec![0, 0])],
            interaction: Matrix::zeros(2),
        };
        let seeds = SeedTree::new(11);
        let run = EngineRun {
            spec: &spec,
            engine: EngineKind::Gillespie,
            seeds,
        };
        let xs = marginal_samples(run, &[1, 1], 1.0, 100_000, &Ensemble::default()).unwrap();
        let m = MeanEstimate::from_samples(xs.iter().map(|s| s[1] as f64));
        assert!(m.covers((-1.0f64).exp(), 3.0), "{m:?}");
    }

    #[test]
    fn lattice_drivers_give_harmonic_jump_times() {
        let spec = DiscreteModelSpec {
            lambda: vec![1.0],
            offspring: vec![OffspringPmf::point(vec![2])],
            interaction: Matrix::zeros(1),
        };
        let walks = RandomWalkSpec::all_from_model(&spec);
        let opts = TimeChangeOptions {
            timing: DriverTiming::Lattice { spacing: 1.0 },
            ..Default::default()
        };
        let mut p = Path::default();
        simulate_time_change(&spec, &[1], 2.0, &walks, SeedTree::new(0), 0, &opts, &mut p).unwrap();
        let times: Vec<f64> = p.jump_times().collect();
        assert_eq!(times.len(), 3);
        assert_relative_eq!(times[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(times[1], 1.5, epsilon = 1e-12);
        assert_relative_eq!(times[2], 1.0 + 0.5 + 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(p.final_state(), &[4]);
    }

    #[test]
    fn event_log_replays_path() {
        let spec = DiscreteModelSpec {
            lambda: vec![1.0, 0.5],
            offspring: vec![
                OffspringPmf::new([(vec![2, 0], 0.5), (vec![1, 1], 0.2), (vec![0, 0], 0.3)]),
                OffspringPmf::new([(vec![0, 0], 0.6), (vec![0, 2], 0.4)]),
            ],
            interaction: Matrix::from_rows(&[&[0.0, -0.5], &[0.2, 0.0]]),
        };
        let (path, log) =
            gillespie_path(&spec, &[3, 2], 3.0, SeedTree::new(4), 9, &EngineOptions::default()).unwrap();
        assert!(!log.events.is_empty());
        assert_eq!(log.replay(&[3, 2], 3.0), path);
        for e in &log.events {
            assert!(e.pre_state.iter().all(|&x| x >= 0));
        }
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let first: Event = serde_json::from_str(std::str::from_utf8(&buf).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(first, log.events[0]);
    }

    #[test]
    fn cooperative_explosion_hits_rate_cap() {
        let spec = DiscreteModelSpec {
            lambda: vec![1.0],
            offspring: vec![OffspringPmf::point(vec![2])],
            interaction: Matrix::from_rows(&[&[1.0]]),
        };
        let opts = EngineOptions { rate_cap: 1e4 };
        let err = gillespie_path(&spec, &[5], 10.0, SeedTree::new(1), 0, &opts).unwrap_err();
        assert!(matches!(err, Error::RateOverflow { .. }));
        let walks = RandomWalkSpec::all_from_model(&spec);
        let tc = TimeChangeOptions {
            engine: opts,
            ..Default::default()
        };
        let err = simulate_time_change(&spec, &[5], 10.0, &walks, SeedTree::new(1), 0, &tc, &mut Path::default())
            .unwrap_err();
        assert!(err.is_numerical_guard());
    }

    #[test]
    fn frozen_mode_without_interactions_is_bitwise_identical() {
        let spec = DiscreteModelSpec {
            lambda: vec![1.0],
            offspring: vec![OffspringPmf::new([(vec![0], 0.5), (vec![2], 0.5)])],
            interaction: Matrix::zeros(1),
        };
        let walks = RandomWalkSpec::all_from_model(&spec);
        let frozen = TimeChangeOptions {
            frozen: Some(FrozenInteraction {
                window: 0.1,
                quantum: vec![3.0],
            }),
            ..Default::default()
        };
        for p in 0..20 {
            let mut a = Path::default();
            let mut b = Path::default();
            simulate_time_change(&spec, &[10], 2.0, &walks, SeedTree::new(2), p, &Default::default(), &mut a).unwrap();
            simulate_time_change(&spec, &[10], 2.0, &walks, SeedTree::new(2), p, &frozen, &mut b).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn same_stream_twice_gives_zero_ks() {
        let spec = pure_death();
        let run = EngineRun {
            spec: &spec,
            engine: EngineKind::Gillespie,
            seeds: SeedTree::new(8),
        };
        let r = compare_engines(run, run, &[4], 1.0, 2000, 20, &Ensemble::default()).unwrap();
        assert_eq!(r.ks[0].statistic, 0.0);
        assert_eq!(r.joint_tv, 0.0);
    }

    #[test]
    fn perturbed_rate_is_rejected() {
        let spec = pure_death();
        let fast = DiscreteModelSpec {
            lambda: vec![1.5],
            ..pure_death()
        };
        let a = EngineRun {
            spec: &spec,
            engine: EngineKind::Gillespie,
            seeds: SeedTree::new(1),
        };
        let b = EngineRun {
            spec: &fast,
            engine: EngineKind::TimeChange,
            seeds: SeedTree::new(2),
        };
        let r = compare_engines(a, b, &[5], 1.0, 100_000, 20, &Ensemble::default()).unwrap();
        assert!(r.ks[0].p_value < 0.01);
        assert!(r.chi_square.p_value < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn paths_stay_nonnegative_and_absorb(seed in 0u64..1000, z1 in 0i64..6, z2 in 0i64..6) {
            let spec = DiscreteModelSpec {
                lambda: vec![1.0, 2.0],
                offspring: vec![
                    OffspringPmf::new([(vec![0, 0], 0.5), (vec![1, 1], 0.5)]),
                    OffspringPmf::new([(vec![0, 0], 0.7), (vec![0, 2], 0.3)]),
                ],
                interaction: Matrix::from_rows(&[&[-0.3, -1.0], &[0.5, -0.2]]),
            };
            let walks = RandomWalkSpec::all_from_model(&spec);
            let (g, _) = gillespie_path(&spec, &[z1, z2], 4.0, SeedTree::new(seed), 0, &EngineOptions::default()).unwrap();
            let mut tc = Path::default();
            simulate_time_change(&spec, &[z1, z2], 4.0, &walks, SeedTree::new(seed), 0, &Default::default(), &mut tc).unwrap();
            for path in [&g, &tc] {
                let mut hit_zero = false;
                for (_, s) in &path.breakpoints {
                    prop_assert!(s.iter().all(|&x| x >= 0));
                    prop_assert!(!hit_zero, "left the zero vector");
                    hit_zero = s.iter().all(|&x| x == 0);
                }
                prop_assert!(path.breakpoints.windows(2).all(|w| w[0].0 < w[1].0));
            }
        }
    }
}
