//! Trajectory containers and the recorder interface the engines write into.

use serde::{Deserialize, Serialize};

/// Slack used when matching recorded times against requested checkpoints.
pub const TIME_EPS: f64 = 1e-9;

/// Receives a trajectory as it is produced.
///
/// Engines call `record(0, z)` once, then `record(t, state)` after every
/// change (or grid step), then `finish(horizon, state)`.
pub trait Recorder<T> {
    fn record(&mut self, t: f64, state: &[T]);

    /// Flags the next recorded point as carrying a jump.
    fn mark_jump(&mut self) {}

    fn finish(&mut self, _horizon: f64, _state: &[T]) {}
}

impl<T, A: Recorder<T>, B: Recorder<T>> Recorder<T> for (A, B) {
    fn record(&mut self, t: f64, state: &[T]) {
        self.0.record(t, state);
        self.1.record(t, state);
    }

    fn mark_jump(&mut self) {
        self.0.mark_jump();
        self.1.mark_jump();
    }

    fn finish(&mut self, horizon: f64, state: &[T]) {
        self.0.finish(horizon, state);
        self.1.finish(horizon, state);
    }
}

impl<T, R: Recorder<T> + ?Sized> Recorder<T> for &mut R {
    fn record(&mut self, t: f64, state: &[T]) {
        (**self).record(t, state);
    }

    fn mark_jump(&mut self) {
        (**self).mark_jump();
    }

    fn finish(&mut self, horizon: f64, state: &[T]) {
        (**self).finish(horizon, state);
    }
}

/// Ignores everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct Discard;

impl<T> Recorder<T> for Discard {
    fn record(&mut self, _t: f64, _state: &[T]) {}
}

/// Piecewise-constant integer trajectory, stored as its breakpoints.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Path {
    pub breakpoints: Vec<(f64, Vec<i64>)>,
    pub horizon: f64,
}

impl Path {
    pub fn dim(&self) -> usize {
        self.breakpoints.first().map_or(0, |(_, s)| s.len())
    }

    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> &[i64] {
        let k = self.breakpoints.partition_point(|(s, _)| *s <= t);
        &self.breakpoints[k.saturating_sub(1)].1
    }

    pub fn final_state(&self) -> &[i64] {
        &self.breakpoints.last().expect("path is never empty").1
    }

    pub fn jump_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.breakpoints.iter().skip(1).map(|(t, _)| *t)
    }
}

impl Recorder<i64> for Path {
    fn record(&mut self, t: f64, state: &[i64]) {
        self.breakpoints.push((t, state.to_vec()));
    }

    fn finish(&mut self, horizon: f64, _state: &[i64]) {
        self.horizon = horizon;
    }
}

/// Real-valued trajectory on a time grid, with jump-carrying steps flagged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContinuousPath {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major, `times.len() * dim` entries.
    pub states: Vec<f64>,
    pub jumped: Vec<bool>,
    #[serde(skip)]
    pending_jump: bool,
}

impl ContinuousPath {
    pub fn new(dim: usize) -> Self {
        ContinuousPath {
            dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// State at `t`, taken from the last recorded point not after `t`.
    pub fn state_at(&self, t: f64) -> &[f64] {
        let k = self.times.partition_point(|&s| s <= t + TIME_EPS);
        self.state(k.saturating_sub(1))
    }
}

impl Recorder<f64> for ContinuousPath {
    fn record(&mut self, t: f64, state: &[f64]) {
        if self.dim == 0 {
            self.dim = state.len();
        }
        self.times.push(t);
        self.states.extend_from_slice(state);
        self.jumped.push(std::mem::take(&mut self.pending_jump));
    }

    fn mark_jump(&mut self) {
        self.pending_jump = true;
    }
}

/// Keeps only the states at a sorted list of checkpoint times.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoints<T> {
    times: Vec<f64>,
    values: Vec<Vec<T>>,
    current: Vec<T>,
    /// Lower bound on record times that fill the next checkpoint.
    threshold: f64,
}

impl<T: Clone> Checkpoints<T> {
    pub fn new(times: &[f64]) -> Self {
        debug_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        Checkpoints {
            times: times.to_vec(),
            values: Vec::with_capacity(times.len()),
            current: Vec::new(),
            threshold: times.first().map_or(f64::INFINITY, |&c| c),
        }
    }

    #[inline]
    fn fill_before(&mut self, t: f64) {
        if t > self.threshold {
            self.fill_slow(t);
        }
    }

    #[cold]
    fn fill_slow(&mut self, t: f64) {
        while self.values.len() < self.times.len() && self.times[self.values.len()] < t - TIME_EPS
        {
            self.values.push(self.current.clone());
        }
        self.threshold = self
            .times
            .get(self.values.len())
            .map_or(f64::INFINITY, |&c| c);
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// States at each checkpoint; complete once the recorder is finished.
    pub fn values(&self) -> &[Vec<T>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Vec<T>> {
        self.values
    }
}

impl<T: Clone> Recorder<T> for Checkpoints<T> {
    #[inline]
    fn record(&mut self, t: f64, state: &[T]) {
        self.fill_before(t);
        if self.current.len() == state.len() {
            for (c, x) in self.current.iter_mut().zip(state) {
                c.clone_from(x);
            }
        } else {
            self.current.clear();
            self.current.extend_from_slice(state);
        }
    }

    fn finish(&mut self, horizon: f64, _state: &[T]) {
        self.fill_before(horizon + 2.0 * TIME_EPS);
    }
}

/// Rescales an integer trajectory as `(t / time_scale, state_i * mass_scale_i)`.
#[derive(Debug, Clone)]
pub struct Rescaled<R> {
    pub inner: R,
    time_scale: f64,
    mass_scale: Vec<f64>,
    buf: Vec<f64>,
}

impl<R> Rescaled<R> {
    pub fn new(inner: R, time_scale: f64, mass_scale: Vec<f64>) -> Self {
        let buf = vec![0.0; mass_scale.len()];
        Rescaled {
            inner,
            time_scale,
            mass_scale,
            buf,
        }
    }

    fn convert(&mut self, state: &[i64]) {
        for ((b, &x), s) in self.buf.iter_mut().zip(state).zip(&self.mass_scale) {
            *b = x as f64 * s;
        }
    }
}

impl<R: Recorder<f64>> Recorder<i64> for Rescaled<R> {
    fn record(&mut self, t: f64, state: &[i64]) {
        self.convert(state);
        self.inner.record(t / self.time_scale, &self.buf);
    }

    fn mark_jump(&mut self) {
        self.inner.mark_jump();
    }

    fn finish(&mut self, horizon: f64, state: &[i64]) {
        self.convert(state);
        self.inner.finish(horizon / self.time_scale, &self.buf);
    }
}
