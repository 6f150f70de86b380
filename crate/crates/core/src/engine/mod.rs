//! Exact event-driven simulation on a frozen-zero window.
//!
//! Two samplers realize the same law: [`Gillespie`] (direct method on a sum
//! tree, the default) and [`Thinning`] (per-site Poisson marks, the literal
//! pathwise construction, used wherever two processes must share noise).

mod gillespie;
mod thinning;
mod trajectory;
pub mod tree;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gillespie::Gillespie;
pub use thinning::{Thinning, MAX_THINNING_HORIZON};
pub use trajectory::{replay, EventRecord, Trajectory};

use crate::error::EngineError;
use crate::lattice::{Configuration, Layout, Site, State, Window};
use crate::rates::{layout_for, RateModel};
use crate::rng::Channel;
use crate::stats::{tv_distance, Empirical};

/// Default event budget of one trajectory.
pub const DEFAULT_MAX_EVENTS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    Gillespie,
    Thinning,
}

impl Algorithm {
    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::Gillespie => "gillespie",
            Algorithm::Thinning => "thinning",
        }
    }
}

/// A jump at grid index `idx` of the simulator's layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub idx: usize,
    pub delta: i8,
}

/// A running trajectory.
pub trait Simulator {
    fn time(&self) -> f64;

    fn state(&self) -> &State;

    /// Events fired so far.
    fn events(&self) -> u64;

    /// Fires the next event if it happens no later than `horizon`; otherwise
    /// moves the clock to `horizon` and returns `None`.
    fn next_event(&mut self, horizon: f64) -> Result<Option<Event>, EngineError>;

    /// Runs to `horizon`, stopping early once the state is empty if
    /// `stop_when_empty` is set.
    fn advance_to(&mut self, horizon: f64, stop_when_empty: bool) -> Result<(), EngineError> {
        while self.next_event(horizon)?.is_some() {
            if stop_when_empty && self.state().is_empty() {
                break;
            }
        }
        Ok(())
    }
}

impl<S: Simulator + ?Sized> Simulator for Box<S> {
    fn time(&self) -> f64 {
        (**self).time()
    }
    fn state(&self) -> &State {
        (**self).state()
    }
    fn events(&self) -> u64 {
        (**self).events()
    }
    fn next_event(&mut self, horizon: f64) -> Result<Option<Event>, EngineError> {
        (**self).next_event(horizon)
    }
}

/// True when both rates are `+0.0` or positive finite. Sign, NaN and
/// infinity all put the bit pattern at or above that of `+inf`; `-0.0`
/// lands here too and is left to `checked_rate`.
#[inline(always)]
pub(crate) fn rates_plainly_ok(b: f64, d: f64) -> bool {
    b.to_bits().max(d.to_bits()) < f64::INFINITY.to_bits()
}

#[inline(always)]
pub(crate) fn checked_rate(
    layout: &Layout,
    state: &State,
    x: usize,
    channel: Channel,
    value: f64,
) -> Result<f64, EngineError> {
    // `value >= 0.0` is false for NaN
    if value >= 0.0 && value < f64::INFINITY && (channel == Channel::Birth || value == 0.0 || state.at(x) > 0) {
        Ok(value)
    } else {
        Err(invalid_rate(layout, x, channel, value))
    }
}

#[cold]
#[inline(never)]
fn invalid_rate(layout: &Layout, x: usize, channel: Channel, value: f64) -> EngineError {
    EngineError::InvalidRate {
        site: layout.site_of(x),
        channel,
        value,
    }
}

/// Grid shifts of the model's affected offsets (always including 0).
pub(crate) fn affected_deltas(
    model: &dyn RateModel,
    layout: &Layout,
) -> Result<Vec<isize>, EngineError> {
    let dim = layout.dim();
    let radius = model.interaction_radius();
    if layout.margin() < radius {
        return Err(EngineError::Argument(format!(
            "layout margin {} below interaction radius {radius}",
            layout.margin()
        )));
    }
    let mut offsets = model.affected_offsets(dim);
    offsets.push(Site::origin(dim));
    let mut out = Vec::with_capacity(offsets.len());
    for z in offsets {
        if z.dim() != dim || z.norm1() > layout.margin() as u64 {
            return Err(EngineError::Argument(format!(
                "affected offset {z} exceeds the layout margin"
            )));
        }
        out.push(layout.delta(&z));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Per-trajectory settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub horizon: f64,
    pub seed: u64,
    pub replicate: u64,
    pub algorithm: Algorithm,
    pub max_events: u64,
}

impl RunOptions {
    pub fn new(horizon: f64, seed: u64) -> Self {
        RunOptions {
            horizon,
            seed,
            replicate: 0,
            algorithm: Algorithm::Gillespie,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    pub fn replicate(self, replicate: u64) -> Self {
        RunOptions { replicate, ..self }
    }

    pub fn algorithm(self, algorithm: Algorithm) -> Self {
        RunOptions { algorithm, ..self }
    }

    pub fn max_events(self, max_events: u64) -> Self {
        RunOptions { max_events, ..self }
    }

    fn check(&self) -> Result<(), EngineError> {
        if self.horizon.is_nan() || self.horizon < 0.0 {
            return Err(EngineError::Argument(format!(
                "horizon must be >= 0, got {}",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Dense state for `config` placed on `window`, with a layout wide enough
/// for `model`.
pub fn initial_state(
    model: &dyn RateModel,
    window: &Window,
    config: &Configuration,
) -> Result<State, EngineError> {
    let layout = layout_for(window, &[model])?;
    Ok(State::from_configuration(layout, config)?)
}

/// Sampler selected by `opts.algorithm`.
pub fn simulator<'a, M: RateModel + 'a>(
    model: M,
    state: State,
    opts: &RunOptions,
) -> Result<Box<dyn Simulator + 'a>, EngineError> {
    opts.check()?;
    Ok(match opts.algorithm {
        Algorithm::Gillespie => Box::new(Gillespie::new(
            model,
            state,
            opts.seed,
            opts.replicate,
            opts.max_events,
        )?),
        Algorithm::Thinning => Box::new(Thinning::new(
            model,
            state,
            opts.seed,
            opts.replicate,
            opts.max_events,
        )?),
    })
}

/// Simulates `model` on `window` from `eta0` over `[0, horizon]` and keeps
/// the full event log.
pub fn run<M: RateModel>(
    model: &M,
    window: &Window,
    eta0: &Configuration,
    opts: &RunOptions,
) -> Result<Trajectory, EngineError> {
    let state = initial_state(model, window, eta0)?;
    let layout = state.layout().clone();
    let initial = state.to_configuration();
    let mut sim = simulator(model, state, opts)?;
    let mut events = Vec::new();
    while let Some(e) = sim.next_event(opts.horizon)? {
        events.push(EventRecord {
            time: e.time,
            site: layout.site_of(e.idx),
            delta: e.delta,
        });
    }
    Ok(Trajectory {
        model: model.name(),
        algorithm: opts.algorithm,
        seed: opts.seed,
        replicate: opts.replicate,
        horizon: opts.horizon,
        initial,
        events,
        final_config: sim.state().to_configuration(),
    })
}

/// State at `opts.horizon`, without keeping the log.
pub fn final_state<M: RateModel>(
    model: &M,
    state: State,
    opts: &RunOptions,
) -> Result<State, EngineError> {
    let mut sim = simulator(model, state, opts)?;
    sim.advance_to(opts.horizon, false)?;
    Ok(sim.state().clone())
}

/// `f(0), ..., f(n - 1)` evaluated on the current rayon pool, in index
/// order.
pub fn replicates<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Like [`replicates`], returning the lowest-index error if any.
pub fn try_replicates<T, E, F>(n: u64, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    replicates(n, f).into_iter().collect()
}

/// Runs `f` on a dedicated pool of `workers` threads (`0` keeps the
/// current pool).
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Law of `eta_T(origin)` on one window radius.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub radius: u32,
    pub law: Vec<f64>,
    /// Total variation distance to the previous (smaller) radius.
    pub tv_to_previous: Option<f64>,
}

/// Marginal law of the origin occupancy at `horizon` on balls of increasing
/// radius.
///
/// All radii use the thinning sampler, whose marks are keyed by absolute
/// site coordinates: replicate `r` sees the same noise on every window, so
/// runs whose light cone stays inside the smallest window coincide exactly.
pub fn window_convergence<M: RateModel>(
    model: &M,
    eta0: &[(Site, u32)],
    horizon: f64,
    radii: &[u32],
    seed: u64,
    n_replicates: u64,
    max_events: u64,
) -> Result<Vec<WindowRow>, EngineError> {
    if radii.windows(2).any(|p| p[0] >= p[1]) {
        return Err(EngineError::Argument("radii must be increasing".into()));
    }
    let dim = eta0
        .first()
        .map(|(s, _)| s.dim())
        .unwrap_or(1);
    let mut rows: Vec<WindowRow> = Vec::with_capacity(radii.len());
    for &r in radii {
        let window = Arc::new(Window::ball(dim, r)?);
        let config = Configuration::from_counts(window.clone(), eta0.iter().copied())?;
        let state = initial_state(model, &window, &config)?;
        let origin = state
            .layout()
            .index_of(&Site::origin(dim))
            .expect("origin lies in every ball");
        let opts = RunOptions::new(horizon, seed)
            .algorithm(Algorithm::Thinning)
            .max_events(max_events);
        let samples = try_replicates(n_replicates, |rep| {
            final_state(model, state.clone(), &opts.replicate(rep)).map(|s| s.at(origin) as usize)
        })?;
        let law = Empirical::from_samples(1, samples).probabilities();
        let tv_to_previous = rows.last().map(|prev| tv_distance(&prev.law, &law));
        rows.push(WindowRow {
            radius: r,
            law,
            tv_to_previous,
        });
    }
    Ok(rows)
}
