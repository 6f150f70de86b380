//! Monotone coupling of two birth-and-death processes on shared noise.
//!
//! [`CoupledGillespie`] runs a pair `(lower, upper)` with joint jump rates:
//! at each site both processes give birth together at rate
//! `min(b1, b2)`, only the lower one at `(b1 - b2)+`, only the upper one at
//! `(b2 - b1)+`, and deaths likewise. [`couple_thinning`] runs the two
//! processes on the same Poisson marks, which realizes the same joint law
//! and is the reference implementation.

use std::sync::Arc;

use serde::Serialize;

use crate::engine::tree::SumTree;
use crate::engine::{
    try_replicates, Algorithm, EventRecord, Simulator, Thinning, Trajectory,
};
use crate::error::EngineError;
use crate::lattice::{Configuration, Layout, Site, State, Window};
use crate::rates::{layout_for, RateModel};
use crate::rng::{Channel, NoiseStream, StreamKey, StreamRng};
use crate::stats::MeanSe;

/// `(b~(x, xi, eta), d~(x, xi, eta))` where `b(., xi)` is read from `m1`
/// and `b(., eta)` from `m2`.
///
/// `b~` is the rate of the process holding more particles at `x`, or the
/// larger of the two on a tie; `d~` is the same with the smaller death rate
/// on a tie.
pub fn tilde_rates(
    x: usize,
    xi: &State,
    eta: &State,
    m1: &dyn RateModel,
    m2: &dyn RateModel,
) -> (f64, f64) {
    let (b1, d1) = (m1.birth(x, xi), m1.death(x, xi));
    let (b2, d2) = (m2.birth(x, eta), m2.death(x, eta));
    match xi.at(x).cmp(&eta.at(x)) {
        std::cmp::Ordering::Greater => (b1, d1),
        std::cmp::Ordering::Less => (b2, d2),
        std::cmp::Ordering::Equal => (b1.max(b2), d1.min(d2)),
    }
}

/// A joint jump at grid index `idx`: each side moves by `-1`, `0` or `+1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEvent {
    pub time: f64,
    pub idx: usize,
    pub lower: i8,
    pub upper: i8,
}

/// Joint channels per site, in leaf order: both, lower only, upper only
/// births, then the same for deaths.
const MOVES: [(i8, i8); 6] = [(1, 1), (1, 0), (0, 1), (-1, -1), (-1, 0), (0, -1)];

/// Gillespie sampler of the coupled pair.
pub struct CoupledGillespie<M1, M2> {
    m1: M1,
    m2: M2,
    lower: State,
    upper: State,
    layout: Arc<Layout>,
    time: f64,
    rates: Vec<[f64; 6]>,
    tree: SumTree,
    clock: StreamRng,
    affected: Vec<isize>,
    events: u64,
    max_events: u64,
}

fn check(layout: &Layout, st: &State, x: usize, ch: Channel, v: f64) -> Result<f64, EngineError> {
    let empty_death = ch == Channel::Death && st.at(x) == 0 && v != 0.0;
    if v.is_finite() && v >= 0.0 && !empty_death {
        Ok(v)
    } else {
        Err(EngineError::InvalidRate {
            site: layout.site_of(x),
            channel: ch,
            value: v,
        })
    }
}

fn pair_deltas(m1: &dyn RateModel, m2: &dyn RateModel, layout: &Layout) -> Result<Vec<isize>, EngineError> {
    let dim = layout.dim();
    let mut offsets = m1.affected_offsets(dim);
    offsets.extend(m2.affected_offsets(dim));
    offsets.push(Site::origin(dim));
    let mut out = Vec::with_capacity(offsets.len());
    for z in offsets {
        if z.norm1() > layout.margin() as u64 {
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

impl<M1: RateModel, M2: RateModel> CoupledGillespie<M1, M2> {
    /// `lower` and `upper` must share one layout.
    pub fn new(
        m1: M1,
        m2: M2,
        lower: State,
        upper: State,
        seed: u64,
        replicate: u64,
        max_events: u64,
    ) -> Result<Self, EngineError> {
        if !Arc::ptr_eq(lower.layout(), upper.layout()) {
            return Err(EngineError::Argument("coupled states need one layout".into()));
        }
        let layout = lower.layout().clone();
        let affected = pair_deltas(&m1, &m2, &layout)?;
        let n = layout.active().len();
        let clock = NoiseStream::new(seed, StreamKey::clock(layout.dim(), replicate)).rng();
        let mut g = CoupledGillespie {
            m1,
            m2,
            lower,
            upper,
            layout,
            time: 0.0,
            rates: vec![[0.0; 6]; n],
            tree: SumTree::new(n),
            clock,
            affected,
            events: 0,
            max_events,
        };
        for ord in 0..n {
            g.refresh(ord)?;
        }
        Ok(g)
    }

    fn refresh(&mut self, ord: usize) -> Result<(), EngineError> {
        let x = self.layout.active()[ord];
        let l = &self.layout;
        let b1 = check(l, &self.lower, x, Channel::Birth, self.m1.birth(x, &self.lower))?;
        let b2 = check(l, &self.upper, x, Channel::Birth, self.m2.birth(x, &self.upper))?;
        let d1 = check(l, &self.lower, x, Channel::Death, self.m1.death(x, &self.lower))?;
        let d2 = check(l, &self.upper, x, Channel::Death, self.m2.death(x, &self.upper))?;
        let r = [
            b1.min(b2),
            (b1 - b2).max(0.0),
            (b2 - b1).max(0.0),
            d1.min(d2),
            (d1 - d2).max(0.0),
            (d2 - d1).max(0.0),
        ];
        self.rates[ord] = r;
        self.tree.set(ord, r.iter().sum());
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn lower(&self) -> &State {
        &self.lower
    }

    pub fn upper(&self) -> &State {
        &self.upper
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn next_event(&mut self, horizon: f64) -> Result<Option<PairEvent>, EngineError> {
        let total = self.tree.total();
        if total <= 0.0 {
            self.time = self.time.max(horizon);
            return Ok(None);
        }
        let dt = self.clock.exponential(total);
        let pick = self.clock.uniform() * total;
        if self.time + dt > horizon {
            self.time = horizon;
            return Ok(None);
        }
        if self.events >= self.max_events {
            return Err(EngineError::Explosion {
                events: self.events,
                time: self.time,
            });
        }
        let (ord, mut rem) = self.tree.find(pick);
        let r = self.rates[ord];
        let last_positive = (0..6).rev().find(|&c| r[c] > 0.0).unwrap_or(0);
        let mut ch = last_positive;
        for (c, &rc) in r.iter().enumerate() {
            if rc > 0.0 && rem < rc {
                ch = c;
                break;
            }
            rem -= rc;
        }
        let x = self.layout.active()[ord];
        let (dl, du) = MOVES[ch];
        apply(&mut self.lower, x, dl);
        apply(&mut self.upper, x, du);
        self.time += dt;
        self.events += 1;
        for k in 0..self.affected.len() {
            let j = (x as isize + self.affected[k]) as usize;
            if let Some(o) = self.layout.ordinal(j) {
                self.refresh(o)?;
            }
        }
        Ok(Some(PairEvent {
            time: self.time,
            idx: x,
            lower: dl,
            upper: du,
        }))
    }
}

fn apply(st: &mut State, x: usize, d: i8) {
    match d {
        1 => st.increment(x),
        -1 => st.decrement(x),
        _ => {}
    }
}

/// Where and when `lower <= upper` first failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationPoint {
    pub t: f64,
    pub x: Site,
}

/// Domination census over one or more coupled replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationReport {
    pub clean: bool,
    pub first_violation: Option<ViolationPoint>,
    pub replicates: u64,
}

impl DominationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Outcome of one coupled replicate.
#[derive(Debug, Clone)]
pub struct PairRun {
    pub violation: Option<ViolationPoint>,
    /// Every birth time of the lower process is a birth time of the upper
    /// one, at the same site.
    pub births_included: bool,
    pub lower: State,
    pub upper: State,
    /// Empty unless logs were requested.
    pub lower_log: Vec<EventRecord>,
    pub upper_log: Vec<EventRecord>,
}

fn first_excess(lower: &State, upper: &State) -> Option<usize> {
    lower
        .layout()
        .active()
        .iter()
        .copied()
        .find(|&x| lower.at(x) > upper.at(x))
}

/// Parameters of a coupled run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOptions {
    pub horizon: f64,
    pub seed: u64,
    pub replicate: u64,
    pub algorithm: Algorithm,
    pub max_events: u64,
    pub keep_logs: bool,
}

impl PairOptions {
    pub fn new(horizon: f64, seed: u64) -> Self {
        PairOptions {
            horizon,
            seed,
            replicate: 0,
            algorithm: Algorithm::Gillespie,
            max_events: crate::engine::DEFAULT_MAX_EVENTS,
            keep_logs: false,
        }
    }

    pub fn replicate(self, replicate: u64) -> Self {
        PairOptions { replicate, ..self }
    }

    pub fn algorithm(self, algorithm: Algorithm) -> Self {
        PairOptions { algorithm, ..self }
    }

    pub fn keep_logs(self, keep_logs: bool) -> Self {
        PairOptions { keep_logs, ..self }
    }
}

/// One coupled replicate with the joint-rate sampler.
pub fn couple_gillespie<M1: RateModel, M2: RateModel>(
    m1: M1,
    m2: M2,
    lower: State,
    upper: State,
    opts: &PairOptions,
) -> Result<PairRun, EngineError> {
    let layout = lower.layout().clone();
    let mut violation = first_excess(&lower, &upper).map(|x| ViolationPoint {
        t: 0.0,
        x: layout.site_of(x),
    });
    let mut sim = CoupledGillespie::new(m1, m2, lower, upper, opts.seed, opts.replicate, opts.max_events)?;
    let mut included = true;
    let (mut ll, mut ul) = (Vec::new(), Vec::new());
    while let Some(e) = sim.next_event(opts.horizon)? {
        if e.lower == 1 && e.upper != 1 {
            included = false;
        }
        if violation.is_none() && sim.lower().at(e.idx) > sim.upper().at(e.idx) {
            violation = Some(ViolationPoint {
                t: e.time,
                x: layout.site_of(e.idx),
            });
        }
        if opts.keep_logs {
            let site = layout.site_of(e.idx);
            if e.lower != 0 {
                ll.push(EventRecord { time: e.time, site, delta: e.lower });
            }
            if e.upper != 0 {
                ul.push(EventRecord { time: e.time, site, delta: e.upper });
            }
        }
    }
    Ok(PairRun {
        violation,
        births_included: included,
        lower: sim.lower().clone(),
        upper: sim.upper().clone(),
        lower_log: ll,
        upper_log: ul,
    })
}

fn thinning_log<M: RateModel>(
    model: M,
    state: State,
    opts: &PairOptions,
) -> Result<(Vec<(f64, usize, i8)>, State), EngineError> {
    let mut sim = Thinning::new(model, state, opts.seed, opts.replicate, opts.max_events)?;
    let mut log = Vec::new();
    while let Some(e) = sim.next_event(opts.horizon)? {
        log.push((e.time, e.idx, e.delta));
    }
    Ok((log, sim.state().clone()))
}

/// One coupled replicate: both processes thinned from the same marks.
///
/// Events of the two processes are merged by time; simultaneous events
/// (the same mark accepted by both) are applied together before the
/// domination check.
pub fn couple_thinning<M1: RateModel, M2: RateModel>(
    m1: M1,
    m2: M2,
    lower: State,
    upper: State,
    opts: &PairOptions,
) -> Result<PairRun, EngineError> {
    let layout = lower.layout().clone();
    let mut violation = first_excess(&lower, &upper).map(|x| ViolationPoint {
        t: 0.0,
        x: layout.site_of(x),
    });
    let (la, lower_final) = thinning_log(m1, lower.clone(), opts)?;
    let (ua, upper_final) = thinning_log(m2, upper.clone(), opts)?;
    let upper_births: std::collections::HashSet<(u64, usize)> = ua
        .iter()
        .filter(|e| e.2 > 0)
        .map(|e| (e.0.to_bits(), e.1))
        .collect();
    let included = la
        .iter()
        .filter(|e| e.2 > 0)
        .all(|e| upper_births.contains(&(e.0.to_bits(), e.1)));
    let (mut lo, mut up) = (lower, upper);
    let (mut i, mut j) = (0, 0);
    while i < la.len() || j < ua.len() {
        let t = match (la.get(i), ua.get(j)) {
            (Some(a), Some(b)) => a.0.min(b.0),
            (Some(a), None) => a.0,
            (None, Some(b)) => b.0,
            (None, None) => unreachable!(),
        };
        let mut touched = Vec::new();
        while i < la.len() && la[i].0 == t {
            apply(&mut lo, la[i].1, la[i].2);
            touched.push(la[i].1);
            i += 1;
        }
        while j < ua.len() && ua[j].0 == t {
            apply(&mut up, ua[j].1, ua[j].2);
            touched.push(ua[j].1);
            j += 1;
        }
        if violation.is_none() {
            if let Some(&x) = touched.iter().find(|&&x| lo.at(x) > up.at(x)) {
                violation = Some(ViolationPoint {
                    t,
                    x: layout.site_of(x),
                });
            }
        }
    }
    let to_records = |log: &[(f64, usize, i8)]| -> Vec<EventRecord> {
        if !opts.keep_logs {
            return Vec::new();
        }
        log.iter()
            .map(|&(time, idx, delta)| EventRecord {
                time,
                site: layout.site_of(idx),
                delta,
            })
            .collect()
    };
    Ok(PairRun {
        violation,
        births_included: included,
        lower_log: to_records(&la),
        upper_log: to_records(&ua),
        lower: lower_final,
        upper: upper_final,
    })
}

/// One coupled replicate with the sampler chosen by `opts.algorithm`.
pub fn couple<M1: RateModel, M2: RateModel>(
    m1: M1,
    m2: M2,
    lower: State,
    upper: State,
    opts: &PairOptions,
) -> Result<PairRun, EngineError> {
    match opts.algorithm {
        Algorithm::Gillespie => couple_gillespie(m1, m2, lower, upper, opts),
        Algorithm::Thinning => couple_thinning(m1, m2, lower, upper, opts),
    }
}

/// Result of randomized probing of the comparison hypotheses:
/// (i) `b1(x, xi1) <= b2(x, xi2)` whenever `xi1 <= xi2`, and
/// (ii) `d1(x, xi1) >= d2(x, xi2)` when moreover `xi1(x) = xi2(x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisProbe {
    pub samples: u64,
    pub birth_failures: u64,
    pub death_failures: u64,
    pub first_failure: Option<String>,
}

impl HypothesisProbe {
    pub fn holds(&self) -> bool {
        self.birth_failures == 0 && self.death_failures == 0
    }
}

/// Occupancy bound used when a model declares no ceiling.
pub const PROBE_OCCUPANCY: u32 = 6;

/// Samples `samples` ordered pairs `xi1 <= xi2` on `window` and checks both
/// hypotheses at every site. `xi1` stays within both models' occupancy
/// ceilings, `xi2` within the upper model's.
pub fn probe_hypotheses(
    m1: &dyn RateModel,
    m2: &dyn RateModel,
    window: &Window,
    samples: u64,
    seed: u64,
) -> Result<HypothesisProbe, EngineError> {
    let layout = layout_for(window, &[m1, m2])?;
    let c1 = m1.occupancy_ceiling().unwrap_or(PROBE_OCCUPANCY);
    let c2 = m2.occupancy_ceiling().unwrap_or(u32::MAX);
    let lo_cap = c1.min(c2).min(PROBE_OCCUPANCY);
    let mut probe = HypothesisProbe {
        samples,
        birth_failures: 0,
        death_failures: 0,
        first_failure: None,
    };
    for s in 0..samples {
        let key = StreamKey {
            site: Site::origin(layout.dim()),
            channel: Channel::Clock,
            replicate: s,
            lane: 0x00ff_0000,
        };
        let mut rng = NoiseStream::new(seed, key).rng();
        let mut xi1 = State::empty(layout.clone());
        let mut xi2 = State::empty(layout.clone());
        for &x in layout.active() {
            let a = if rng.uniform() < 0.5 {
                (rng.next_u64() % (lo_cap as u64 + 1)) as u32
            } else {
                0
            };
            let extra = if rng.uniform() < 0.5 {
                (rng.next_u64() % 4) as u32
            } else {
                0
            };
            xi1.set(x, a);
            xi2.set(x, a.saturating_add(extra).min(c2.max(a)));
        }
        for &x in layout.active() {
            let (b1, b2) = (m1.birth(x, &xi1), m2.birth(x, &xi2));
            if b1 > b2 + 1e-12 * b2.abs().max(1.0) {
                probe.birth_failures += 1;
                probe.first_failure.get_or_insert_with(|| {
                    format!("birth at {}: {b1} > {b2} (sample {s})", layout.site_of(x))
                });
            }
            if xi1.at(x) == xi2.at(x) {
                let (d1, d2) = (m1.death(x, &xi1), m2.death(x, &xi2));
                if d1 + 1e-12 * d1.abs().max(1.0) < d2 {
                    probe.death_failures += 1;
                    probe.first_failure.get_or_insert_with(|| {
                        format!("death at {}: {d1} < {d2} (sample {s})", layout.site_of(x))
                    });
                }
            }
        }
    }
    Ok(probe)
}

/// Hypothesis probe plus domination census over coupled replicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingSummary {
    pub hypotheses: HypothesisProbe,
    pub domination: DominationReport,
    /// Replicates in which some lower birth was not an upper birth.
    pub inclusion_failures: u64,
    /// Domination is claimed only when the hypotheses held on every probe
    /// and no replicate violated it.
    pub claim: bool,
}

/// Samples used by [`run_coupled`] and [`coupled_replicates`] to probe the
/// hypotheses.
pub const PROBE_SAMPLES: u64 = 10_000;

/// Runs `n` coupled replicates from `eta1 <= eta2` on `window`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_replicates<M1: RateModel, M2: RateModel>(
    m1: &M1,
    m2: &M2,
    window: &Window,
    eta1: &Configuration,
    eta2: &Configuration,
    opts: &PairOptions,
    n: u64,
) -> Result<CouplingSummary, EngineError> {
    let hypotheses = probe_hypotheses(m1, m2, window, PROBE_SAMPLES, opts.seed)?;
    let layout = layout_for(window, &[m1, m2])?;
    let lower = State::from_configuration(layout.clone(), eta1)?;
    let upper = State::from_configuration(layout, eta2)?;
    let runs = try_replicates(n, |r| {
        couple(m1, m2, lower.clone(), upper.clone(), &opts.replicate(r).keep_logs(false))
            .map(|p| (p.violation, p.births_included))
    })?;
    let first_violation = runs.iter().find_map(|r| r.0);
    let inclusion_failures = runs.iter().filter(|r| !r.1).count() as u64;
    let domination = DominationReport {
        clean: first_violation.is_none(),
        first_violation,
        replicates: n,
    };
    Ok(CouplingSummary {
        claim: hypotheses.holds() && domination.clean && inclusion_failures == 0,
        hypotheses,
        domination,
        inclusion_failures,
    })
}

/// A single coupled replicate with full logs.
pub fn run_coupled<M1: RateModel, M2: RateModel>(
    m1: &M1,
    m2: &M2,
    window: &Window,
    eta1: &Configuration,
    eta2: &Configuration,
    opts: &PairOptions,
) -> Result<(Trajectory, Trajectory, CouplingSummary), EngineError> {
    let hypotheses = probe_hypotheses(m1, m2, window, PROBE_SAMPLES, opts.seed)?;
    let layout = layout_for(window, &[m1, m2])?;
    let lower = State::from_configuration(layout.clone(), eta1)?;
    let upper = State::from_configuration(layout, eta2)?;
    let run = couple(m1, m2, lower.clone(), upper.clone(), &opts.keep_logs(true))?;
    let traj = |name: String, init: &State, log: Vec<EventRecord>, fin: &State| Trajectory {
        model: name,
        algorithm: opts.algorithm,
        seed: opts.seed,
        replicate: opts.replicate,
        horizon: opts.horizon,
        initial: init.to_configuration(),
        events: log,
        final_config: fin.to_configuration(),
    };
    let domination = DominationReport {
        clean: run.violation.is_none(),
        first_violation: run.violation,
        replicates: 1,
    };
    let inclusion_failures = u64::from(!run.births_included);
    let summary = CouplingSummary {
        claim: hypotheses.holds() && domination.clean && inclusion_failures == 0,
        hypotheses,
        domination,
        inclusion_failures,
    };
    Ok((
        traj(m1.name(), &lower, run.lower_log, &run.lower),
        traj(m2.name(), &upper, run.upper_log, &run.upper),
        summary,
    ))
}

/// Monte-Carlo weighted-L1 distance between solutions from two initial
/// conditions against `(sum w |A - B|) exp(4 c_wa t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionReport {
    pub t: f64,
    pub lhs: f64,
    pub se: f64,
    pub initial_distance: f64,
    pub bound: f64,
    pub replicates: u64,
    /// `lhs <= bound + 3 se`.
    pub holds: bool,
}

/// Couples solutions from `a` and `b` on shared noise and estimates
/// `E sum_x w(x) |eta^A_t(x) - eta^B_t(x)|`.
#[allow(clippy::too_many_arguments)]
pub fn contraction_check<M: RateModel>(
    model: &M,
    a: &Configuration,
    b: &Configuration,
    window: &Window,
    t: f64,
    n: u64,
    seed: u64,
    w: &(dyn Fn(&Site) -> f64 + Sync),
    c_wa: f64,
) -> Result<ContractionReport, EngineError> {
    let layout = layout_for(window, &[model])?;
    let sa = State::from_configuration(layout.clone(), a)?;
    let sb = State::from_configuration(layout.clone(), b)?;
    let weights: Vec<f64> = layout.active().iter().map(|&x| w(&layout.site_of(x))).collect();
    let dist = |p: &State, q: &State| -> f64 {
        let terms: Vec<f64> = layout
            .active()
            .iter()
            .zip(&weights)
            .map(|(&x, wx)| wx * (p.at(x) as f64 - q.at(x) as f64).abs())
            .collect();
        crate::stats::pairwise_sum(&terms)
    };
    let initial_distance = dist(&sa, &sb);
    let opts = PairOptions::new(t, seed);
    let samples = try_replicates(n, |r| {
        couple_gillespie(model, model, sa.clone(), sb.clone(), &opts.replicate(r))
            .map(|p| dist(&p.lower, &p.upper))
    })?;
    let m = MeanSe::of(&samples);
    let bound = initial_distance * (4.0 * c_wa * t).exp();
    Ok(ContractionReport {
        t,
        lhs: m.mean,
        se: m.se,
        initial_distance,
        bound,
        replicates: n,
        holds: m.mean <= bound + 3.0 * m.se,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::kernel::FiniteKernel;
    use crate::rates::{
        BpdlModel, BpdlParams, BranchLocalModel, BranchLocalParams, ContactModel, DeathCurve,
    };

    fn bpdl(local: bool) -> BpdlModel {
        BpdlModel::new(BpdlParams {
            b0: 1.0,
            m: 1.0,
            a_plus: FiniteKernel::indicator(1, 0.3, 1).unwrap(),
            a_minus: FiniteKernel::indicator(1, 0.2, if local { 0 } else { 1 }).unwrap(),
        })
        .unwrap()
    }

    fn branch(lambda: f64) -> BranchLocalModel {
        BranchLocalModel::new(BranchLocalParams {
            lambda,
            g: DeathCurve::Square,
        })
        .unwrap()
    }

    fn random_pair(layout: &Arc<Layout>, seed: u64, max: u32) -> (State, State) {
        let mut rng = NoiseStream::new(seed, StreamKey::clock(layout.dim(), 99)).rng();
        let mut a = State::empty(layout.clone());
        let mut b = State::empty(layout.clone());
        for &x in layout.active() {
            a.set(x, (rng.next_u64() % (max as u64 + 1)) as u32);
            b.set(x, (rng.next_u64() % (max as u64 + 1)) as u32);
        }
        (a, b)
    }

    #[test]
    fn tilde_rate_cases() {
        let m = bpdl(false);
        let w = Window::ball(1, 3).unwrap();
        let l = layout_for(&w, &[&m]).unwrap();
        let o = l.index_of(&Site::origin(1)).unwrap();
        let mut xi = State::empty(l.clone());
        xi.set(o, 2);
        let mut eta = State::empty(l.clone());
        eta.set(o, 1);
        // xi(0) > eta(0): rates of xi
        assert_eq!(tilde_rates(o, &xi, &eta, &m, &m), (m.birth(o, &xi), m.death(o, &xi)));
        // tie
        let t = tilde_rates(o, &xi, &xi, &m, &m);
        assert_eq!(t, (m.birth(o, &xi), m.death(o, &xi)));
        // tie across two models: max birth, min death
        let (m1, m2) = (branch(0.5), branch(1.0));
        let (b, d) = tilde_rates(o, &eta, &eta, &m1, &m2);
        assert_eq!(b, m1.birth(o, &eta).max(m2.birth(o, &eta)));
        assert_eq!(d, m1.death(o, &eta).min(m2.death(o, &eta)));
    }

    #[test]
    fn lemma_inequalities_on_random_pairs() {
        let w = Window::ball(1, 5).unwrap();
        let models: Vec<(Box<dyn RateModel>, u32)> = vec![
            (Box::new(bpdl(false)), 4),
            (Box::new(bpdl(true)), 4),
            (Box::new(ContactModel::new(1.3).unwrap()), 1),
            (Box::new(branch(0.8)), 4),
        ];
        for (m, max) in &models {
            let l = layout_for(&w, &[m.as_ref()]).unwrap();
            let a = m.dominating_kernel(1, *max).unwrap();
            for seed in 0..2000 {
                let (xi, eta) = random_pair(&l, seed, *max);
                for &x in l.active() {
                    let dist: f64 = l
                        .active()
                        .iter()
                        .map(|&y| {
                            a.value(&l.site_of(x).sub(&l.site_of(y)))
                                * (xi.at(y) as f64 - eta.at(y) as f64).abs()
                        })
                        .sum();
                    let (bt, dt) = tilde_rates(x, &xi, &eta, m.as_ref(), m.as_ref());
                    assert!(bt - m.birth(x, &eta) <= dist + 1e-9);
                    assert!(dt - m.death(x, &eta) >= -dist - 1e-9);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn tilde_rates_are_symmetric(seed in 0u64..100_000) {
            let w = Window::ball(1, 4).unwrap();
            let (m1, m2) = (branch(0.4), branch(1.1));
            let l = layout_for(&w, &[&m1]).unwrap();
            let (xi, eta) = random_pair(&l, seed, 3);
            for &x in l.active() {
                prop_assert_eq!(tilde_rates(x, &xi, &eta, &m1, &m1), tilde_rates(x, &eta, &xi, &m1, &m1));
                prop_assert_eq!(tilde_rates(x, &xi, &eta, &m1, &m2), tilde_rates(x, &eta, &xi, &m2, &m1));
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_paths() {
        let m = ContactModel::new(1.5).unwrap();
        let w = Arc::new(Window::ball(1, 5).unwrap());
        let c = Configuration::point_mass(w.clone(), 1).unwrap();
        for alg in [Algorithm::Gillespie, Algorithm::Thinning] {
            let opts = PairOptions::new(3.0, 4).algorithm(alg);
            let (a, b, s) = run_coupled(&m, &m, &w, &c, &c, &opts).unwrap();
            assert_eq!(a.events, b.events);
            assert!(s.domination.clean && s.inclusion_failures == 0);
            // contact is not attractive in the sense of (i): a site empty in
            // the lower process may give birth while occupied in the upper.
            assert!(!s.hypotheses.holds() && !s.claim);
        }
    }

    #[test]
    fn neighbour_competition_fails_the_probe() {
        let w = Window::ball(1, 3).unwrap();
        let m = bpdl(false);
        let p = probe_hypotheses(&m, &m, &w, 2000, 1).unwrap();
        assert!(p.birth_failures == 0 && p.death_failures > 0);
        let local = bpdl(true);
        assert!(probe_hypotheses(&local, &local, &w, 2000, 1).unwrap().holds());
    }

    #[test]
    fn contact_below_branching() {
        let w = Window::ball(1, 4).unwrap();
        let p = probe_hypotheses(&ContactModel::new(1.0).unwrap(), &branch(1.0), &w, 2000, 3).unwrap();
        assert!(p.holds(), "{p:?}");
        let q = probe_hypotheses(&branch(0.5), &branch(1.0), &w, 2000, 3).unwrap();
        assert!(q.holds(), "{q:?}");
        let r = probe_hypotheses(&branch(1.0), &branch(0.5), &w, 2000, 3).unwrap();
        assert!(!r.holds());
    }

    #[test]
    fn reversed_order_is_reported() {
        let w = Arc::new(Window::ball(1, 3).unwrap());
        let m = bpdl(true);
        let small = Configuration::point_mass(w.clone(), 1).unwrap();
        let big = Configuration::point_mass(w.clone(), 2).unwrap();
        let s = coupled_replicates(&m, &m, &w, &big, &small, &PairOptions::new(0.5, 1), 10).unwrap();
        assert!(!s.domination.clean);
        assert_eq!(s.domination.first_violation.unwrap().t, 0.0);
        assert!(!s.claim);
    }

    #[test]
    fn report_json_shape() {
        let r = DominationReport {
            clean: true,
            first_violation: None,
            replicates: 3,
        };
        assert_eq!(r.to_json(), r#"{"clean":true,"first_violation":null,"replicates":3}"#);
        let v = DominationReport {
            clean: false,
            first_violation: Some(ViolationPoint {
                t: 0.5,
                x: Site::new(&[1]).unwrap(),
            }),
            replicates: 1,
        };
        assert_eq!(v.to_json(), r#"{"clean":false,"first_violation":{"t":0.5,"x":[1]},"replicates":1}"#);
    }

    #[test]
    fn contraction_trivial_cases() {
        let m = bpdl(true);
        let w = Arc::new(Window::ball(1, 3).unwrap());
        let a = Configuration::point_mass(w.clone(), 1).unwrap();
        let b = Configuration::point_mass(w.clone(), 2).unwrap();
        let wt = |x: &Site| (-(x.norm1() as f64)).exp();
        let same = contraction_check(&m, &a, &a, &w, 0.5, 200, 1, &wt, 1.0).unwrap();
        assert_eq!(same.lhs, 0.0);
        let zero = contraction_check(&m, &a, &b, &w, 0.0, 50, 1, &wt, 1.0).unwrap();
        assert_eq!(zero.lhs, 1.0);
        assert_eq!(zero.bound, 1.0);
        assert!(zero.holds);
    }
}
