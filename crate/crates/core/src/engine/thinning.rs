use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use crate::error::EngineError;
use crate::lattice::{Layout, Site, State};
use crate::rates::RateModel;
use crate::rng::{Channel, NoiseStream, StreamKey, StreamRng};

use super::{affected_deltas, checked_rate, Event, Simulator};

/// Time span of one keyed block of a strip.
const BLOCK: f64 = 1.0;
/// Block indices occupy the low 24 bits of a stream lane.
const MAX_BLOCKS: u32 = 1 << 24;
/// Largest horizon the strip keying supports.
pub const MAX_THINNING_HORIZON: f64 = MAX_BLOCKS as f64 * BLOCK;
const MAX_STRIPS: u8 = 64;

/// Upper end of the mark range covered by the first `k` strips.
#[inline]
fn top(k: u8) -> f64 {
    if k == 0 {
        0.0
    } else {
        (2.0f64).powi(k as i32 - 1)
    }
}

/// Mark band `[lo, lo + width)` of strip `k`: `[0, 1)` then `[2^{k-1}, 2^k)`.
#[inline]
fn band(k: u8) -> (f64, f64) {
    if k == 0 {
        (0.0, 1.0)
    } else {
        let lo = top(k);
        (lo, lo)
    }
}

fn strips_needed(rate: f64) -> u8 {
    let mut k = 0;
    while top(k) < rate && k < MAX_STRIPS {
        k += 1;
    }
    k
}

/// One band of the Poisson marks `(s, u)` of a site and channel.
///
/// The points of strip `k` on block `[j, j + 1)` come from the stream keyed
/// by `(site, channel, replicate, lane = k << 24 | j)`, so the realization
/// is a pure function of the key whatever time the strip is switched on.
struct Strip {
    rng: StreamRng,
    seed: u64,
    key: StreamKey,
    block: u32,
    t: f64,
    u: f64,
    lo: f64,
    width: f64,
}

impl Strip {
    fn open(seed: u64, site: Site, channel: Channel, replicate: u64, k: u8, after: f64) -> Self {
        let block = (after / BLOCK).floor() as u32;
        let key = StreamKey {
            site,
            channel,
            replicate,
            lane: ((k as u32) << 24) | block,
        };
        let (lo, width) = band(k);
        let mut s = Strip {
            rng: NoiseStream::new(seed, key).rng(),
            seed,
            key,
            block,
            t: block as f64 * BLOCK,
            u: 0.0,
            lo,
            width,
        };
        s.advance_past(after);
        s
    }

    /// Moves to the first point strictly after `after`.
    fn advance_past(&mut self, after: f64) {
        loop {
            self.t += self.rng.exponential(self.width);
            if self.t >= (self.block + 1) as f64 * BLOCK {
                self.block += 1;
                if self.block >= MAX_BLOCKS {
                    self.t = f64::INFINITY;
                    return;
                }
                self.key.lane = (self.key.lane & !(MAX_BLOCKS - 1)) | self.block;
                self.rng = NoiseStream::new(self.seed, self.key).rng();
                self.t = self.block as f64 * BLOCK;
                continue;
            }
            self.u = self.lo + self.width * self.rng.uniform();
            if self.t > after {
                return;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    t: f64,
    ord: u32,
    ch: u8,
    strip: u8,
    slot: u32,
}

impl Candidate {
    fn key(&self) -> (f64, u32, u8, u8) {
        (self.t, self.ord, self.ch, self.strip)
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reversed so that `BinaryHeap` pops the earliest candidate.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        b.0.total_cmp(&a.0)
            .then(b.1.cmp(&a.1))
            .then(b.2.cmp(&a.2))
            .then(b.3.cmp(&a.3))
    }
}

/// Thinning of per-site Poisson marks, the literal pathwise construction:
/// a birth mark `(s, u)` at `x` is accepted iff `u < b(x, eta_{s-})`, a death
/// mark iff `u < d(x, eta_{s-})`.
///
/// Marks are generated only in the bands below the current coverage of each
/// site and channel. Coverage is raised after every accepted event in range
/// to at least the pure-birth envelope (births) or the current rate
/// (deaths), and is never lowered. A candidate whose rate exceeds its
/// coverage would have needed marks that were never generated; that is
/// reported as [`EngineError::EnvelopeViolation`].
///
/// Two instances with the same seed and replicate see the same marks, which
/// is what shared-noise couplings rely on.
pub struct Thinning<M> {
    model: M,
    state: State,
    layout: Arc<Layout>,
    seed: u64,
    replicate: u64,
    time: f64,
    coverage: Vec<[u8; 2]>,
    strips: Vec<Strip>,
    heap: BinaryHeap<Candidate>,
    affected: Vec<isize>,
    events: u64,
    candidates: u64,
    max_events: u64,
}

const CHANNELS: [Channel; 2] = [Channel::Birth, Channel::Death];

impl<M: RateModel> Thinning<M> {
    pub fn new(
        model: M,
        state: State,
        seed: u64,
        replicate: u64,
        max_events: u64,
    ) -> Result<Self, EngineError> {
        let layout = state.layout().clone();
        let affected = affected_deltas(&model, &layout)?;
        let n = layout.active().len();
        let mut th = Thinning {
            model,
            state,
            layout,
            seed,
            replicate,
            time: 0.0,
            coverage: vec![[0, 0]; n],
            strips: Vec::new(),
            heap: BinaryHeap::new(),
            affected,
            events: 0,
            candidates: 0,
            max_events,
        };
        for ord in 0..n {
            th.cover(ord)?;
        }
        Ok(th)
    }

    /// Raises the coverage of `ord` to the current envelope and death rate.
    fn cover(&mut self, ord: usize) -> Result<(), EngineError> {
        let x = self.layout.active()[ord];
        let b = checked_rate(&self.layout, &self.state, x, Channel::Birth, self.model.birth(x, &self.state))?;
        let bbar = match self.model.monotone_birth_bound(x, &self.state) {
            Some(v) => checked_rate(&self.layout, &self.state, x, Channel::Birth, v)?,
            None => b,
        };
        let d = checked_rate(&self.layout, &self.state, x, Channel::Death, self.model.death(x, &self.state))?;
        self.raise(ord, 0, b.max(bbar));
        self.raise(ord, 1, d);
        Ok(())
    }

    fn raise(&mut self, ord: usize, ch: u8, rate: f64) {
        let want = strips_needed(rate);
        while self.coverage[ord][ch as usize] < want {
            let k = self.coverage[ord][ch as usize];
            let site = self.layout.site_of(self.layout.active()[ord]);
            let strip = Strip::open(self.seed, site, CHANNELS[ch as usize], self.replicate, k, self.time);
            let slot = self.strips.len() as u32;
            self.heap.push(Candidate {
                t: strip.t,
                ord: ord as u32,
                ch,
                strip: k,
                slot,
            });
            self.strips.push(strip);
            self.coverage[ord][ch as usize] = k + 1;
        }
    }

    /// Candidate marks examined so far (accepted or not).
    pub fn candidates(&self) -> u64 {
        self.candidates
    }

    /// Upper end of the covered mark range at `ord` for birth (`0`) or
    /// death (`1`).
    pub fn coverage(&self, ord: usize, ch: usize) -> f64 {
        top(self.coverage[ord][ch])
    }

    pub fn model(&self) -> &M {
        &self.model
    }
}

impl<M: RateModel> Simulator for Thinning<M> {
    fn time(&self) -> f64 {
        self.time
    }

    fn state(&self) -> &State {
        &self.state
    }

    fn events(&self) -> u64 {
        self.events
    }

    fn next_event(&mut self, horizon: f64) -> Result<Option<Event>, EngineError> {
        if !(horizon < MAX_THINNING_HORIZON) {
            return Err(EngineError::Argument(format!(
                "thinning horizon must be below {MAX_THINNING_HORIZON}"
            )));
        }
        loop {
            let Some(&c) = self.heap.peek() else {
                self.time = self.time.max(horizon);
                return Ok(None);
            };
            if c.t > horizon {
                self.time = horizon;
                return Ok(None);
            }
            self.heap.pop();
            self.candidates += 1;
            self.time = c.t;
            let ord = c.ord as usize;
            let x = self.layout.active()[ord];
            let (channel, raw) = if c.ch == 0 {
                (Channel::Birth, self.model.birth(x, &self.state))
            } else {
                (Channel::Death, self.model.death(x, &self.state))
            };
            let rate = checked_rate(&self.layout, &self.state, x, channel, raw)?;
            let bound = top(self.coverage[ord][c.ch as usize]);
            if rate > bound {
                return Err(EngineError::EnvelopeViolation {
                    site: self.layout.site_of(x),
                    channel,
                    time: c.t,
                    rate,
                    bound,
                });
            }
            let strip = &mut self.strips[c.slot as usize];
            let u = strip.u;
            strip.advance_past(c.t);
            self.heap.push(Candidate { t: strip.t, ..c });
            if u >= rate {
                continue;
            }
            if self.events >= self.max_events {
                return Err(EngineError::Explosion {
                    events: self.events,
                    time: self.time,
                });
            }
            let delta: i8 = if c.ch == 0 {
                self.state.increment(x);
                1
            } else {
                self.state.decrement(x);
                -1
            };
            self.events += 1;
            for k in 0..self.affected.len() {
                let j = (x as isize + self.affected[k]) as usize;
                if let Some(o) = self.layout.ordinal(j) {
                    self.cover(o)?;
                }
            }
            return Ok(Some(Event {
                time: c.t,
                idx: x,
                delta,
            }));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::FiniteKernel;
    use crate::lattice::Window;
    use crate::rates::{layout_for, BpdlModel, BpdlParams, ContactModel, CustomModel};

    #[test]
    fn strip_geometry() {
        assert_eq!(strips_needed(0.0), 0);
        assert_eq!(strips_needed(0.3), 1);
        assert_eq!(strips_needed(1.0), 1);
        assert_eq!(strips_needed(1.5), 2);
        assert_eq!(strips_needed(2.0), 2);
        assert_eq!(strips_needed(3.0), 3);
        assert_eq!(band(0), (0.0, 1.0));
        assert_eq!(band(1), (1.0, 1.0));
        assert_eq!(band(3), (4.0, 4.0));
        for k in 1..10u8 {
            let (lo, w) = band(k);
            assert_eq!(lo + w, top(k + 1));
        }
    }

    #[test]
    fn strip_realization_ignores_activation_time() {
        let site = Site::origin(1);
        let mut early = Strip::open(5, site, Channel::Birth, 0, 2, 0.0);
        while early.t <= 3.7 {
            early.advance_past(early.t);
        }
        let late = Strip::open(5, site, Channel::Birth, 0, 2, 3.7);
        assert_eq!((early.t, early.u), (late.t, late.u));
        assert!(late.u >= 2.0 && late.u < 4.0);
    }

    #[test]
    fn zero_rate_candidates_are_rejected() {
        // birth 0 everywhere, but the envelope claims 1: marks exist, none fire
        let m = CustomModel {
            name: "silent".into(),
            radius: 0,
            birth: Arc::new(|_, _| 0.0),
            death: Arc::new(|_, _| 0.0),
            kernel: None,
        };
        struct Loud(CustomModel);
        impl RateModel for Loud {
            fn name(&self) -> String {
                self.0.name()
            }
            fn interaction_radius(&self) -> u32 {
                0
            }
            fn birth(&self, x: usize, eta: &State) -> f64 {
                self.0.birth(x, eta)
            }
            fn death(&self, x: usize, eta: &State) -> f64 {
                self.0.death(x, eta)
            }
            fn monotone_birth_bound(&self, _x: usize, _eta: &State) -> Option<f64> {
                Some(1.0)
            }
        }
        let loud = Loud(m);
        let w = Window::ball(1, 2).unwrap();
        let st = State::empty(layout_for(&w, &[&loud]).unwrap());
        let mut th = Thinning::new(&loud, st, 1, 0, 100).unwrap();
        assert_eq!(th.next_event(10.0).unwrap(), None);
        assert!(th.candidates() > 10);
    }

    #[test]
    fn stale_coverage_is_a_hard_error() {
        // claims radius 0 but reads its neighbour
        let m = CustomModel {
            name: "liar".into(),
            radius: 0,
            birth: Arc::new(|x, eta| 1.0 + 10.0 * eta.at(x - 1) as f64),
            death: Arc::new(|_, _| 0.0),
            kernel: None,
        };
        let w = Window::ball(1, 3).unwrap();
        let l = crate::lattice::Layout::new(&w, 1).unwrap();
        let mut th = Thinning::new(&m, State::empty(l), 3, 0, 1000).unwrap();
        let err = loop {
            match th.next_event(100.0) {
                Ok(Some(_)) => {}
                Ok(None) => panic!("no violation detected"),
                Err(e) => break e,
            }
        };
        assert!(matches!(err, EngineError::EnvelopeViolation { .. }));
    }

    #[test]
    fn constant_rate_accepts_every_covered_mark() {
        let m = BpdlModel::new(BpdlParams {
            b0: 1.0,
            m: 0.0,
            a_plus: FiniteKernel::zero(1),
            a_minus: FiniteKernel::zero(1),
        })
        .unwrap();
        let w = Window::ball(1, 0).unwrap();
        let st = State::empty(layout_for(&w, &[&m]).unwrap());
        let mut th = Thinning::new(&m, st, 9, 0, 10_000).unwrap();
        while th.next_event(50.0).unwrap().is_some() {}
        assert_eq!(th.candidates(), th.events());
    }

    #[test]
    fn contact_thinning_stays_binary() {
        let m = ContactModel::new(2.0).unwrap();
        let w = Window::ball(1, 6).unwrap();
        let l = layout_for(&w, &[&m]).unwrap();
        let mut st = State::empty(l.clone());
        st.set(l.index_of(&Site::origin(1)).unwrap(), 1);
        let mut th = Thinning::new(&m, st, 2, 0, 100_000).unwrap();
        while let Some(e) = th.next_event(5.0).unwrap() {
            assert!(th.state().at(e.idx) <= 1);
        }
    }
}
