use std::sync::Arc;

use crate::error::EngineError;
use crate::lattice::{Layout, State};
use crate::rates::RateModel;
use crate::rng::{Channel, NoiseStream, StreamKey, StreamRng};

use super::tree::SumTree;
use super::{affected_deltas, checked_rate, rates_plainly_ok, Event, Simulator};

/// Direct-method Gillespie sampler.
///
/// One sum-tree leaf per active site holds `b(x) + d(x)`; the per-channel
/// split is kept alongside. After an event at `y` only sites `y + z` with
/// `z` in the model's affected offsets are recomputed.
pub struct Gillespie<M> {
    model: M,
    state: State,
    layout: Arc<Layout>,
    time: f64,
    // (birth, death) per active ordinal
    rates: Vec<(f64, f64)>,
    tree: SumTree,
    clock: StreamRng,
    affected: Vec<isize>,
    // affected offsets span few grid indices, so one range pass over the
    // tree beats a root walk per site
    range_update: bool,
    events: u64,
    max_events: u64,
}

/// Events between cache spot checks in debug builds.
const SPOT_CHECK_EVERY: u64 = 1 << 16;

impl<M: RateModel> Gillespie<M> {
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
        let span = match (affected.iter().min(), affected.iter().max()) {
            (Some(lo), Some(hi)) => (hi - lo) as usize + 1,
            _ => 0,
        };
        let range_update = span <= 2 * affected.len();
        let clock = NoiseStream::new(seed, StreamKey::clock(layout.dim(), replicate)).rng();
        let mut g = Gillespie {
            model,
            state,
            layout,
            time: 0.0,
            rates: vec![(0.0, 0.0); n],
            tree: SumTree::new(n),
            clock,
            affected,
            range_update,
            events: 0,
            max_events,
        };
        for ord in 0..n {
            let x = g.layout.active()[ord];
            if !g.rates_at(ord, x) {
                g.rates_at_checked(ord, x)?;
            }
        }
        g.tree.rebuild();
        Ok(g)
    }

    /// Recomputes the rates at `x` and writes its leaf; ancestors are left
    /// stale. False, with nothing written, when the rates need the full
    /// check of `rates_at_checked`.
    #[inline]
    fn rates_at(&mut self, ord: usize, x: usize) -> bool {
        let b = self.model.birth(x, &self.state);
        let d = self.model.death(x, &self.state);
        if !(rates_plainly_ok(b, d) && (d == 0.0 || self.state.at(x) > 0)) {
            return false;
        }
        self.rates[ord] = (b, d);
        self.tree.set_leaf(ord, b + d);
        true
    }

    #[cold]
    #[inline(never)]
    fn rates_at_checked(&mut self, ord: usize, x: usize) -> Result<(), EngineError> {
        let b = checked_rate(&self.layout, &self.state, x, Channel::Birth, self.model.birth(x, &self.state))?;
        let d = checked_rate(&self.layout, &self.state, x, Channel::Death, self.model.death(x, &self.state))?;
        self.rates[ord] = (b, d);
        self.tree.set_leaf(ord, b + d);
        Ok(())
    }

    /// Total event rate `R(eta)` at the current state.
    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    /// Whether the cached rates equal a fresh evaluation at every site.
    pub fn cache_consistent(&self) -> bool {
        self.layout.active().iter().enumerate().all(|(ord, &x)| {
            let (b, d) = self.rates[ord];
            b == self.model.birth(x, &self.state)
                && d == self.model.death(x, &self.state)
                && self.tree.get(ord) == b + d
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }
}

impl<M: RateModel> Simulator for Gillespie<M> {
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
        let (ord, rem) = self.tree.find(pick);
        let x = self.layout.active()[ord];
        let (b, d) = self.rates[ord];
        let delta: i8 = if (rem < b && b > 0.0) || d <= 0.0 {
            1
        } else {
            -1
        };
        if delta > 0 {
            self.state.increment(x);
        } else {
            self.state.decrement(x);
        }
        self.time += dt;
        self.events += 1;
        let (mut lo, mut hi) = (usize::MAX, 0);
        for k in 0..self.affected.len() {
            let j = (x as isize + self.affected[k]) as usize;
            if let Some(o) = self.layout.ordinal(j) {
                if !self.rates_at(o, j) {
                    self.rates_at_checked(o, j)?;
                }
                if self.range_update {
                    lo = lo.min(o);
                    hi = hi.max(o);
                } else {
                    self.tree.propagate(o, o);
                }
            }
        }
        if self.range_update {
            // the event site itself is active, so the range is non-empty
            self.tree.propagate(lo, hi);
        }
        debug_assert!(self.events % SPOT_CHECK_EVERY != 0 || self.cache_consistent());
        Ok(Some(Event {
            time: self.time,
            idx: x,
            delta,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::FiniteKernel;
    use crate::lattice::Window;
    use crate::rates::{layout_for, BpdlModel, BpdlParams, ContactModel};

    fn bpdl(b0: f64, m: f64) -> BpdlModel {
        BpdlModel::new(BpdlParams {
            b0,
            m,
            a_plus: FiniteKernel::zero(1),
            a_minus: FiniteKernel::zero(1),
        })
        .unwrap()
    }

    fn one_site(model: &dyn RateModel, n: u32) -> State {
        let w = Window::ball(1, 0).unwrap();
        let mut st = State::empty(layout_for(&w, &[model]).unwrap());
        let x = st.layout().active()[0];
        st.set(x, n);
        st
    }

    #[test]
    fn contact_from_empty_is_absorbed() {
        let m = ContactModel::new(2.0).unwrap();
        let w = Window::ball(1, 4).unwrap();
        let st = State::empty(layout_for(&w, &[&m]).unwrap());
        let mut g = Gillespie::new(&m, st, 1, 0, 100).unwrap();
        assert_eq!(g.next_event(10.0).unwrap(), None);
        assert_eq!(g.time(), 10.0);
        assert_eq!(g.events(), 0);
    }

    #[test]
    fn lone_positive_rate_fires_with_exponential_holding() {
        let m = bpdl(0.5, 1.0);
        let mut times = Vec::new();
        for r in 0..20_000 {
            let mut g = Gillespie::new(&m, one_site(&m, 0), 7, r, 10).unwrap();
            let e = g.next_event(f64::INFINITY).unwrap().unwrap();
            assert_eq!(e.delta, 1);
            times.push(e.time);
        }
        let mean = crate::stats::MeanSe::of(&times);
        assert!((mean.mean - 2.0).abs() < 3.0 * mean.se, "{mean:?}");
    }

    #[test]
    fn equal_rates_split_evenly() {
        let m = bpdl(1.0, 1.0);
        let births = (0..20_000u64)
            .filter(|&r| {
                let mut g = Gillespie::new(&m, one_site(&m, 1), 3, r, 10).unwrap();
                g.next_event(f64::INFINITY).unwrap().unwrap().delta == 1
            })
            .count() as f64;
        let p = births / 20_000.0;
        assert!((p - 0.5).abs() < 3.0 * (0.25f64 / 20_000.0).sqrt(), "{p}");
    }

    #[test]
    fn cache_stays_consistent() {
        let m = BpdlModel::new(BpdlParams {
            b0: 1.0,
            m: 1.0,
            a_plus: FiniteKernel::indicator(2, 0.3, 1).unwrap(),
            a_minus: FiniteKernel::indicator(2, 0.2, 1).unwrap(),
        })
        .unwrap();
        let w = Window::ball(2, 4).unwrap();
        let st = State::empty(layout_for(&w, &[&m]).unwrap());
        let mut g = Gillespie::new(&m, st, 11, 0, 1_000_000).unwrap();
        while let Some(e) = g.next_event(20.0).unwrap() {
            assert!(g.state().at(e.idx) < u32::MAX);
        }
        assert!(g.events() > 100);
        assert!(g.cache_consistent());
    }

    #[test]
    fn explosion_guard() {
        let m = bpdl(5.0, 0.0);
        let mut g = Gillespie::new(&m, one_site(&m, 0), 1, 0, 10).unwrap();
        let mut n = 0;
        let err = loop {
            match g.next_event(1e9) {
                Ok(Some(_)) => n += 1,
                Ok(None) => panic!("horizon reached"),
                Err(e) => break e,
            }
        };
        assert_eq!(n, 10);
        assert!(matches!(err, EngineError::Explosion { events: 10, .. }));
    }

    #[test]
    fn negative_rate_is_rejected() {
        let m = crate::rates::CustomModel {
            name: "bad".into(),
            radius: 0,
            birth: Arc::new(|_, _| -1.0),
            death: Arc::new(|_, _| 0.0),
            kernel: None,
        };
        let r = Gillespie::new(&m, one_site(&m, 0), 1, 0, 10);
        assert!(matches!(
            r.err(),
            Some(EngineError::InvalidRate { channel: Channel::Birth, .. })
        ));
    }
}
