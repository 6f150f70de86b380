//! Birth and death rate models `b(x, eta)`, `d(x, eta)`.
//!
//! Models read occupancy from a dense [`State`] and receive the site as a
//! grid index of the state's layout. A layout used with a model must have a
//! margin of at least [`RateModel::interaction_radius`].

mod aggregation;
mod bpdl;
mod branch;
mod contact;
mod envelope;

use std::sync::Arc;

pub use aggregation::{AggregationModel, AggregationParams, BirthMode, DeathForm};
pub use bpdl::{BpdlModel, BpdlParams};
pub use branch::{BranchLocalModel, BranchLocalParams, DeathCurve};
pub use contact::ContactModel;
pub use envelope::{pure_birth_envelope, CapSuppressed, CustomModel, Frozen, PureBirthEnvelope};

use crate::error::LatticeError;
use crate::kernel::FiniteKernel;
use crate::lattice::{Configuration, Layout, Site, State, Window};

/// Rate functions of a lattice birth-and-death process.
pub trait RateModel: Send + Sync {
    fn name(&self) -> String;

    /// Rates at `x` depend on `eta` only through sites `y` with
    /// `|x - y|_1 <= interaction_radius`.
    fn interaction_radius(&self) -> u32;

    fn birth(&self, x: usize, eta: &State) -> f64;

    /// Must vanish whenever `eta(x) = 0`.
    fn death(&self, x: usize, eta: &State) -> f64;

    /// Offsets `z` such that an event at `y` may change the rates at `y + z`.
    fn affected_offsets(&self, dim: usize) -> Vec<Site> {
        Site::ball(dim, self.interaction_radius())
    }

    /// Closed form of `sup_{alpha <= eta} b(x, alpha)`, or an upper bound on
    /// it that is itself non-decreasing in `eta`, when the model knows one.
    fn monotone_birth_bound(&self, _x: usize, _eta: &State) -> Option<f64> {
        None
    }

    /// A kernel `a` for which the Lipschitz-type conditions on `b` and `d`
    /// hold for all configurations with occupancies at most
    /// `occupancy_bound`.
    fn dominating_kernel(&self, _dim: usize, _occupancy_bound: u32) -> Option<FiniteKernel> {
        None
    }

    /// Largest occupancy reachable from configurations bounded by it
    /// (`Some(1)` for spin systems on `{0, 1}`).
    fn occupancy_ceiling(&self) -> Option<u32> {
        None
    }
}

impl<M: RateModel + ?Sized> RateModel for Arc<M> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn interaction_radius(&self) -> u32 {
        (**self).interaction_radius()
    }
    #[inline]
    fn birth(&self, x: usize, eta: &State) -> f64 {
        (**self).birth(x, eta)
    }
    #[inline]
    fn death(&self, x: usize, eta: &State) -> f64 {
        (**self).death(x, eta)
    }
    fn affected_offsets(&self, dim: usize) -> Vec<Site> {
        (**self).affected_offsets(dim)
    }
    fn monotone_birth_bound(&self, x: usize, eta: &State) -> Option<f64> {
        (**self).monotone_birth_bound(x, eta)
    }
    fn dominating_kernel(&self, dim: usize, occupancy_bound: u32) -> Option<FiniteKernel> {
        (**self).dominating_kernel(dim, occupancy_bound)
    }
    fn occupancy_ceiling(&self) -> Option<u32> {
        (**self).occupancy_ceiling()
    }
}

impl<M: RateModel + ?Sized> RateModel for &M {
    fn name(&self) -> String {
        (**self).name()
    }
    fn interaction_radius(&self) -> u32 {
        (**self).interaction_radius()
    }
    #[inline]
    fn birth(&self, x: usize, eta: &State) -> f64 {
        (**self).birth(x, eta)
    }
    #[inline]
    fn death(&self, x: usize, eta: &State) -> f64 {
        (**self).death(x, eta)
    }
    fn affected_offsets(&self, dim: usize) -> Vec<Site> {
        (**self).affected_offsets(dim)
    }
    fn monotone_birth_bound(&self, x: usize, eta: &State) -> Option<f64> {
        (**self).monotone_birth_bound(x, eta)
    }
    fn dominating_kernel(&self, dim: usize, occupancy_bound: u32) -> Option<FiniteKernel> {
        (**self).dominating_kernel(dim, occupancy_bound)
    }
    fn occupancy_ceiling(&self) -> Option<u32> {
        (**self).occupancy_ceiling()
    }
}

/// Layout for `window` wide enough for every model in `models`.
pub fn layout_for(
    window: &Window,
    models: &[&dyn RateModel],
) -> Result<Arc<Layout>, LatticeError> {
    let margin = models
        .iter()
        .map(|m| m.interaction_radius())
        .max()
        .unwrap_or(0)
        .max(1);
    Layout::new(window, margin)
}

/// `(b(x, eta), d(x, eta))` evaluated on a sparse configuration.
pub fn rates_at(
    model: &dyn RateModel,
    x: &Site,
    config: &Configuration,
) -> Result<(f64, f64), LatticeError> {
    let layout = layout_for(config.window(), &[model])?;
    let state = State::from_configuration(layout.clone(), config)?;
    let idx = layout
        .index_of(x)
        .filter(|&i| layout.is_active(i))
        .ok_or(LatticeError::OutsideWindow(*x))?;
    Ok((model.birth(idx, &state), model.death(idx, &state)))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::rng::{NoiseStream, StreamKey};

    pub fn s(c: &[i32]) -> Site {
        Site::new(c).unwrap()
    }

    pub fn conf(window: &Arc<Window>, counts: &[(&[i32], u32)]) -> Configuration {
        Configuration::from_counts(window.clone(), counts.iter().map(|(c, n)| (s(c), *n)))
            .unwrap()
    }

    /// Random state on the layout with occupancies in `0..=max`.
    pub fn random_state(layout: &Arc<Layout>, max: u32, seed: u64) -> State {
        let mut rng = NoiseStream::new(seed, StreamKey::clock(layout.dim(), 0)).rng();
        let mut st = State::empty(layout.clone());
        for &i in layout.active() {
            // sparse-ish: half the sites empty
            if rng.uniform() < 0.5 {
                st.set(i, (rng.next_u64() % (max as u64 + 1)) as u32);
            }
        }
        st
    }

    /// Checks the two Lipschitz-type conditions at every active site for the
    /// pair `(xi, eta)`, with the kernel `a`.
    pub fn lipschitz_holds(model: &dyn RateModel, a: &FiniteKernel, xi: &State, eta: &State) -> bool {
        let layout = xi.layout();
        layout.active().iter().all(|&x| {
            if xi.at(x) < eta.at(x) {
                return true;
            }
            let dist: f64 = layout
                .active()
                .iter()
                .map(|&y| {
                    let z = layout.site_of(x).sub(&layout.site_of(y));
                    a.value(&z) * (xi.at(y) as f64 - eta.at(y) as f64).abs()
                })
                .sum();
            let db = model.birth(x, xi) - model.birth(x, eta);
            let dd = model.death(x, xi) - model.death(x, eta);
            db <= dist + 1e-9 && dd >= -dist - 1e-9
        })
    }
}
