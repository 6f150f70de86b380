use std::fmt;
use std::sync::Arc;

use crate::error::ModelError;
use crate::kernel::FiniteKernel;
use crate::lattice::{Site, State};

use super::RateModel;

/// Pure-birth majorant `bbar(x, eta) = sup_{alpha <= eta} b(x, alpha)` with
/// zero death rate.
///
/// Models that know a closed form supply it through
/// [`RateModel::monotone_birth_bound`]; otherwise the supremum is found by
/// enumerating every `alpha <= eta` on the interaction neighbourhood of `x`,
/// refusing when that would take more than `probe_cap` evaluations.
#[derive(Clone)]
pub struct PureBirthEnvelope {
    inner: Arc<dyn RateModel>,
    probe_cap: u64,
}

pub fn pure_birth_envelope(model: Arc<dyn RateModel>, probe_cap: u64) -> PureBirthEnvelope {
    PureBirthEnvelope {
        inner: model,
        probe_cap,
    }
}

impl PureBirthEnvelope {
    pub fn inner(&self) -> &Arc<dyn RateModel> {
        &self.inner
    }

    pub fn try_birth(&self, x: usize, eta: &State) -> Result<f64, ModelError> {
        if let Some(b) = self.inner.monotone_birth_bound(x, eta) {
            return Ok(b);
        }
        self.brute_force(x, eta)
    }

    fn brute_force(&self, x: usize, eta: &State) -> Result<f64, ModelError> {
        let layout = eta.layout();
        let offsets = Site::ball(layout.dim(), self.inner.interaction_radius());
        let hood: Vec<usize> = layout
            .active_neighborhood(x, &offsets)
            .into_iter()
            .filter(|&y| eta.at(y) > 0)
            .collect();
        let needed = hood
            .iter()
            .try_fold(1u128, |acc, &y| acc.checked_mul(eta.at(y) as u128 + 1))
            .unwrap_or(u128::MAX);
        if needed > self.probe_cap as u128 {
            return Err(ModelError::ProbeCapExceeded {
                site: layout.site_of(x),
                needed,
                cap: self.probe_cap,
            });
        }
        let mut alpha = eta.clone();
        for &y in &hood {
            alpha.set(y, 0);
        }
        let mut best = self.inner.birth(x, &alpha);
        // odometer over alpha(y) in 0..=eta(y)
        loop {
            let mut i = 0;
            loop {
                if i == hood.len() {
                    return Ok(best);
                }
                let y = hood[i];
                if alpha.at(y) < eta.at(y) {
                    alpha.increment(y);
                    break;
                }
                alpha.set(y, 0);
                i += 1;
            }
            best = best.max(self.inner.birth(x, &alpha));
        }
    }
}

impl fmt::Debug for PureBirthEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PureBirthEnvelope")
            .field("inner", &self.inner.name())
            .field("probe_cap", &self.probe_cap)
            .finish()
    }
}

impl RateModel for PureBirthEnvelope {
    fn name(&self) -> String {
        format!("envelope({})", self.inner.name())
    }

    fn interaction_radius(&self) -> u32 {
        self.inner.interaction_radius()
    }

    /// NaN when the probe cap refuses; engines reject NaN rates.
    fn birth(&self, x: usize, eta: &State) -> f64 {
        self.try_birth(x, eta).unwrap_or(f64::NAN)
    }

    fn death(&self, _x: usize, _eta: &State) -> f64 {
        0.0
    }

    fn affected_offsets(&self, dim: usize) -> Vec<Site> {
        self.inner.affected_offsets(dim)
    }

    fn monotone_birth_bound(&self, x: usize, eta: &State) -> Option<f64> {
        self.try_birth(x, eta).ok()
    }
}

/// Births at sites holding `cap` or more particles are suppressed.
#[derive(Clone)]
pub struct CapSuppressed<M> {
    inner: M,
    cap: u32,
}

impl<M: RateModel> CapSuppressed<M> {
    pub fn new(inner: M, cap: u32) -> Self {
        CapSuppressed { inner, cap }
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: RateModel> fmt::Debug for CapSuppressed<M> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CapSuppressed({}, {})", self.inner.name(), self.cap)
    }
}

impl<M: RateModel> RateModel for CapSuppressed<M> {
    fn name(&self) -> String {
        format!("{}@cap{}", self.inner.name(), self.cap)
    }

    fn interaction_radius(&self) -> u32 {
        self.inner.interaction_radius()
    }

    #[inline]
    fn birth(&self, x: usize, eta: &State) -> f64 {
        if eta.at(x) >= self.cap {
            0.0
        } else {
            self.inner.birth(x, eta)
        }
    }

    #[inline]
    fn death(&self, x: usize, eta: &State) -> f64 {
        self.inner.death(x, eta)
    }

    fn affected_offsets(&self, dim: usize) -> Vec<Site> {
        self.inner.affected_offsets(dim)
    }

    /// The inner bound dominates the capped birth rate and stays monotone.
    fn monotone_birth_bound(&self, x: usize, eta: &State) -> Option<f64> {
        self.inner.monotone_birth_bound(x, eta)
    }

    /// Suppression only lowers `b(x, xi)` when `xi(x) >= cap`, and then
    /// `b(x, xi) = 0`, so the inner kernel still dominates.
    fn dominating_kernel(&self, dim: usize, occupancy_bound: u32) -> Option<FiniteKernel> {
        self.inner
            .dominating_kernel(dim, occupancy_bound.min(self.cap))
    }

    fn occupancy_ceiling(&self) -> Option<u32> {
        Some(self.inner.occupancy_ceiling().map_or(self.cap, |c| c.min(self.cap)))
    }
}

/// `b = d = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Frozen;

impl RateModel for Frozen {
    fn name(&self) -> String {
        "frozen".into()
    }

    fn interaction_radius(&self) -> u32 {
        0
    }

    fn birth(&self, _x: usize, _eta: &State) -> f64 {
        0.0
    }

    fn death(&self, _x: usize, _eta: &State) -> f64 {
        0.0
    }

    fn monotone_birth_bound(&self, _x: usize, _eta: &State) -> Option<f64> {
        Some(0.0)
    }

    fn dominating_kernel(&self, dim: usize, _occupancy_bound: u32) -> Option<FiniteKernel> {
        Some(FiniteKernel::zero(dim))
    }
}

pub type RateFn = Arc<dyn Fn(usize, &State) -> f64 + Send + Sync>;

/// Rates given as closures over `(grid index, state)`.
#[derive(Clone)]
pub struct CustomModel {
    pub name: String,
    pub radius: u32,
    pub birth: RateFn,
    pub death: RateFn,
    pub kernel: Option<FiniteKernel>,
}

impl fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomModel({}, radius {})", self.name, self.radius)
    }
}

impl RateModel for CustomModel {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn interaction_radius(&self) -> u32 {
        self.radius
    }

    fn birth(&self, x: usize, eta: &State) -> f64 {
        (self.birth)(x, eta)
    }

    fn death(&self, x: usize, eta: &State) -> f64 {
        (self.death)(x, eta)
    }

    fn dominating_kernel(&self, _dim: usize, _occupancy_bound: u32) -> Option<FiniteKernel> {
        self.kernel.clone()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::lattice::{Layout, Window};
    use crate::rates::testutil::*;
    use crate::rates::{layout_for, BpdlModel, BpdlParams, ContactModel};

    fn bpdl() -> BpdlModel {
        BpdlModel::new(BpdlParams {
            b0: 1.0,
            m: 1.0,
            a_plus: FiniteKernel::indicator(1, 0.3, 1).unwrap(),
            a_minus: FiniteKernel::indicator(1, 0.2, 1).unwrap(),
        })
        .unwrap()
    }

    /// The contact model hidden behind closures, so the envelope must brute
    /// force it.
    fn opaque_contact(lambda: f64) -> CustomModel {
        let c = ContactModel::new(lambda).unwrap();
        CustomModel {
            name: "opaque-contact".into(),
            radius: 1,
            birth: Arc::new(move |x, eta| c.birth(x, eta)),
            death: Arc::new(move |x, eta| c.death(x, eta)),
            kernel: None,
        }
    }

    fn layout() -> Arc<Layout> {
        layout_for(&Window::ball(1, 5).unwrap(), &[&bpdl()]).unwrap()
    }

    #[test]
    fn affine_birth_is_its_own_envelope() {
        let m: Arc<dyn RateModel> = Arc::new(bpdl());
        let env = pure_birth_envelope(m.clone(), 0);
        let l = layout();
        for seed in 0..200 {
            let st = random_state(&l, 4, seed);
            for &x in l.active() {
                assert_eq!(env.birth(x, &st), m.birth(x, &st));
                assert_eq!(env.death(x, &st), 0.0);
            }
        }
    }

    #[test]
    fn contact_envelope_drops_indicator() {
        let env = pure_birth_envelope(Arc::new(opaque_contact(1.5)), 1 << 12);
        let closed = ContactModel::new(1.5).unwrap();
        let l = layout();
        for seed in 0..200 {
            let st = random_state(&l, 1, seed);
            for &x in l.active() {
                let want = 1.5 * (st.nearest_sum(x) - st.at(x) as u64) as f64;
                assert_eq!(env.try_birth(x, &st).unwrap(), want);
                assert_eq!(closed.monotone_birth_bound(x, &st), Some(want));
            }
        }
    }

    #[test]
    fn empty_configuration_envelope() {
        let env = pure_birth_envelope(Arc::new(opaque_contact(1.0)), 1);
        let m = bpdl();
        let benv = pure_birth_envelope(Arc::new(bpdl()), 1);
        let st = State::empty(layout());
        for &x in st.layout().active() {
            assert_eq!(env.try_birth(x, &st).unwrap(), 0.0);
            assert_eq!(benv.birth(x, &st), m.birth(x, &st));
        }
    }

    #[test]
    fn probe_cap_refusal() {
        let env = pure_birth_envelope(Arc::new(opaque_contact(1.0)), 7);
        let w = Arc::new(Window::ball(1, 5).unwrap());
        let c = conf(&w, &[(&[-1], 1), (&[0], 1), (&[1], 1)]);
        let st = State::from_configuration(layout(), &c).unwrap();
        let x = st.layout().index_of(&s(&[0])).unwrap();
        assert!(matches!(
            env.try_birth(x, &st),
            Err(ModelError::ProbeCapExceeded { needed: 8, cap: 7, .. })
        ));
        assert!(env.birth(x, &st).is_nan());
        let roomy = pure_birth_envelope(Arc::new(opaque_contact(1.0)), 8);
        assert_eq!(roomy.try_birth(x, &st).unwrap(), 2.0);
    }

    #[test]
    fn cap_suppression() {
        let m = CapSuppressed::new(bpdl(), 2);
        let w = Arc::new(Window::ball(1, 5).unwrap());
        let c = conf(&w, &[(&[0], 2), (&[1], 1)]);
        assert_eq!(crate::rates::rates_at(&m, &s(&[0]), &c).unwrap().0, 0.0);
        assert!((crate::rates::rates_at(&m, &s(&[1]), &c).unwrap().0 - 1.9).abs() < 1e-12);
        assert_eq!(m.occupancy_ceiling(), Some(2));
    }

    #[test]
    fn frozen_has_no_events() {
        let st = random_state(&layout(), 3, 9);
        for &x in st.layout().active() {
            assert_eq!((Frozen.birth(x, &st), Frozen.death(x, &st)), (0.0, 0.0));
        }
    }

    proptest! {
        #[test]
        fn envelope_is_monotone(seed in 0u64..10_000, bump in 0usize..11) {
            let env = pure_birth_envelope(Arc::new(opaque_contact(0.8)), 1 << 12);
            let l = layout();
            let st = random_state(&l, 1, seed);
            let mut up = st.clone();
            up.increment(l.active()[bump]);
            for &x in l.active() {
                prop_assert!(env.try_birth(x, &st).unwrap() <= env.try_birth(x, &up).unwrap());
            }
        }
    }
}
