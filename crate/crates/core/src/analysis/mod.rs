//! Generator evaluation, martingale residuals, Lyapunov drift and
//! occupation measures.

mod drift;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

pub use drift::{
    bpdl_drift_bound, drift_check, occupation_measure, occupation_csv, sample_configurations,
    DriftFit, DriftReport, DriftRow, LyapunovSpec, OccupationRow, default_c2_grid,
};

use crate::engine::{try_replicates, Gillespie, Simulator};
use crate::error::{EngineError, LatticeError};
use crate::lattice::{Configuration, Site, State, Window};
use crate::rates::{layout_for, RateModel};
use crate::stats::MeanSe;

pub type StateFn = Arc<dyn Fn(&State) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Form {
    Constant(f64),
    /// `sum_i c_i eta(x_i)`.
    Linear(Vec<(Site, f64)>),
    General(StateFn),
}

/// An observable depending only on sites with `|x|_1 <= support_radius`.
#[derive(Clone)]
pub struct CylindricalFunction {
    name: String,
    support_radius: u32,
    increment_bound: f64,
    form: Form,
}

impl fmt::Debug for CylindricalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CylindricalFunction({}, R = {})", self.name, self.support_radius)
    }
}

impl CylindricalFunction {
    pub fn constant(c: f64) -> Self {
        CylindricalFunction {
            name: format!("const({c})"),
            support_radius: 0,
            increment_bound: 0.0,
            form: Form::Constant(c),
        }
    }

    /// `min(eta(x), k)`.
    pub fn truncated_count(x: Site, k: u32) -> Self {
        CylindricalFunction {
            name: format!("min(eta{x},{k})"),
            support_radius: x.norm1() as u32,
            increment_bound: 1.0,
            form: Form::General(Arc::new(move |st: &State| st.get(&x).min(k) as f64)),
        }
    }

    /// `sum_i c_i eta(x_i)`.
    pub fn linear(name: impl Into<String>, terms: Vec<(Site, f64)>) -> Self {
        let support_radius = terms.iter().map(|(x, _)| x.norm1() as u32).max().unwrap_or(0);
        let increment_bound = terms.iter().map(|(_, c)| c.abs()).fold(0.0, f64::max);
        CylindricalFunction {
            name: name.into(),
            support_radius,
            increment_bound,
            form: Form::Linear(terms),
        }
    }

    /// `V(eta) = sum_{x in window} v(x) eta(x)`.
    pub fn weighted_mass(window: &Window, v: &dyn Fn(&Site) -> f64) -> Self {
        Self::linear("V", window.sites().iter().map(|x| (*x, v(x))).collect())
    }

    /// Arbitrary evaluator; `support_radius` and `increment_bound` are the
    /// caller's claims (see [`CylindricalFunction::probe_locality`]).
    pub fn general(
        name: impl Into<String>,
        support_radius: u32,
        increment_bound: f64,
        f: impl Fn(&State) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CylindricalFunction {
            name: name.into(),
            support_radius,
            increment_bound,
            form: Form::General(Arc::new(f)),
        }
    }

    /// `sum_i c_i F_i`.
    pub fn combination(terms: Vec<(f64, CylindricalFunction)>) -> Self {
        let support_radius = terms.iter().map(|(_, f)| f.support_radius).max().unwrap_or(0);
        let increment_bound = terms.iter().map(|(c, f)| c.abs() * f.increment_bound).sum();
        let name = terms
            .iter()
            .map(|(c, f)| format!("{c}*{}", f.name))
            .collect::<Vec<_>>()
            .join("+");
        CylindricalFunction {
            name,
            support_radius,
            increment_bound,
            form: Form::General(Arc::new(move |st: &State| {
                terms.iter().map(|(c, f)| c * f.eval(st)).sum()
            })),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn support_radius(&self) -> u32 {
        self.support_radius
    }

    pub fn increment_bound(&self) -> f64 {
        self.increment_bound
    }

    pub fn eval(&self, st: &State) -> f64 {
        match &self.form {
            Form::Constant(c) => *c,
            Form::Linear(terms) => terms.iter().map(|(x, c)| c * st.get(x) as f64).sum(),
            Form::General(f) => f(st),
        }
    }

    pub fn eval_config(&self, c: &Configuration) -> Result<f64, LatticeError> {
        let layout = crate::lattice::Layout::new(c.window(), 1)?;
        Ok(self.eval(&State::from_configuration(layout, c)?))
    }

    /// Largest `|F(eta^{+-x}) - F(eta)|` seen over `samples`, together with
    /// whether every increment at a site outside the support ball vanished.
    pub fn probe_locality(&self, samples: &[State]) -> (f64, bool) {
        let mut worst: f64 = 0.0;
        let mut local = true;
        for st in samples {
            let mut s = st.clone();
            let f0 = self.eval(st);
            let layout = st.layout().clone();
            for &x in layout.active() {
                let inside = layout.site_of(x).norm1() <= self.support_radius as u64;
                s.increment(x);
                let up = self.eval(&s) - f0;
                s.decrement(x);
                let mut down = 0.0;
                if s.at(x) > 0 {
                    s.decrement(x);
                    down = self.eval(&s) - f0;
                    s.increment(x);
                }
                worst = worst.max(up.abs()).max(down.abs());
                if !inside && (up != 0.0 || down != 0.0) {
                    local = false;
                }
            }
        }
        (worst, local)
    }
}

fn generator_terms(f: &CylindricalFunction, eta: &State, model: &dyn RateModel, all: bool) -> f64 {
    let layout = eta.layout();
    match &f.form {
        Form::Constant(_) => 0.0,
        Form::Linear(terms) => terms
            .iter()
            .filter_map(|(x, c)| {
                layout
                    .index_of(x)
                    .filter(|&i| layout.is_active(i))
                    .map(|i| c * (model.birth(i, eta) - model.death(i, eta)))
            })
            .sum(),
        Form::General(_) => {
            let f0 = f.eval(eta);
            let mut s = eta.clone();
            let mut acc = 0.0;
            for &x in layout.active() {
                if !all && layout.site_of(x).norm1() > f.support_radius as u64 {
                    continue;
                }
                let b = model.birth(x, eta);
                if b != 0.0 {
                    s.increment(x);
                    acc += b * (f.eval(&s) - f0);
                    s.decrement(x);
                }
                if s.at(x) > 0 {
                    let d = model.death(x, eta);
                    if d != 0.0 {
                        s.decrement(x);
                        acc += d * (f.eval(&s) - f0);
                        s.increment(x);
                    }
                }
            }
            acc
        }
    }
}

/// `LF(eta) = sum_x b(x, eta)[F(eta^{+x}) - F(eta)] + d(x, eta)[F(eta^{-x}) - F(eta)]`.
///
/// Only sites inside the support ball of `F` are visited; elsewhere the
/// differences vanish.
pub fn eval_generator(f: &CylindricalFunction, eta: &State, model: &dyn RateModel) -> f64 {
    generator_terms(f, eta, model, false)
}

/// [`eval_generator`] summed over every window site.
pub fn eval_generator_full(f: &CylindricalFunction, eta: &State, model: &dyn RateModel) -> f64 {
    generator_terms(f, eta, model, true)
}

/// Monte-Carlo estimate of `E[F(eta_t) - F(eta_0) - int_0^t LF(eta_s) ds]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub t: f64,
    pub replicates: u64,
    pub residual: f64,
    pub stderr: f64,
}

impl Residual {
    /// `|residual| <= 3 stderr`, or exactly zero.
    pub fn passes(&self) -> bool {
        self.residual == 0.0 || self.residual.abs() <= 3.0 * self.stderr
    }
}

/// `F(eta_t) - F(eta_0) - int_0^t LF(eta_s) ds` along one trajectory, the
/// integral taken exactly over the holding intervals.
pub fn residual_sample<M: RateModel>(
    f: &CylindricalFunction,
    model: &M,
    eta0: State,
    t: f64,
    seed: u64,
    replicate: u64,
    max_events: u64,
) -> Result<f64, EngineError> {
    let f0 = f.eval(&eta0);
    let mut sim = Gillespie::new(model, eta0, seed, replicate, max_events)?;
    let mut lf = eval_generator(f, sim.state(), model);
    let mut integral = 0.0;
    let mut last = 0.0;
    while let Some(e) = sim.next_event(t)? {
        integral += lf * (e.time - last);
        last = e.time;
        lf = eval_generator(f, sim.state(), model);
    }
    integral += lf * (t - last);
    Ok(f.eval(sim.state()) - f0 - integral)
}

/// Replicate mean of [`residual_sample`] with its standard error.
#[allow(clippy::too_many_arguments)]
pub fn martingale_residual<M: RateModel>(
    f: &CylindricalFunction,
    model: &M,
    window: &Window,
    eta0: &Configuration,
    t: f64,
    replicates: u64,
    seed: u64,
    max_events: u64,
) -> Result<Residual, EngineError> {
    let layout = layout_for(window, &[model])?;
    let st = State::from_configuration(layout, eta0)?;
    let xs = try_replicates(replicates, |r| {
        residual_sample(f, model, st.clone(), t, seed, r, max_events)
    })?;
    let m = MeanSe::of(&xs);
    Ok(Residual {
        t,
        replicates,
        residual: m.mean,
        stderr: m.se,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::kernel::FiniteKernel;
    use crate::oracle::{build_generator, CappedStateSpace};
    use crate::rates::testutil::random_state;
    use crate::rates::{BpdlModel, BpdlParams, CapSuppressed, ContactModel};

    fn s(c: &[i32]) -> Site {
        Site::new(c).unwrap()
    }

    fn bpdl(ap: f64, am: f64, k_minus: u32) -> BpdlModel {
        BpdlModel::new(BpdlParams {
            b0: 1.0,
            m: 1.0,
            a_plus: FiniteKernel::indicator(1, ap, 1).unwrap(),
            a_minus: FiniteKernel::indicator(1, am, k_minus).unwrap(),
        })
        .unwrap()
    }

    fn product01() -> CylindricalFunction {
        CylindricalFunction::general("eta0*eta1", 1, f64::INFINITY, |st| {
            st.get(&Site::new(&[0]).unwrap()) as f64 * st.get(&Site::new(&[1]).unwrap()) as f64
        })
    }

    #[test]
    fn constant_has_zero_generator() {
        let w = Window::ball(1, 4).unwrap();
        let m = bpdl(0.3, 0.2, 1);
        let l = layout_for(&w, &[&m]).unwrap();
        for seed in 0..50 {
            let st = random_state(&l, 4, seed);
            assert_eq!(eval_generator(&CylindricalFunction::constant(2.5), &st, &m), 0.0);
            assert_eq!(eval_generator_full(&CylindricalFunction::constant(2.5), &st, &m), 0.0);
        }
    }

    #[test]
    fn contact_neighbour_example() {
        let w = Arc::new(Window::ball(1, 4).unwrap());
        let m = ContactModel::new(1.7).unwrap();
        let c = Configuration::from_counts(w.clone(), [(s(&[1]), 1)]).unwrap();
        let st = State::from_configuration(layout_for(&w, &[&m]).unwrap(), &c).unwrap();
        let f = CylindricalFunction::truncated_count(Site::origin(1), 100);
        assert_eq!(eval_generator(&f, &st, &m), 1.7);
    }

    #[test]
    fn one_site_bpdl_example() {
        let w = Arc::new(Window::ball(1, 0).unwrap());
        let m = bpdl(0.0, 0.0, 0);
        let c = Configuration::point_mass(w.clone(), 1).unwrap();
        let st = State::from_configuration(layout_for(&w, &[&m]).unwrap(), &c).unwrap();
        let f = CylindricalFunction::truncated_count(Site::origin(1), 10);
        assert_eq!(eval_generator(&f, &st, &m), 0.0);
    }

    #[test]
    fn local_and_full_sums_agree() {
        let w = Window::ball(1, 6).unwrap();
        let m = bpdl(0.3, 0.2, 1);
        let l = layout_for(&w, &[&m]).unwrap();
        let fs = [
            CylindricalFunction::truncated_count(s(&[2]), 3),
            product01(),
            CylindricalFunction::linear("lin", vec![(s(&[0]), 1.0), (s(&[-3]), 0.5)]),
        ];
        let samples: Vec<State> = (0..50).map(|k| random_state(&l, 3, k)).collect();
        for f in &fs {
            let (_, local) = f.probe_locality(&samples);
            assert!(local, "{f:?}");
            for st in &samples {
                let a = eval_generator(f, st, &m);
                let b = eval_generator_full(f, st, &m);
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{f:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn increment_probe_finds_bounds() {
        let w = Window::ball(1, 3).unwrap();
        let l = layout_for(&w, &[&Frozen]).unwrap();
        let samples: Vec<State> = (0..20).map(|k| random_state(&l, 5, k)).collect();
        let f = CylindricalFunction::truncated_count(Site::origin(1), 2);
        let (worst, local) = f.probe_locality(&samples);
        assert!(worst <= f.increment_bound() && local);
        let liar = CylindricalFunction::general("liar", 0, 1.0, |st| st.get(&Site::new(&[2]).unwrap()) as f64);
        assert!(!liar.probe_locality(&samples).1);
    }

    use crate::rates::Frozen;

    proptest! {
        #[test]
        fn generator_is_linear(seed in 0u64..10_000, c1 in -3.0f64..3.0, c2 in -3.0f64..3.0) {
            let w = Window::ball(1, 4).unwrap();
            let m = bpdl(0.3, 0.2, 1);
            let l = layout_for(&w, &[&m]).unwrap();
            let st = random_state(&l, 4, seed);
            let f = CylindricalFunction::truncated_count(s(&[1]), 3);
            let g = product01();
            let h = CylindricalFunction::combination(vec![(c1, f.clone()), (c2, g.clone())]);
            let lhs = eval_generator(&h, &st, &m);
            let rhs = c1 * eval_generator(&f, &st, &m) + c2 * eval_generator(&g, &st, &m);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn generator_matches_matrix_rows() {
        let w = Arc::new(Window::from_sites(1, &[s(&[0]), s(&[1])]).unwrap());
        let m = CapSuppressed::new(bpdl(0.3, 0.2, 1), 4);
        let space = CappedStateSpace::new(w.clone(), 4).unwrap();
        let q = build_generator(&space, &m).unwrap();
        let layout = layout_for(&w, &[&m]).unwrap();
        let f = product01();
        let fv: Vec<f64> = (0..space.len()).map(|i| f.eval(&space.state(i, &layout))).collect();
        let qf = q.apply(&fv);
        for i in 0..space.len() {
            let lf = eval_generator(&f, &space.state(i, &layout), &m);
            assert!((lf - qf[i]).abs() <= 1e-12, "state {i}: {lf} vs {}", qf[i]);
        }
    }

    #[test]
    fn residual_trivial_cases() {
        let w = Arc::new(Window::ball(1, 3).unwrap());
        let m = ContactModel::new(1.0).unwrap();
        let c = Configuration::point_mass(w.clone(), 1).unwrap();
        let f = CylindricalFunction::truncated_count(Site::origin(1), 10);
        let r0 = martingale_residual(&f, &m, &w, &c, 0.0, 100, 1, 1000).unwrap();
        assert_eq!(r0.residual, 0.0);
        let rc = martingale_residual(&CylindricalFunction::constant(1.0), &m, &w, &c, 2.0, 100, 1, 1000).unwrap();
        assert_eq!((rc.residual, rc.stderr), (0.0, 0.0));
        assert!(rc.passes());
    }

    #[test]
    fn residual_small_battery() {
        let w = Arc::new(Window::ball(1, 4).unwrap());
        let m = ContactModel::new(1.0).unwrap();
        let c = Configuration::point_mass(w.clone(), 1).unwrap();
        let f = CylindricalFunction::truncated_count(Site::origin(1), 10);
        let r = martingale_residual(&f, &m, &w, &c, 1.0, 20_000, 7, 100_000).unwrap();
        assert!(r.passes(), "{r:?}");
    }
}
