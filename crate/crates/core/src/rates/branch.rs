use std::fmt;
use std::sync::Arc;

use crate::error::ModelError;
use crate::kernel::FiniteKernel;
use crate::lattice::State;

use super::RateModel;

/// Occupancies up to which a custom death curve is validated.
const CURVE_CHECK_LIMIT: u32 = 1000;

/// Per-site death rate `g(n)` of the branching model.
#[derive(Clone)]
pub enum DeathCurve {
    /// `g(n) = n`.
    Linear,
    /// `g(n) = n^2`: each particle dies at a rate equal to the site count.
    Square,
    Custom(Arc<dyn Fn(u32) -> f64 + Send + Sync>),
}

impl DeathCurve {
    #[inline(always)]
    pub fn eval(&self, n: u32) -> f64 {
        match self {
            DeathCurve::Linear => n as f64,
            DeathCurve::Square => (n as f64) * (n as f64),
            DeathCurve::Custom(g) => g(n),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            DeathCurve::Linear => "linear",
            DeathCurve::Square => "square",
            DeathCurve::Custom(_) => "custom",
        }
    }

    /// `g(0) = 0`, `g(1) = 1`, `g` non-decreasing and `g(n) >= n`, checked
    /// for `n <= 1000`.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.eval(0) != 0.0 {
            return Err(ModelError::Parameter("g(0) must be 0".into()));
        }
        if self.eval(1) != 1.0 {
            return Err(ModelError::Parameter("g(1) must be 1".into()));
        }
        let mut prev = 0.0;
        for n in 1..=CURVE_CHECK_LIMIT {
            let g = self.eval(n);
            if !g.is_finite() || g < prev {
                return Err(ModelError::Parameter(format!(
                    "g must be finite and non-decreasing (fails at n = {n})"
                )));
            }
            if g < n as f64 {
                return Err(ModelError::Parameter(format!("g(n) >= n fails at n = {n}")));
            }
            prev = g;
        }
        Ok(())
    }
}

impl Default for DeathCurve {
    fn default() -> Self {
        DeathCurve::Square
    }
}

impl fmt::Debug for DeathCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone)]
pub struct BranchLocalParams {
    pub lambda: f64,
    pub g: DeathCurve,
}

/// Branching with local death: every particle reproduces at rate `lambda`
/// onto its own site or a nearest neighbour, and site `x` loses a particle
/// at rate `g(eta(x))`.
///
/// `b(x, eta) = lambda sum_{|y-x|_1 <= 1} eta(y)`, `d(x, eta) = g(eta(x))`.
/// `lambda = 0` is accepted so that the pure-death case can be simulated.
#[derive(Debug, Clone)]
pub struct BranchLocalModel {
    params: BranchLocalParams,
}

impl BranchLocalModel {
    pub fn new(params: BranchLocalParams) -> Result<Self, ModelError> {
        if !(params.lambda.is_finite() && params.lambda >= 0.0) {
            return Err(ModelError::Parameter(format!(
                "lambda must be >= 0, got {}",
                params.lambda
            )));
        }
        params.g.validate()?;
        Ok(BranchLocalModel { params })
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }

    pub fn curve(&self) -> &DeathCurve {
        &self.params.g
    }
}

impl RateModel for BranchLocalModel {
    fn name(&self) -> String {
        format!("branch-local-{}", self.params.g.tag())
    }

    fn interaction_radius(&self) -> u32 {
        1
    }

    #[inline(always)]
    fn birth(&self, x: usize, eta: &State) -> f64 {
        self.params.lambda * eta.nearest_sum(x) as f64
    }

    #[inline(always)]
    fn death(&self, x: usize, eta: &State) -> f64 {
        self.params.g.eval(eta.at(x))
    }

    fn monotone_birth_bound(&self, x: usize, eta: &State) -> Option<f64> {
        Some(self.birth(x, eta))
    }

    /// Death depends on `eta(x)` alone and is non-decreasing, so only the
    /// birth sum needs domination.
    fn dominating_kernel(&self, dim: usize, _occupancy_bound: u32) -> Option<FiniteKernel> {
        if self.params.lambda == 0.0 {
            return Some(FiniteKernel::zero(dim));
        }
        FiniteKernel::indicator(dim, self.params.lambda, 1).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Window;
    use crate::rates::testutil::*;
    use crate::rates::{layout_for, rates_at};

    fn model(lambda: f64, g: DeathCurve) -> BranchLocalModel {
        BranchLocalModel::new(BranchLocalParams { lambda, g }).unwrap()
    }

    #[test]
    fn square_death_curve() {
        let w = Arc::new(Window::ball(1, 2).unwrap());
        let m = model(1.0, DeathCurve::Square);
        let c = conf(&w, &[(&[0], 3)]);
        assert_eq!(rates_at(&m, &s(&[0]), &c).unwrap().1, 9.0);
    }

    #[test]
    fn births_onto_self_and_neighbours() {
        let w = Arc::new(Window::ball(1, 3).unwrap());
        let m = model(0.5, DeathCurve::Square);
        let c = conf(&w, &[(&[0], 1)]);
        for x in [-1, 0, 1] {
            assert_eq!(rates_at(&m, &s(&[x]), &c).unwrap().0, 0.5);
        }
        assert_eq!(rates_at(&m, &s(&[2]), &c).unwrap().0, 0.0);
    }

    #[test]
    fn empty_is_absorbing() {
        let w = Arc::new(Window::ball(2, 2).unwrap());
        let m = model(2.0, DeathCurve::Linear);
        let c = conf(&w, &[]);
        for x in w.sites() {
            assert_eq!(rates_at(&m, x, &c).unwrap(), (0.0, 0.0));
        }
    }

    #[test]
    fn curve_validation() {
        assert!(DeathCurve::Linear.validate().is_ok());
        assert!(DeathCurve::Square.validate().is_ok());
        let bad = DeathCurve::Custom(Arc::new(|n| (n as f64).sqrt()));
        assert!(BranchLocalModel::new(BranchLocalParams {
            lambda: 1.0,
            g: bad
        })
        .is_err());
        let shifted = DeathCurve::Custom(Arc::new(|n| n as f64 + 1.0));
        assert!(shifted.validate().is_err());
        assert!(BranchLocalModel::new(BranchLocalParams {
            lambda: -0.1,
            g: DeathCurve::Square
        })
        .is_err());
    }

    #[test]
    fn lipschitz_conditions() {
        let w = Window::ball(1, 6).unwrap();
        for g in [DeathCurve::Linear, DeathCurve::Square] {
            let m = model(0.7, g);
            let layout = layout_for(&w, &[&m]).unwrap();
            let a = m.dominating_kernel(1, 0).unwrap();
            for seed in 0..10_000u64 {
                let xi = random_state(&layout, 4, 2 * seed);
                let eta = random_state(&layout, 4, 2 * seed + 1);
                assert!(lipschitz_holds(&m, &a, &xi, &eta), "seed {seed}");
            }
        }
    }
}
