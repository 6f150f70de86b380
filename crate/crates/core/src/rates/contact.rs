use crate::error::ModelError;
use crate::kernel::FiniteKernel;
use crate::lattice::State;

use super::RateModel;

/// Contact process: `b(x, eta) = I{eta(x) = 0} lambda sum_{|y-x|_1 <= 1} eta(y)`,
/// `d(x, eta) = I{eta(x) > 0}`.
///
/// The neighbour sum includes `y = x`; the indicator makes that term vanish.
/// Started from a `{0, 1}` configuration the process stays in `{0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactModel {
    lambda: f64,
}

impl ContactModel {
    pub fn new(lambda: f64) -> Result<Self, ModelError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(ModelError::Parameter(format!(
                "lambda must be > 0, got {lambda}"
            )));
        }
        Ok(ContactModel { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl RateModel for ContactModel {
    fn name(&self) -> String {
        "contact".into()
    }

    fn interaction_radius(&self) -> u32 {
        1
    }

    #[inline]
    fn birth(&self, x: usize, eta: &State) -> f64 {
        if eta.at(x) != 0 {
            return 0.0;
        }
        self.lambda * eta.nearest_sum(x) as f64
    }

    #[inline]
    fn death(&self, x: usize, eta: &State) -> f64 {
        if eta.at(x) > 0 {
            1.0
        } else {
            0.0
        }
    }

    /// `sup_{alpha <= eta} b(x, alpha) = lambda sum_{y ~ x} eta(y)`, attained
    /// at `alpha = eta` off `x` and `alpha(x) = 0`.
    fn monotone_birth_bound(&self, x: usize, eta: &State) -> Option<f64> {
        Some(self.lambda * (eta.nearest_sum(x) - eta.at(x) as u64) as f64)
    }

    fn dominating_kernel(&self, dim: usize, _occupancy_bound: u32) -> Option<FiniteKernel> {
        FiniteKernel::indicator(dim, self.lambda, 1).ok()
    }

    fn occupancy_ceiling(&self) -> Option<u32> {
        Some(1)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::lattice::Window;
    use crate::rates::testutil::*;
    use crate::rates::{layout_for, rates_at};

    #[test]
    fn neighbour_infection() {
        let w = Arc::new(Window::ball(1, 3).unwrap());
        let m = ContactModel::new(2.0).unwrap();
        let c = conf(&w, &[(&[0], 1)]);
        assert_eq!(rates_at(&m, &s(&[1]), &c).unwrap(), (2.0, 0.0));
        assert_eq!(rates_at(&m, &s(&[0]), &c).unwrap(), (0.0, 1.0));
        assert_eq!(rates_at(&m, &s(&[2]), &c).unwrap(), (0.0, 0.0));

        let m1 = ContactModel::new(1.0).unwrap();
        let c2 = conf(&w, &[(&[0], 1), (&[1], 1)]);
        assert_eq!(rates_at(&m1, &s(&[2]), &c2).unwrap().0, 1.0);
        assert_eq!(rates_at(&m1, &s(&[0]), &c2).unwrap().1, 1.0);
        assert_eq!(rates_at(&m1, &s(&[-1]), &c2).unwrap().0, 1.0);
    }

    #[test]
    fn empty_is_absorbing() {
        let w = Arc::new(Window::ball(2, 2).unwrap());
        let m = ContactModel::new(3.0).unwrap();
        let c = conf(&w, &[]);
        for x in w.sites() {
            assert_eq!(rates_at(&m, x, &c).unwrap(), (0.0, 0.0));
        }
    }

    #[test]
    fn two_dimensional_neighbours() {
        let w = Arc::new(Window::ball(2, 3).unwrap());
        let m = ContactModel::new(0.5).unwrap();
        let c = conf(&w, &[(&[0, 1], 1), (&[1, 0], 1), (&[-1, -1], 1)]);
        // origin sees (0,1) and (1,0)
        assert_eq!(rates_at(&m, &s(&[0, 0]), &c).unwrap().0, 1.0);
        assert_eq!(rates_at(&m, &s(&[1, 1]), &c).unwrap().0, 1.0);
    }

    #[test]
    fn lipschitz_conditions() {
        let w = Window::ball(1, 6).unwrap();
        let m = ContactModel::new(1.5).unwrap();
        let layout = layout_for(&w, &[&m]).unwrap();
        let a = m.dominating_kernel(1, 1).unwrap();
        for seed in 0..10_000u64 {
            let xi = random_state(&layout, 1, 2 * seed);
            let eta = random_state(&layout, 1, 2 * seed + 1);
            assert!(lipschitz_holds(&m, &a, &xi, &eta), "seed {seed}");
        }
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        assert!(ContactModel::new(0.0).is_err());
        assert!(ContactModel::new(f64::NAN).is_err());
    }
}
