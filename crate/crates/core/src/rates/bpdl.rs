use crate::error::ModelError;
use crate::kernel::FiniteKernel;
use crate::lattice::{Site, State};

use super::RateModel;

/// Discrete spatial logistic (Bolker–Pacala–Dieckmann–Law) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BpdlParams {
    /// Immigration rate.
    pub b0: f64,
    /// Intrinsic per-capita mortality.
    pub m: f64,
    /// Dispersal kernel.
    pub a_plus: FiniteKernel,
    /// Competition kernel.
    pub a_minus: FiniteKernel,
}

/// `b(x, eta) = b0 + sum_y a+(x-y) eta(y)`,
/// `d(x, eta) = eta(x) (m + sum_y a-(x-y) eta(y))`.
#[derive(Debug, Clone)]
pub struct BpdlModel {
    params: BpdlParams,
    radius: u32,
}

impl BpdlModel {
    pub fn new(params: BpdlParams) -> Result<Self, ModelError> {
        let BpdlParams {
            b0,
            m,
            a_plus,
            a_minus,
        } = &params;
        if !(b0.is_finite() && *b0 >= 0.0) {
            return Err(ModelError::Parameter(format!("b0 must be >= 0, got {b0}")));
        }
        if !(m.is_finite() && *m >= 0.0) {
            return Err(ModelError::Parameter(format!("m must be >= 0, got {m}")));
        }
        if a_plus.dim() != a_minus.dim() {
            return Err(ModelError::Parameter(
                "dispersal and competition kernels differ in dimension".into(),
            ));
        }
        let radius = a_plus.radius().max(a_minus.radius());
        Ok(BpdlModel { params, radius })
    }

    pub fn params(&self) -> &BpdlParams {
        &self.params
    }
}

impl RateModel for BpdlModel {
    fn name(&self) -> String {
        "bpdl".into()
    }

    fn interaction_radius(&self) -> u32 {
        self.radius
    }

    #[inline]
    fn birth(&self, x: usize, eta: &State) -> f64 {
        self.params.b0 + self.params.a_plus.convolve(x, eta)
    }

    #[inline]
    fn death(&self, x: usize, eta: &State) -> f64 {
        let n = eta.at(x);
        if n == 0 {
            return 0.0;
        }
        n as f64 * (self.params.m + self.params.a_minus.convolve(x, eta))
    }

    fn affected_offsets(&self, _dim: usize) -> Vec<Site> {
        let mut v: Vec<Site> = self
            .params
            .a_plus
            .entries()
            .iter()
            .chain(self.params.a_minus.entries())
            .map(|(z, _)| *z)
            .chain(std::iter::once(Site::origin(self.params.a_plus.dim())))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Birth is affine and non-decreasing in `eta`, so the supremum over
    /// `alpha <= eta` is attained at `eta`.
    fn monotone_birth_bound(&self, x: usize, eta: &State) -> Option<f64> {
        Some(self.birth(x, eta))
    }

    /// For `xi(x) >= eta(x)`,
    /// `d(x, xi) - d(x, eta) >= -eta(x) sum_{z != 0} a-(z) |xi - eta|(x - z)`,
    /// so `a+ + M a-|_{z != 0}` dominates when occupancies are at most `M`.
    fn dominating_kernel(&self, _dim: usize, occupancy_bound: u32) -> Option<FiniteKernel> {
        Some(
            self.params
                .a_plus
                .plus(&self.params.a_minus.off_origin().scaled(occupancy_bound as f64)),
        )
    }
}
