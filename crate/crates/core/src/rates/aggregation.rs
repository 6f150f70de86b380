use crate::error::ModelError;
use crate::kernel::FiniteKernel;
use crate::lattice::{Site, State};

use super::RateModel;

#[derive(Debug, Clone, PartialEq)]
pub enum BirthMode {
    /// `b(x, eta) = rate`.
    Constant(f64),
    /// `b(x, eta) = b0 + sum_y a+(x-y) eta(y)`.
    Bpdl { b0: f64, a_plus: FiniteKernel },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeathForm {
    /// `exp(-c sum_y phi(x-y) eta(y))`.
    Exponential,
    /// `1 / (1 + c sum_y phi(x-y) eta(y))`.
    Reciprocal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationParams {
    pub birth: BirthMode,
    pub death_form: DeathForm,
    pub c: f64,
    pub phi: FiniteKernel,
}

/// Aggregation model: the death rate decreases with the local crowd, so
/// particles tend to cluster. The death rate carries the factor
/// `I{eta(x) > 0}`.
#[derive(Debug, Clone)]
pub struct AggregationModel {
    params: AggregationParams,
    radius: u32,
}

impl AggregationModel {
    pub fn new(params: AggregationParams) -> Result<Self, ModelError> {
        if !(params.c.is_finite() && params.c > 0.0) {
            return Err(ModelError::Parameter(format!(
                "c must be > 0, got {}",
                params.c
            )));
        }
        let birth_radius = match &params.birth {
            BirthMode::Constant(r) => {
                if !(r.is_finite() && *r >= 0.0) {
                    return Err(ModelError::Parameter(format!(
                        "constant birth rate must be >= 0, got {r}"
                    )));
                }
                0
            }
            BirthMode::Bpdl { b0, a_plus } => {
                if !(b0.is_finite() && *b0 >= 0.0) {
                    return Err(ModelError::Parameter(format!("b0 must be >= 0, got {b0}")));
                }
                if a_plus.dim() != params.phi.dim() {
                    return Err(ModelError::Parameter("kernel dimensions differ".into()));
                }
                a_plus.radius()
            }
        };
        let radius = birth_radius.max(params.phi.radius());
        Ok(AggregationModel { params, radius })
    }
}

impl RateModel for AggregationModel {
    fn name(&self) -> String {
        match self.params.death_form {
            DeathForm::Exponential => "aggregation-exp".into(),
            DeathForm::Reciprocal => "aggregation-reciprocal".into(),
        }
    }

    fn interaction_radius(&self) -> u32 {
        self.radius
    }

    fn birth(&self, x: usize, eta: &State) -> f64 {
        match &self.params.birth {
            BirthMode::Constant(r) => *r,
            BirthMode::Bpdl { b0, a_plus } => b0 + a_plus.convolve(x, eta),
        }
    }

    fn death(&self, x: usize, eta: &State) -> f64 {
        if eta.at(x) == 0 {
            return 0.0;
        }
        let crowd = self.params.c * self.params.phi.convolve(x, eta);
        match self.params.death_form {
            DeathForm::Exponential => (-crowd).exp(),
            DeathForm::Reciprocal => 1.0 / (1.0 + crowd),
        }
    }

    fn affected_offsets(&self, dim: usize) -> Vec<Site> {
        let mut v: Vec<Site> = self.params.phi.entries().iter().map(|(z, _)| *z).collect();
        if let BirthMode::Bpdl { a_plus, .. } = &self.params.birth {
            v.extend(a_plus.entries().iter().map(|(z, _)| *z));
        }
        v.push(Site::origin(dim));
        v.sort();
        v.dedup();
        v
    }

    fn monotone_birth_bound(&self, x: usize, eta: &State) -> Option<f64> {
        Some(self.birth(x, eta))
    }

    /// Both death forms are 1-Lipschitz functions of the crowd sum, so
    /// `c phi` (plus `a+` for the BPDL-style birth) dominates, whatever the
    /// occupancy bound.
    fn dominating_kernel(&self, _dim: usize, _occupancy_bound: u32) -> Option<FiniteKernel> {
        let death = self.params.phi.scaled(self.params.c);
        Some(match &self.params.birth {
            BirthMode::Constant(_) => death,
            BirthMode::Bpdl { a_plus, .. } => death.plus(a_plus),
        })
    }
}
