//! Experiment configuration: a TOML file with top-level keys and one
//! optional block per concern. Unknown keys are rejected everywhere.
//! [`ExperimentConfig::resolve`] fills every default, so the resolved value
//! echoed in the manifest describes the run completely.

use std::sync::Arc;

use bdlattice::engine::{Algorithm, DEFAULT_MAX_EVENTS};
use bdlattice::kernel::FiniteKernel;
use bdlattice::lattice::{Configuration, Site, Window};
use bdlattice::rates::{
    AggregationModel, AggregationParams, BirthMode, BpdlModel, BpdlParams, BranchLocalModel,
    BranchLocalParams, ContactModel, DeathCurve, DeathForm, RateModel,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Run,
    OracleCompare,
    Coupling,
    Contraction,
    Martingale,
    Drift,
    Occupation,
    SurvivalSweep,
    Bracket,
    WindowConvergence,
}

impl Experiment {
    pub fn tag(self) -> &'static str {
        match self {
            Experiment::Run => "run",
            Experiment::OracleCompare => "oracle-compare",
            Experiment::Coupling => "coupling",
            Experiment::Contraction => "contraction",
            Experiment::Martingale => "martingale",
            Experiment::Drift => "drift",
            Experiment::Occupation => "occupation",
            Experiment::SurvivalSweep => "survival-sweep",
            Experiment::Bracket => "bracket",
            Experiment::WindowConvergence => "window-convergence",
        }
    }

    fn default_replicates(self) -> u64 {
        match self {
            Experiment::Run => 1,
            Experiment::OracleCompare => 100_000,
            Experiment::Occupation => 1_000,
            Experiment::Drift | Experiment::Bracket => 0,
            _ => 10_000,
        }
    }
}

/// Error in the configuration itself (exit code 2).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FiniteFamily {
    Zero,
    /// `c` at the origin.
    Point,
    /// `c I{|x|_1 <= k}`.
    Indicator,
}

/// A finitely supported even kernel: a family tag with `c` (and `k`), or
/// explicit `entries = [[[offset...], value], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FiniteFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<(Vec<i32>, f64)>>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: Some(FiniteFamily::Zero),
            c: None,
            k: None,
            entries: None,
        }
    }
}

impl KernelSpec {
    pub fn build(&self, dim: usize) -> Result<FiniteKernel, ConfigError> {
        let err = |e: bdlattice::error::KernelError| ConfigError(e.to_string());
        match (self.family, &self.entries) {
            (Some(_), Some(_)) => bad("kernel takes either `family` or `entries`, not both"),
            (None, None) => bad("kernel needs `family` or `entries`"),
            (None, Some(entries)) => {
                if self.c.is_some() || self.k.is_some() {
                    return bad("`c` and `k` apply to kernel families only");
                }
                let mut sites = Vec::with_capacity(entries.len());
                for (z, v) in entries {
                    sites.push((site(z, dim)?, *v));
                }
                FiniteKernel::from_entries(dim, sites).map_err(err)
            }
            (Some(FiniteFamily::Zero), None) => {
                if self.c.is_some() || self.k.is_some() {
                    return bad("the zero kernel takes no parameters");
                }
                Ok(FiniteKernel::zero(dim))
            }
            (Some(FiniteFamily::Point), None) => {
                if self.k.is_some() {
                    return bad("the point kernel takes no `k`");
                }
                let c = self.c.ok_or_else(|| ConfigError("point kernel needs `c`".into()))?;
                FiniteKernel::point(dim, c).map_err(err)
            }
            (Some(FiniteFamily::Indicator), None) => {
                let c = self.c.ok_or_else(|| ConfigError("indicator kernel needs `c`".into()))?;
                let k = self.k.ok_or_else(|| ConfigError("indicator kernel needs `k`".into()))?;
                FiniteKernel::indicator(dim, c, k).map_err(err)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Curve {
    Linear,
    #[default]
    Square,
}

impl Curve {
    pub fn death_curve(self) -> DeathCurve {
        match self {
            Curve::Linear => DeathCurve::Linear,
            Curve::Square => DeathCurve::Square,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationBirth {
    #[default]
    Constant,
    Bpdl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationDeath {
    #[default]
    Exponential,
    Reciprocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Contact {
        lambda: f64,
    },
    Bpdl {
        #[serde(default = "one")]
        b0: f64,
        #[serde(default = "one")]
        m: f64,
        #[serde(default)]
        a_plus: KernelSpec,
        #[serde(default)]
        a_minus: KernelSpec,
    },
    BranchLocal {
        lambda: f64,
        #[serde(default)]
        g: Curve,
    },
    Aggregation {
        #[serde(default)]
        birth: AggregationBirth,
        /// Birth rate of the constant mode.
        #[serde(default = "one")]
        rate: f64,
        /// Immigration of the BPDL birth mode.
        #[serde(default = "one")]
        b0: f64,
        #[serde(default)]
        a_plus: KernelSpec,
        #[serde(default)]
        death_form: AggregationDeath,
        #[serde(default = "one")]
        c: f64,
        phi: KernelSpec,
    },
}

impl ModelConfig {
    pub fn build(&self, dim: usize) -> Result<Arc<dyn RateModel>, ConfigError> {
        let err = |e: bdlattice::error::ModelError| ConfigError(e.to_string());
        Ok(match self {
            ModelConfig::Contact { lambda } => Arc::new(ContactModel::new(*lambda).map_err(err)?),
            ModelConfig::Bpdl { .. } => Arc::new(self.bpdl(dim)?.expect("bpdl variant")),
            ModelConfig::BranchLocal { lambda, g } => Arc::new(
                BranchLocalModel::new(BranchLocalParams {
                    lambda: *lambda,
                    g: g.death_curve(),
                })
                .map_err(err)?,
            ),
            ModelConfig::Aggregation {
                birth,
                rate,
                b0,
                a_plus,
                death_form,
                c,
                phi,
            } => {
                let birth = match birth {
                    AggregationBirth::Constant => BirthMode::Constant(*rate),
                    AggregationBirth::Bpdl => BirthMode::Bpdl {
                        b0: *b0,
                        a_plus: a_plus.build(dim)?,
                    },
                };
                let death_form = match death_form {
                    AggregationDeath::Exponential => DeathForm::Exponential,
                    AggregationDeath::Reciprocal => DeathForm::Reciprocal,
                };
                Arc::new(
                    AggregationModel::new(AggregationParams {
                        birth,
                        death_form,
                        c: *c,
                        phi: phi.build(dim)?,
                    })
                    .map_err(err)?,
                )
            }
        })
    }

    /// The concrete BPDL model, when this is one.
    pub fn bpdl(&self, dim: usize) -> Result<Option<BpdlModel>, ConfigError> {
        let ModelConfig::Bpdl {
            b0,
            m,
            a_plus,
            a_minus,
        } = self
        else {
            return Ok(None);
        };
        BpdlModel::new(BpdlParams {
            b0: *b0,
            m: *m,
            a_plus: a_plus.build(dim)?,
            a_minus: a_minus.build(dim)?,
        })
        .map(Some)
        .map_err(|e| ConfigError(e.to_string()))
    }
}

pub fn site(coords: &[i32], dim: usize) -> Result<Site, ConfigError> {
    if coords.len() != dim {
        return bad(format!("site {coords:?} does not have dimension {dim}"));
    }
    Site::new(coords).map_err(|e| ConfigError(e.to_string()))
}

/// An l1 ball (`radius`) or an explicit site list (`sites`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<Vec<i32>>>,
}

fn default_dim() -> usize {
    1
}

impl WindowConfig {
    fn resolve(mut self) -> Result<Self, ConfigError> {
        match (&self.radius, &self.sites) {
            (Some(_), Some(_)) => return bad("window takes either `radius` or `sites`, not both"),
            (None, None) => self.radius = Some(5),
            _ => {}
        }
        Ok(self)
    }

    pub fn build(&self) -> Result<Window, ConfigError> {
        let w = match (&self.radius, &self.sites) {
            (Some(r), None) => Window::ball(self.dim, *r),
            (None, Some(sites)) => {
                let mut xs = Vec::with_capacity(sites.len());
                for s in sites {
                    xs.push(site(s, self.dim)?);
                }
                Window::from_sites(self.dim, &xs)
            }
            _ => return bad("window is not resolved"),
        };
        w.map_err(|e| ConfigError(e.to_string()))
    }
}

/// Initial configuration as `sites = [[[x...], n], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub sites: Vec<(Vec<i32>, u32)>,
}

impl InitialConfig {
    pub fn point_mass(dim: usize, n: u32) -> Self {
        InitialConfig {
            sites: vec![(vec![0; dim], n)],
        }
    }

    pub fn counts(&self, dim: usize) -> Result<Vec<(Site, u32)>, ConfigError> {
        self.sites.iter().map(|(x, n)| Ok((site(x, dim)?, *n))).collect()
    }

    pub fn build(&self, window: &Window) -> Result<Configuration, ConfigError> {
        Configuration::from_counts(Arc::new(window.clone()), self.counts(window.dim())?)
            .map_err(|e| ConfigError(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightShape {
    /// `w(x) = e^{-q |x|_1}`.
    #[default]
    Exp,
    /// `w(x) = 1 / (1 + |x|_1^q)`.
    Polynomial,
}

/// Weight `w` used with the model's dominating kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(default)]
    pub weight: WeightShape,
    #[serde(default = "one")]
    pub q: f64,
    /// Occupancy bound passed to the model's dominating kernel.
    #[serde(default = "default_occupancy_bound")]
    pub occupancy_bound: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_radius: Option<u32>,
}

fn default_occupancy_bound() -> u32 {
    10
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            weight: WeightShape::Exp,
            q: 1.0,
            occupancy_bound: default_occupancy_bound(),
            validation_radius: None,
        }
    }
}

impl WeightConfig {
    pub fn w(&self) -> Arc<dyn Fn(&Site) -> f64 + Send + Sync> {
        let q = self.q;
        match self.weight {
            WeightShape::Exp => Arc::new(move |x: &Site| (-q * x.norm1() as f64).exp()),
            WeightShape::Polynomial => {
                Arc::new(move |x: &Site| 1.0 / (1.0 + (x.norm1() as f64).powf(q)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default = "ten")]
    pub horizon: f64,
    #[serde(default)]
    pub algorithm: Algorithm,
}

fn ten() -> f64 {
    10.0
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            horizon: 10.0,
            algorithm: Algorithm::Gillespie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    #[serde(default = "oracle_times")]
    pub times: Vec<f64>,
    #[serde(default = "five")]
    pub cap: u32,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default = "tv_tol")]
    pub tv_tol: f64,
    #[serde(default = "z_tol")]
    pub z_tol: f64,
}

fn oracle_times() -> Vec<f64> {
    vec![0.1, 0.5, 1.0]
}
fn five() -> u32 {
    5
}
fn tv_tol() -> f64 {
    0.02
}
fn z_tol() -> f64 {
    3.0
}

impl Default for OracleBlock {
    fn default() -> Self {
        OracleBlock {
            times: oracle_times(),
            cap: 5,
            algorithm: Algorithm::Gillespie,
            tv_tol: tv_tol(),
            z_tol: z_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingBlock {
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Write the event logs of replicate 0.
    #[serde(default = "yes")]
    pub logs: bool,
}

fn yes() -> bool {
    true
}

impl Default for CouplingBlock {
    fn default() -> Self {
        CouplingBlock {
            horizon: 1.0,
            algorithm: Algorithm::Gillespie,
            logs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionBlock {
    #[serde(default = "contraction_times")]
    pub times: Vec<f64>,
}

fn contraction_times() -> Vec<f64> {
    vec![0.25, 0.5]
}

impl Default for ContractionBlock {
    fn default() -> Self {
        ContractionBlock {
            times: contraction_times(),
        }
    }
}

/// A cylindrical observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FunctionSpec {
    /// `min(eta(site), k)`.
    Truncated { site: Vec<i32>, k: u32 },
    /// Total mass on the window.
    Mass,
    /// `sum_x eta(x) / (1 + |x|_1^exponent)` on the window.
    WeightedMass { exponent: f64 },
    Linear { terms: Vec<(Vec<i32>, f64)> },
    /// `eta(a) eta(b)`.
    Product { sites: (Vec<i32>, Vec<i32>) },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleBlock {
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default)]
    pub functions: Vec<FunctionSpec>,
}

impl MartingaleBlock {
    fn resolve(mut self, dim: usize) -> Self {
        if self.functions.is_empty() {
            self.functions = vec![
                FunctionSpec::Truncated {
                    site: vec![0; dim],
                    k: 1,
                },
                FunctionSpec::Mass,
            ];
        }
        self
    }
}

impl Default for MartingaleBlock {
    fn default() -> Self {
        MartingaleBlock {
            horizon: 1.0,
            functions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftBlock {
    #[serde(default = "drift_samples")]
    pub samples: u64,
    #[serde(default = "v_max")]
    pub v_max: f64,
    /// `v(x) = 1 / (1 + |x|_1^v_exponent)`; defaults to `dim + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_exponent: Option<f64>,
    /// Given constants are checked instead of fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
}

fn drift_samples() -> u64 {
    10_000
}
fn v_max() -> f64 {
    100.0
}

impl Default for DriftBlock {
    fn default() -> Self {
        DriftBlock {
            samples: drift_samples(),
            v_max: v_max(),
            v_exponent: None,
            c1: None,
            c2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationBlock {
    #[serde(default = "occupation_ns")]
    pub ns: Vec<f64>,
    #[serde(default = "occupation_rs")]
    pub rs: Vec<f64>,
    /// Drift constants for the bound; fitted as in `drift` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
}

fn occupation_ns() -> Vec<f64> {
    vec![10.0, 50.0]
}
fn occupation_rs() -> Vec<f64> {
    vec![5.0, 10.0, 20.0]
}

impl Default for OccupationBlock {
    fn default() -> Self {
        OccupationBlock {
            ns: occupation_ns(),
            rs: occupation_rs(),
            c1: None,
            c2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalBlock {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub g: Curve,
    #[serde(default = "survival_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "survival_horizons")]
    pub horizons: Vec<f64>,
    #[serde(default = "survival_radii")]
    pub radii: Vec<u32>,
}

fn survival_lambdas() -> Vec<f64> {
    vec![0.1, 4.0]
}
fn survival_horizons() -> Vec<f64> {
    vec![50.0]
}
fn survival_radii() -> Vec<u32> {
    vec![20]
}

impl Default for SurvivalBlock {
    fn default() -> Self {
        SurvivalBlock {
            dim: 1,
            g: Curve::Square,
            lambdas: survival_lambdas(),
            horizons: survival_horizons(),
            radii: survival_radii(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BracketBlock {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "twenty")]
    pub radius: u32,
    #[serde(default = "fifty")]
    pub horizon: f64,
    #[serde(default)]
    pub g: Curve,
    #[serde(default)]
    pub lo: f64,
    #[serde(default = "four")]
    pub hi: f64,
    #[serde(default = "quarter")]
    pub tol: f64,
    #[serde(default = "tv_tol")]
    pub threshold: f64,
    #[serde(default = "thousand")]
    pub initial_replicates: u64,
    #[serde(default = "max_replicates")]
    pub max_replicates: u64,
}

fn twenty() -> u32 {
    20
}
fn fifty() -> f64 {
    50.0
}
fn four() -> f64 {
    4.0
}
fn quarter() -> f64 {
    0.25
}
fn thousand() -> u64 {
    1000
}
fn max_replicates() -> u64 {
    64_000
}

impl Default for BracketBlock {
    fn default() -> Self {
        BracketBlock {
            dim: 1,
            radius: 20,
            horizon: 50.0,
            g: Curve::Square,
            lo: 0.0,
            hi: 4.0,
            tol: 0.25,
            threshold: 0.02,
            initial_replicates: 1000,
            max_replicates: 64_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConvergenceBlock {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "wc_radii")]
    pub radii: Vec<u32>,
}

fn wc_radii() -> Vec<u32> {
    vec![2, 4, 8, 16]
}

impl Default for WindowConvergenceBlock {
    fn default() -> Self {
        WindowConvergenceBlock {
            dim: 1,
            horizon: 1.0,
            radii: wc_radii(),
        }
    }
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_events: Option<u64>,
    /// Output directory; `BDLATTICE_OUT` when absent. Not part of the
    /// resolved config.
    #[serde(default, skip_serializing)]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    /// Upper model of a coupling; the lower one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model2: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialConfig>,
    /// Upper initial configuration of a coupling or contraction run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial2: Option<InitialConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<WeightConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction: Option<ContractionBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub martingale: Option<MartingaleBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupation: Option<OccupationBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival: Option<SurvivalBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<BracketBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_convergence: Option<WindowConvergenceBlock>,
}

/// Blocks an experiment reads; any other block present is an error.
fn blocks(e: Experiment) -> &'static [&'static str] {
    match e {
        Experiment::Run => &["model", "window", "initial", "run"],
        Experiment::OracleCompare => &["model", "window", "initial", "oracle"],
        Experiment::Coupling => &["model", "model2", "window", "initial", "initial2", "coupling"],
        Experiment::Contraction => &["model", "window", "initial", "initial2", "kernel", "contraction"],
        Experiment::Martingale => &["model", "window", "initial", "martingale"],
        Experiment::Drift => &["model", "window", "kernel", "drift"],
        Experiment::Occupation => &["model", "window", "kernel", "drift", "occupation"],
        Experiment::SurvivalSweep => &["survival"],
        Experiment::Bracket => &["bracket"],
        Experiment::WindowConvergence => &["model", "initial", "window_convergence"],
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.message().replace('\n', " ")))
    }

    fn present(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut add = |name, p: bool| {
            if p {
                out.push(name)
            }
        };
        add("model", self.model.is_some());
        add("model2", self.model2.is_some());
        add("window", self.window.is_some());
        add("initial", self.initial.is_some());
        add("initial2", self.initial2.is_some());
        add("kernel", self.kernel.is_some());
        add("run", self.run.is_some());
        add("oracle", self.oracle.is_some());
        add("coupling", self.coupling.is_some());
        add("contraction", self.contraction.is_some());
        add("martingale", self.martingale.is_some());
        add("drift", self.drift.is_some());
        add("occupation", self.occupation.is_some());
        add("survival", self.survival.is_some());
        add("bracket", self.bracket.is_some());
        add("window_convergence", self.window_convergence.is_some());
        out
    }

    /// Fills every default the experiment reads and rejects blocks it does
    /// not read.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let e = self.experiment;
        let used = blocks(e);
        if let Some(extra) = self.present().into_iter().find(|b| !used.contains(b)) {
            return bad(format!("block `{extra}` is not used by experiment `{}`", e.tag()));
        }
        let uses = |b: &str| used.contains(&b);
        if uses("model") && self.model.is_none() {
            return bad(format!("experiment `{}` needs a [model] block", e.tag()));
        }
        if !matches!(e, Experiment::Drift | Experiment::Bracket) {
            self.replicates.get_or_insert(e.default_replicates());
        } else if self.replicates.is_some() {
            return bad(format!("`replicates` is not used by experiment `{}`", e.tag()));
        }
        self.max_events.get_or_insert(DEFAULT_MAX_EVENTS);
        let dim = match e {
            Experiment::WindowConvergence => {
                self.window_convergence.get_or_insert_with(Default::default).dim
            }
            _ if uses("window") => {
                let w = self.window.take().unwrap_or(WindowConfig {
                    dim: 1,
                    radius: None,
                    sites: None,
                });
                let w = w.resolve()?;
                let dim = w.dim;
                self.window = Some(w);
                dim
            }
            _ => 1,
        };
        if uses("initial") {
            self.initial.get_or_insert_with(|| InitialConfig::point_mass(dim, 1));
        }
        if uses("initial2") {
            self.initial2.get_or_insert_with(|| InitialConfig::point_mass(dim, 2));
        }
        if uses("kernel") {
            let k = self.kernel.get_or_insert_with(Default::default);
            k.validation_radius
                .get_or_insert(bdlattice::kernel::default_validation_radius(dim));
        }
        match e {
            Experiment::Run => {
                self.run.get_or_insert_with(Default::default);
            }
            Experiment::OracleCompare => {
                self.oracle.get_or_insert_with(Default::default);
            }
            Experiment::Coupling => {
                self.coupling.get_or_insert_with(Default::default);
            }
            Experiment::Contraction => {
                self.contraction.get_or_insert_with(Default::default);
            }
            Experiment::Martingale => {
                let m = self.martingale.take().unwrap_or_default();
                self.martingale = Some(m.resolve(dim));
            }
            Experiment::Drift => {
                let d = self.drift.get_or_insert_with(Default::default);
                d.v_exponent.get_or_insert(dim as f64 + 1.0);
                if d.c1.is_some() != d.c2.is_some() {
                    return bad("drift takes both `c1` and `c2` or neither");
                }
            }
            Experiment::Occupation => {
                let o = self.occupation.get_or_insert_with(Default::default);
                if o.c1.is_some() != o.c2.is_some() {
                    return bad("occupation takes both `c1` and `c2` or neither");
                }
                let d = self.drift.get_or_insert_with(Default::default);
                d.v_exponent.get_or_insert(dim as f64 + 1.0);
                if d.c1.is_some() || d.c2.is_some() {
                    return bad("occupation reads drift constants from [occupation]");
                }
            }
            Experiment::SurvivalSweep => {
                self.survival.get_or_insert_with(Default::default);
            }
            Experiment::Bracket => {
                self.bracket.get_or_insert_with(Default::default);
            }
            Experiment::WindowConvergence => {
                self.initial.get_or_insert_with(|| InitialConfig::point_mass(dim, 1));
            }
        }
        Ok(self)
    }

    pub fn replicates(&self) -> u64 {
        self.replicates.unwrap_or(0)
    }

    pub fn max_events(&self) -> u64 {
        self.max_events.unwrap_or(DEFAULT_MAX_EVENTS)
    }

    /// Canonical JSON of the resolved config.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
