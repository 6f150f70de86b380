use thiserror::Error;

use crate::lattice::Site;
use crate::rng::Channel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension {0} unsupported (expected 1..=4)")]
    BadDimension(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("site {0} lies outside the window")]
    OutsideWindow(Site),
    #[error("window has no sites")]
    EmptyWindow,
    #[error("window bounding box too large")]
    WindowTooLarge,
    #[error("malformed configuration: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    /// A family parameter violates its constraint; the message names it.
    #[error("kernel parameter constraint violated: {0}")]
    Constraint(String),
    #[error("kernel is not even: value at {site} differs from value at its mirror")]
    NotEven { site: Site },
    #[error("weight must be positive, got {value} at {site}")]
    NonPositiveWeight { site: Site, value: f64 },
    #[error("kernel value must be finite and non-negative, got {value} at {site}")]
    NegativeKernel { site: Site, value: f64 },
    /// The ratio `sum_y w(y) a(x-y) / w(x)` keeps growing toward the boundary
    /// of the validation ball.
    #[error("weight/kernel inequality fails: ratio grows from {inner:.6e} to {boundary:.6e} at the ball boundary")]
    Diverging { inner: f64, boundary: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model parameter invalid: {0}")]
    Parameter(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    /// Brute-force envelope evaluation would enumerate more than the cap.
    #[error("envelope probe space {needed} exceeds cap {cap} at {site}")]
    ProbeCapExceeded { site: Site, needed: u128, cap: u64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("rate {value} at {site} ({channel:?}) is not a finite non-negative number")]
    InvalidRate {
        site: Site,
        channel: Channel,
        value: f64,
    },
    /// Event budget exhausted before the horizon.
    #[error("explosion guard: {events} events by t = {time}")]
    Explosion { events: u64, time: f64 },
    /// A thinning candidate found a rate above the mark band covered by the
    /// envelope.
    #[error("envelope violation at {site} ({channel:?}) t = {time}: rate {rate} > bound {bound}")]
    EnvelopeViolation {
        site: Site,
        channel: Channel,
        time: f64,
        rate: f64,
        bound: f64,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("state space too large: {0} states (limit 4096)")]
    TooLarge(u64),
    #[error("capped state space supports at most 3 sites and cap 6, got {sites} sites and cap {cap}")]
    Shape { sites: usize, cap: u32 },
    /// More than one closed communicating class.
    #[error("no unique stationary law: {} closed classes", classes.len())]
    MultiClass { classes: Vec<Vec<usize>> },
    #[error("rate at state {state} is not finite: {value}")]
    InvalidRate { state: usize, value: f64 },
    #[error("linear solve failed")]
    Singular,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    /// The weight `v` fails one of its requirements on the validation ball.
    #[error("Lyapunov weight rejected: {0}")]
    Lyapunov(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    /// The confidence interval still straddles the threshold at the
    /// replicate budget.
    #[error("undecided at lambda = {lambda}: p_hat = {p_hat} with {replicates} replicates")]
    Undecided { lambda: f64, p_hat: f64, replicates: u64 },
    /// Estimates decrease in lambda beyond their confidence intervals even
    /// at the replicate budget.
    #[error("non-monotone estimates between lambda = {lo} and lambda = {hi}")]
    NonMonotone { lo: f64, hi: f64 },
    #[error("bracket endpoint: {0}")]
    Endpoint(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}
