//! Finite-horizon survival of the branching-birth, local-death model
//! started from one particle at the origin, and bracketing of its critical
//! value.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::coupling::{couple_gillespie, DominationReport, PairOptions, ViolationPoint};
use crate::engine::{try_replicates, Gillespie, Simulator, Thinning, DEFAULT_MAX_EVENTS};
use crate::error::{EngineError, SurvivalError};
use crate::lattice::{Configuration, State, Window};
use crate::rates::{
    layout_for, BranchLocalModel, BranchLocalParams, ContactModel, DeathCurve, RateModel,
};
use crate::stats::{wilson, Z95};

/// Everything but `lambda` and the replicate count.
#[derive(Clone)]
pub struct SurvivalSetup {
    pub g: DeathCurve,
    pub dim: usize,
    pub radius: u32,
    pub horizon: f64,
    pub seed: u64,
    pub max_events: u64,
}

impl SurvivalSetup {
    pub fn new(dim: usize, radius: u32, horizon: f64, seed: u64) -> Self {
        SurvivalSetup {
            g: DeathCurve::Square,
            dim,
            radius,
            horizon,
            seed,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    pub fn model(&self, lambda: f64) -> Result<BranchLocalModel, EngineError> {
        Ok(BranchLocalModel::new(BranchLocalParams {
            lambda,
            g: self.g.clone(),
        })?)
    }

    /// `delta_0` on the ball, on a layout wide enough for `models`.
    fn start(&self, models: &[&dyn RateModel]) -> Result<State, EngineError> {
        let window = Arc::new(Window::ball(self.dim, self.radius)?);
        let layout = layout_for(&window, models)?;
        Ok(State::from_configuration(layout, &Configuration::point_mass(window, 1)?)?)
    }
}

/// Fraction of replicates alive at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalEstimate {
    pub lambda: f64,
    pub horizon: f64,
    pub window_radius: u32,
    pub replicates: u64,
    pub survivors: u64,
    pub p_hat: f64,
    /// Wilson 95% interval.
    pub ci95: (f64, f64),
}

/// Runs `replicates` trajectories from `delta_0`, each stopped at the
/// horizon or on absorption in the empty configuration.
///
/// For `lambda > 0` each replicate first runs the contact process with the
/// same `lambda` under thinning. On shared marks it stays below the
/// branching model, so its survival decides the replicate. Otherwise its
/// extinction time `tau` is a stopping time of the marks: the branching
/// model is run on the same marks up to `tau` and continued from there by
/// Gillespie on an independent stream. The survival indicator has the law
/// of [`estimate_survival_direct`]; only the cost differs.
pub fn estimate_survival(
    setup: &SurvivalSetup,
    lambda: f64,
    replicates: u64,
) -> Result<SurvivalEstimate, EngineError> {
    if !(lambda > 0.0) {
        return estimate_survival_direct(setup, lambda, replicates);
    }
    let model = setup.model(lambda)?;
    let contact = ContactModel::new(lambda)?;
    let start = setup.start(&[&model, &contact])?;
    let alive = try_replicates(replicates, |r| -> Result<bool, EngineError> {
        let mut lower = Thinning::new(&contact, start.clone(), setup.seed, r, setup.max_events)?;
        lower.advance_to(setup.horizon, true)?;
        if !lower.state().is_empty() {
            return Ok(true);
        }
        let tau = lower.time();
        // marks at tau itself belong to the past
        let mut upper = Thinning::new(&model, start.clone(), setup.seed, r, setup.max_events)?;
        upper.advance_to(tau, true)?;
        if upper.state().is_empty() {
            return Ok(false);
        }
        let budget = setup.max_events - upper.events();
        let mut rest = Gillespie::new(&model, upper.state().clone(), setup.seed, r, budget)?;
        rest.advance_to(setup.horizon - tau, true)?;
        Ok(!rest.state().is_empty())
    })?;
    Ok(tally(setup, lambda, replicates, &alive))
}

/// Plain Gillespie estimate, one full trajectory per replicate.
pub fn estimate_survival_direct(
    setup: &SurvivalSetup,
    lambda: f64,
    replicates: u64,
) -> Result<SurvivalEstimate, EngineError> {
    let model = setup.model(lambda)?;
    let start = setup.start(&[&model])?;
    let alive = try_replicates(replicates, |r| -> Result<bool, EngineError> {
        let mut sim = Gillespie::new(&model, start.clone(), setup.seed, r, setup.max_events)?;
        sim.advance_to(setup.horizon, true)?;
        Ok(!sim.state().is_empty())
    })?;
    Ok(tally(setup, lambda, replicates, &alive))
}

fn tally(setup: &SurvivalSetup, lambda: f64, replicates: u64, alive: &[bool]) -> SurvivalEstimate {
    let survivors = alive.iter().filter(|&&a| a).count() as u64;
    SurvivalEstimate {
        lambda,
        horizon: setup.horizon,
        window_radius: setup.radius,
        replicates,
        survivors,
        p_hat: if replicates == 0 { 0.0 } else { survivors as f64 / replicates as f64 },
        ci95: wilson(survivors, replicates, Z95),
    }
}

/// Estimates over every combination of the grids, in `lambda`, then
/// horizon, then radius order.
pub fn survival_sweep(
    setup: &SurvivalSetup,
    lambdas: &[f64],
    horizons: &[f64],
    radii: &[u32],
    replicates: u64,
) -> Result<Vec<SurvivalEstimate>, EngineError> {
    let mut out = Vec::new();
    for &lambda in lambdas {
        for &horizon in horizons {
            for &radius in radii {
                let s = SurvivalSetup {
                    horizon,
                    radius,
                    ..setup.clone()
                };
                out.push(estimate_survival(&s, lambda, replicates)?);
            }
        }
    }
    Ok(out)
}

/// `# key=value` lines, then `lambda,T,radius,replicates,p_hat,ci_lo,ci_hi`.
pub fn sweep_csv(rows: &[SurvivalEstimate], params: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in params {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str("lambda,T,radius,replicates,p_hat,ci_lo,ci_hi\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.lambda, r.horizon, r.window_radius, r.replicates, r.p_hat, r.ci95.0, r.ci95.1
        );
    }
    out
}

/// Settings of [`bracket_lambda_c`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BracketOptions {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    /// A point is on the surviving side when the whole interval lies above
    /// the threshold, on the extinct side when it lies below.
    pub threshold: f64,
    pub initial_replicates: u64,
    /// Replicates are doubled while undecided, up to this budget.
    pub max_replicates: u64,
}

impl Default for BracketOptions {
    fn default() -> Self {
        BracketOptions {
            lo: 0.0,
            hi: 4.0,
            tol: 0.25,
            threshold: 0.02,
            initial_replicates: 1000,
            max_replicates: 64_000,
        }
    }
}

/// One guarded comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decision {
    pub estimate: SurvivalEstimate,
    pub survives: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    /// In evaluation order.
    pub decisions: Vec<Decision>,
}

/// Decides which side of the threshold `lambda` lies on, doubling the
/// replicates until the Wilson interval excludes the threshold.
pub fn decide(
    setup: &SurvivalSetup,
    lambda: f64,
    opts: &BracketOptions,
) -> Result<Decision, SurvivalError> {
    decide_from(setup, lambda, opts, opts.initial_replicates)
}

fn decide_from(
    setup: &SurvivalSetup,
    lambda: f64,
    opts: &BracketOptions,
    start: u64,
) -> Result<Decision, SurvivalError> {
    let mut n = start.max(1);
    loop {
        let estimate = estimate_survival(setup, lambda, n)?;
        if estimate.ci95.0 > opts.threshold {
            return Ok(Decision { estimate, survives: true });
        }
        if estimate.ci95.1 < opts.threshold {
            return Ok(Decision { estimate, survives: false });
        }
        if n.saturating_mul(2) > opts.max_replicates {
            return Err(SurvivalError::Undecided {
                lambda,
                p_hat: estimate.p_hat,
                replicates: n,
            });
        }
        n *= 2;
    }
}

/// Index pair `(i, j)` with `lambda_i < lambda_j` whose estimates decrease
/// beyond both intervals.
fn contradiction(ds: &[Decision]) -> Option<(usize, usize)> {
    for i in 0..ds.len() {
        for j in 0..ds.len() {
            let (a, b) = (&ds[i].estimate, &ds[j].estimate);
            if a.lambda < b.lambda && a.ci95.0 > b.ci95.1 {
                return Some((i, j));
            }
        }
    }
    None
}

/// Bisects on `lambda` for the finite-horizon, finite-window
/// pseudo-critical value until the bracket is at most `tol` wide.
///
/// Requires the extinct side at `opts.lo` and the surviving side at
/// `opts.hi`. Estimates that decrease in `lambda` beyond their intervals
/// are re-run with doubled replicates; persisting contradictions are
/// errors.
pub fn bracket_lambda_c(setup: &SurvivalSetup, opts: &BracketOptions) -> Result<Bracket, SurvivalError> {
    if !(opts.tol > 0.0) || !(opts.lo < opts.hi) || opts.lo < 0.0 {
        return Err(SurvivalError::Argument(format!(
            "need 0 <= lo < hi and tol > 0, got lo = {}, hi = {}, tol = {}",
            opts.lo, opts.hi, opts.tol
        )));
    }
    let mut decisions = Vec::new();
    let d_lo = decide(setup, opts.lo, opts)?;
    if d_lo.survives {
        return Err(SurvivalError::Endpoint(format!("lambda = {} survives", opts.lo)));
    }
    decisions.push(d_lo);
    let d_hi = decide(setup, opts.hi, opts)?;
    if !d_hi.survives {
        return Err(SurvivalError::Endpoint(format!("lambda = {} dies out", opts.hi)));
    }
    decisions.push(d_hi);
    let (mut lo, mut hi) = (opts.lo, opts.hi);
    while hi - lo > opts.tol {
        let mid = 0.5 * (lo + hi);
        decisions.push(decide(setup, mid, opts)?);
        while let Some((i, j)) = contradiction(&decisions) {
            let (li, lj) = (decisions[i].estimate.lambda, decisions[j].estimate.lambda);
            let ni = decisions[i].estimate.replicates * 2;
            let nj = decisions[j].estimate.replicates * 2;
            if ni.max(nj) > opts.max_replicates {
                return Err(SurvivalError::NonMonotone { lo: li, hi: lj });
            }
            decisions[i] = decide_from(setup, li, opts, ni)?;
            decisions[j] = decide_from(setup, lj, opts, nj)?;
        }
        let last = decisions.last().expect("just pushed");
        if last.survives {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Bracket { lo, hi, decisions })
}

/// Pathwise comparison of two models from `delta_0` on shared noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathwiseReport {
    pub domination: DominationReport,
    /// Replicates where the lower process is alive at the horizon and the
    /// upper one is not.
    pub indicator_violations: u64,
    pub lower_survivors: u64,
    pub upper_survivors: u64,
}

/// Couples `lower` and `upper` from one particle at the origin and checks
/// domination after every event and survival indicators at the horizon.
pub fn pathwise_check<M1: RateModel, M2: RateModel>(
    lower: &M1,
    upper: &M2,
    setup: &SurvivalSetup,
    replicates: u64,
) -> Result<PathwiseReport, EngineError> {
    let s0 = setup.start(&[lower, upper])?;
    let opts = PairOptions::new(setup.horizon, setup.seed);
    let runs = try_replicates(replicates, |r| {
        couple_gillespie(lower, upper, s0.clone(), s0.clone(), &opts.replicate(r))
            .map(|p| (p.violation, !p.lower.is_empty(), !p.upper.is_empty()))
    })?;
    let first: Option<ViolationPoint> = runs.iter().find_map(|r| r.0);
    Ok(PathwiseReport {
        domination: DominationReport {
            clean: first.is_none(),
            first_violation: first,
            replicates,
        },
        indicator_violations: runs.iter().filter(|r| r.1 && !r.2).count() as u64,
        lower_survivors: runs.iter().filter(|r| r.1).count() as u64,
        upper_survivors: runs.iter().filter(|r| r.2).count() as u64,
    })
}

/// `branch_local(lambda1) <= branch_local(lambda2)` for `lambda1 <= lambda2`.
pub fn lambda_monotonicity(
    setup: &SurvivalSetup,
    lambda1: f64,
    lambda2: f64,
    replicates: u64,
) -> Result<PathwiseReport, EngineError> {
    pathwise_check(&setup.model(lambda1)?, &setup.model(lambda2)?, setup, replicates)
}

/// `contact(lambda) <= branch_local(lambda)`.
pub fn contact_domination(
    setup: &SurvivalSetup,
    lambda: f64,
    replicates: u64,
) -> Result<PathwiseReport, EngineError> {
    pathwise_check(&ContactModel::new(lambda)?, &setup.model(lambda)?, setup, replicates)
}

/// Survival of the contact process itself from `delta_0`, for comparison.
pub fn estimate_contact_survival(
    setup: &SurvivalSetup,
    lambda: f64,
    replicates: u64,
) -> Result<SurvivalEstimate, EngineError> {
    let model = ContactModel::new(lambda)?;
    let start = setup.start(&[&model])?;
    let alive = try_replicates(replicates, |r| -> Result<bool, EngineError> {
        let mut sim = Gillespie::new(&model, start.clone(), setup.seed, r, setup.max_events)?;
        sim.advance_to(setup.horizon, true)?;
        Ok(!sim.state().is_empty())
    })?;
    Ok(tally(setup, lambda, replicates, &alive))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_never_survives() {
        let s = SurvivalSetup::new(1, 5, 50.0, 1);
        let e = estimate_survival(&s, 0.0, 500).unwrap();
        assert_eq!((e.survivors, e.p_hat), (0, 0.0));
        assert!(e.ci95.0 == 0.0 && e.ci95.1 > 0.0);
        assert!(!decide(&s, 0.0, &BracketOptions::default()).unwrap().survives);
    }

    #[test]
    fn single_particle_death_time() {
        // no births and g(1) = 1: alive at t = 1 with probability e^{-1}
        let s = SurvivalSetup::new(1, 3, 1.0, 2);
        let e = estimate_survival(&s, 0.0, 20_000).unwrap();
        let p = (-1.0f64).exp();
        let se = (p * (1.0 - p) / 20_000.0).sqrt();
        assert!((e.p_hat - p).abs() < 3.0 * se, "{}", e.p_hat);
        assert!(e.ci95.0 <= e.p_hat && e.p_hat <= e.ci95.1);
    }

    #[test]
    fn split_estimate_matches_direct() {
        for (lambda, radius, horizon) in [(1.5, 8, 5.0), (3.0, 6, 8.0)] {
            let s = SurvivalSetup::new(1, radius, horizon, 8);
            let a = estimate_survival(&s, lambda, 6000).unwrap();
            let b = estimate_survival_direct(&s, lambda, 6000).unwrap();
            let pool = (a.p_hat + b.p_hat) / 2.0;
            let se = (2.0 * pool * (1.0 - pool) / 6000.0).sqrt();
            assert!((a.p_hat - b.p_hat).abs() < 3.5 * se, "{lambda}: {} vs {}", a.p_hat, b.p_hat);
        }
    }

    #[test]
    fn far_supercritical_survives() {
        let s = SurvivalSetup::new(1, 10, 10.0, 3);
        assert!(decide(&s, 10.0, &BracketOptions::default()).unwrap().survives);
    }

    #[test]
    fn undecided_is_an_error() {
        let s = SurvivalSetup::new(1, 3, 50.0, 4);
        let opts = BracketOptions {
            threshold: 0.0,
            initial_replicates: 10,
            max_replicates: 40,
            ..Default::default()
        };
        // p_hat = 0 exactly, so the interval always contains 0
        assert!(matches!(decide(&s, 0.0, &opts), Err(SurvivalError::Undecided { .. })));
    }

    #[test]
    fn bad_bracket_arguments() {
        let s = SurvivalSetup::new(1, 3, 1.0, 5);
        let opts = BracketOptions { tol: 0.0, ..Default::default() };
        assert!(matches!(bracket_lambda_c(&s, &opts), Err(SurvivalError::Argument(_))));
        let opts = BracketOptions { lo: 5.0, hi: 6.0, ..Default::default() };
        assert!(matches!(bracket_lambda_c(&s, &opts), Err(SurvivalError::Endpoint(_))));
    }

    #[test]
    fn csv_columns() {
        let s = SurvivalSetup::new(1, 2, 50.0, 6);
        let rows = survival_sweep(&s, &[0.0], &[50.0], &[2], 10).unwrap();
        let csv = sweep_csv(&rows, &[("seed", "6".into())]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("# seed=6"));
        assert_eq!(lines.next(), Some("lambda,T,radius,replicates,p_hat,ci_lo,ci_hi"));
        assert!(lines.next().unwrap().starts_with("0,50,2,10,0,0,"));
    }

    #[test]
    fn pathwise_orderings_hold() {
        let s = SurvivalSetup::new(1, 6, 2.0, 7);
        let a = lambda_monotonicity(&s, 0.5, 1.0, 500).unwrap();
        assert!(a.domination.clean && a.indicator_violations == 0);
        assert!(a.lower_survivors <= a.upper_survivors);
        let b = contact_domination(&s, 1.0, 500).unwrap();
        assert!(b.domination.clean && b.indicator_violations == 0);
        // the reverse order is not a domination
        let c = lambda_monotonicity(&s, 1.0, 0.5, 500).unwrap();
        assert!(!c.domination.clean);
    }
}
