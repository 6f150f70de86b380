//! One function per experiment tag. Each returns the files to write and
//! whether its checks passed.

use std::fmt::Write as _;
use std::sync::Arc;

use bdlattice::analysis::{
    bpdl_drift_bound, default_c2_grid, drift_check, martingale_residual, occupation_csv,
    occupation_measure, sample_configurations, CylindricalFunction, DriftReport, LyapunovSpec,
};
use bdlattice::coupling::{contraction_check, coupled_replicates, run_coupled, PairOptions};
use bdlattice::engine::{
    final_state, initial_state, run, try_replicates, window_convergence, RunOptions,
};
use bdlattice::error::{AnalysisError, EngineError, OracleError, SurvivalError};
use bdlattice::kernel::{custom_kernel, SiteFn};
use bdlattice::lattice::{Site, Window};
use bdlattice::oracle::{build_generator, transient, CappedStateSpace};
use bdlattice::rates::{layout_for, CapSuppressed, RateModel};
use bdlattice::stats::Empirical;
use bdlattice::survival::{
    bracket_lambda_c, survival_sweep, sweep_csv, BracketOptions, SurvivalSetup,
};

use crate::config::{site, ConfigError, Experiment, ExperimentConfig, FunctionSpec};

/// Why an experiment stopped; each kind has its own exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    /// A checked invariant of the computation itself failed.
    Assertion(String),
    Explosion(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Assertion(_) => 3,
            Failure::Explosion(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Io(_) => "io",
            Failure::Config(_) => "config",
            Failure::Assertion(_) => "assertion",
            Failure::Explosion(_) => "explosion",
        }
    }

    pub fn reason(&self) -> &str {
        match self {
            Failure::Io(s) | Failure::Config(s) | Failure::Assertion(s) | Failure::Explosion(s) => s,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let s = e.to_string();
        match e {
            EngineError::Explosion { .. } => Failure::Explosion(s),
            EngineError::InvalidRate { .. } | EngineError::EnvelopeViolation { .. } => {
                Failure::Assertion(s)
            }
            EngineError::Lattice(_) | EngineError::Model(_) | EngineError::Argument(_) => {
                Failure::Config(s)
            }
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Engine(e) => e.into(),
            e => Failure::Config(e.to_string()),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::InvalidRate { .. } | OracleError::Singular | OracleError::MultiClass { .. } => {
                Failure::Assertion(e.to_string())
            }
            e => Failure::Config(e.to_string()),
        }
    }
}

impl From<SurvivalError> for Failure {
    fn from(e: SurvivalError) -> Self {
        match e {
            SurvivalError::Engine(e) => e.into(),
            SurvivalError::Argument(_) => Failure::Config(e.to_string()),
            e => Failure::Assertion(e.to_string()),
        }
    }
}

/// Files produced by an experiment, in write order.
pub struct Outcome {
    pub files: Vec<(String, String)>,
    /// `None` when the experiment checks nothing.
    pub passed: Option<bool>,
    /// One line for stdout.
    pub summary: String,
}

/// Comment lines carried by every CSV.
fn preamble(cfg: &ExperimentConfig, config_hash: &str) -> Vec<(&'static str, String)> {
    vec![
        ("experiment", cfg.experiment.tag().to_string()),
        ("seed", cfg.seed.to_string()),
        ("config_hash", config_hash.to_string()),
    ]
}

/// `# key=value` lines, a header, then the rows, written by the csv crate.
fn table(params: &[(&str, String)], header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for (k, v) in params {
        let _ = writeln!(out, "# {k}={v}");
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"));
    out
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

struct Setup {
    window: Window,
    model: Arc<dyn RateModel>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, Failure> {
    let window = cfg.window.as_ref().expect("resolved").build()?;
    let model = cfg.model.as_ref().expect("resolved").build(window.dim())?;
    Ok(Setup { window, model })
}

pub fn dispatch(cfg: &ExperimentConfig, config_hash: &str) -> Result<Outcome, Failure> {
    match cfg.experiment {
        Experiment::Run => run_experiment(cfg, config_hash),
        Experiment::OracleCompare => oracle_compare(cfg, config_hash),
        Experiment::Coupling => coupling(cfg, config_hash),
        Experiment::Contraction => contraction(cfg, config_hash),
        Experiment::Martingale => martingale(cfg, config_hash),
        Experiment::Drift => drift(cfg, config_hash),
        Experiment::Occupation => occupation(cfg, config_hash),
        Experiment::SurvivalSweep => survival(cfg, config_hash),
        Experiment::Bracket => bracket(cfg),
        Experiment::WindowConvergence => window_conv(cfg, config_hash),
    }
}

fn run_experiment(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome, Failure> {
    let Setup { window, model } = setup(cfg)?;
    let block = cfg.run.as_ref().expect("resolved");
    let eta0 = cfg.initial.as_ref().expect("resolved").build(&window)?;
    let base = RunOptions::new(block.horizon, cfg.seed)
        .algorithm(block.algorithm)
        .max_events(cfg.max_events());
    let n = cfg.replicates();
    let width = n.saturating_sub(1).to_string().len().max(4);
    let trajectories = try_replicates(n, |r| run(&model, &window, &eta0, &base.replicate(r)))?;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for t in &trajectories {
        files.push((format!("trajectory_{:0width$}.jsonl", t.replicate), t.to_jsonl(hash)));
        let births = t.events.iter().filter(|e| e.delta > 0).count();
        rows.push(vec![
            t.replicate.to_string(),
            t.events.len().to_string(),
            births.to_string(),
            (t.events.len() - births).to_string(),
            t.final_config.mass().to_string(),
        ]);
    }
    let total: usize = trajectories.iter().map(|t| t.events.len()).sum();
    files.push((
        "summary.csv".into(),
        table(
            &preamble(cfg, hash),
            &["replicate", "events", "births", "deaths", "final_mass"],
            &rows,
        ),
    ));
    Ok(Outcome {
        files,
        passed: None,
        summary: format!("run: {n} trajectories, {total} events"),
    })
}

fn oracle_compare(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome, Failure> {
    let Setup { window, model } = setup(cfg)?;
    let block = cfg.oracle.as_ref().expect("resolved");
    let space = CappedStateSpace::new(Arc::new(window.clone()), block.cap)?;
    let capped = CapSuppressed::new(model, block.cap);
    let gen = build_generator(&space, &capped)?;
    let eta0 = cfg.initial.as_ref().expect("resolved").build(&window)?;
    let pi0 = space
        .point_mass(&eta0)
        .ok_or_else(|| Failure::Config(format!("initial configuration exceeds cap {}", block.cap)))?;
    let st0 = initial_state(&capped, &window, &eta0)?;
    let n = cfg.replicates();
    let mut rows = Vec::new();
    let mut summary_rows = Vec::new();
    let mut passed = true;
    let mut lines = Vec::new();
    for &t in &block.times {
        let exact = transient(&gen, &pi0, t);
        let opts = RunOptions::new(t, cfg.seed)
            .algorithm(block.algorithm)
            .max_events(cfg.max_events());
        let idx = try_replicates(n, |r| {
            final_state(&capped, st0.clone(), &opts.replicate(r))
                .map(|s| space.index_of_state(&s).expect("cap-suppressed run stays in the space"))
        })?;
        let emp = Empirical::from_samples(space.len(), idx);
        let p = emp.probabilities();
        let (tv, max_z) = (emp.tv(&exact), emp.max_z(&exact));
        let ok = tv <= block.tv_tol && max_z <= block.z_tol;
        passed &= ok;
        for (i, q) in exact.iter().enumerate() {
            let se = (q * (1.0 - q) / n.max(1) as f64).sqrt();
            let z = if p[i] == *q { 0.0 } else { (p[i] - q) / se };
            let occ: Vec<String> = space.occupancies(i).iter().map(u32::to_string).collect();
            rows.push(vec![
                t.to_string(),
                i.to_string(),
                occ.join(" "),
                q.to_string(),
                p[i].to_string(),
                se.to_string(),
                z.to_string(),
            ]);
        }
        summary_rows.push(vec![t.to_string(), tv.to_string(), max_z.to_string(), u8::from(ok).to_string()]);
        lines.push(format!("t={t} tv={tv:.6} max_z={max_z:.3}"));
    }
    let params = preamble(cfg, hash);
    Ok(Outcome {
        files: vec![
            (
                "oracle.csv".into(),
                table(&params, &["t", "state", "occupancies", "exact", "empirical", "se", "z"], &rows),
            ),
            (
                "oracle_summary.csv".into(),
                table(&params, &["t", "tv", "max_z", "pass"], &summary_rows),
            ),
        ],
        passed: Some(passed),
        summary: format!("oracle-compare: {}", lines.join("; ")),
    })
}

fn coupling(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome, Failure> {
    let Setup { window, model } = setup(cfg)?;
    let upper = match &cfg.model2 {
        Some(m) => m.build(window.dim())?,
        None => model.clone(),
    };
    let block = cfg.coupling.as_ref().expect("resolved");
    let eta1 = cfg.initial.as_ref().expect("resolved").build(&window)?;
    let eta2 = cfg.initial2.as_ref().expect("resolved").build(&window)?;
    if !eta1.le(&eta2) {
        return Err(Failure::Config("coupling needs initial <= initial2 sitewise".into()));
    }
    let mut opts = PairOptions::new(block.horizon, cfg.seed).algorithm(block.algorithm);
    opts.max_events = cfg.max_events();
    let summary = coupled_replicates(&model, &upper, &window, &eta1, &eta2, &opts, cfg.replicates())?;
    let mut files = vec![("coupling.json".to_string(), json(&summary))];
    if block.logs {
        let (lo, up, _) = run_coupled(&model, &upper, &window, &eta1, &eta2, &opts)?;
        files.push(("lower.jsonl".into(), lo.to_jsonl(hash)));
        files.push(("upper.jsonl".into(), up.to_jsonl(hash)));
    }
    // a violation only refutes something when the hypotheses held
    let passed = !summary.hypotheses.holds() || summary.claim;
    Ok(Outcome {
        files,
        passed: Some(passed),
        summary: format!(
            "coupling: hypotheses_hold={} clean={} inclusion_failures={} claim={}",
            summary.hypotheses.holds(),
            summary.domination.clean,
            summary.inclusion_failures,
            summary.claim
        ),
    })
}

/// `w` from the `[kernel]` block with the model's dominating kernel.
fn weight_pair(
    cfg: &ExperimentConfig,
    model: &dyn RateModel,
    dim: usize,
) -> Result<(SiteFn, f64, bdlattice::kernel::FiniteKernel), Failure> {
    let k = cfg.kernel.as_ref().expect("resolved");
    let a = model.dominating_kernel(dim, k.occupancy_bound).ok_or_else(|| {
        Failure::Config(format!("model {} has no dominating kernel", model.name()))
    })?;
    let w = k.w();
    let pair = custom_kernel(w.clone(), &a, k.validation_radius.expect("resolved"))
        .map_err(|e| Failure::Config(e.to_string()))?;
    Ok((w, pair.c_wa, a))
}

fn contraction(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome, Failure> {
    let Setup { window, model } = setup(cfg)?;
    let (w, c_wa, _) = weight_pair(cfg, &model, window.dim())?;
    let a = cfg.initial.as_ref().expect("resolved").build(&window)?;
    let b = cfg.initial2.as_ref().expect("resolved").build(&window)?;
    let mut rows = Vec::new();
    let mut passed = true;
    for &t in &cfg.contraction.as_ref().expect("resolved").times {
        let r = contraction_check(&model, &a, &b, &window, t, cfg.replicates(), cfg.seed, &|x: &Site| w(x), c_wa)?;
        passed &= r.holds;
        rows.push(vec![
            r.t.to_string(),
            r.lhs.to_string(),
            r.se.to_string(),
            r.initial_distance.to_string(),
            r.bound.to_string(),
            c_wa.to_string(),
            r.replicates.to_string(),
            u8::from(r.holds).to_string(),
        ]);
    }
    Ok(Outcome {
        files: vec![(
            "contraction.csv".into(),
            table(
                &preamble(cfg, hash),
                &["t", "distance", "se", "initial_distance", "bound", "c_wa", "replicates", "holds"],
                &rows,
            ),
        )],
        passed: Some(passed),
        summary: format!("contraction: c_wa={c_wa} holds={passed}"),
    })
}

fn observable(spec: &FunctionSpec, window: &Window) -> Result<CylindricalFunction, Failure> {
    let dim = window.dim();
    Ok(match spec {
        FunctionSpec::Truncated { site: x, k } => CylindricalFunction::truncated_count(site(x, dim)?, *k),
        FunctionSpec::Mass => CylindricalFunction::linear(
            "mass",
            window.sites().iter().map(|x| (*x, 1.0)).collect(),
        ),
        FunctionSpec::WeightedMass { exponent } => {
            let p = *exponent;
            CylindricalFunction::weighted_mass(window, &|x: &Site| {
                1.0 / (1.0 + (x.norm1() as f64).powf(p))
            })
        }
        FunctionSpec::Linear { terms } => {
            let mut t = Vec::with_capacity(terms.len());
            for (x, c) in terms {
                t.push((site(x, dim)?, *c));
            }
            CylindricalFunction::linear("linear", t)
        }
        FunctionSpec::Product { sites: (a, b) } => {
            let (a, b) = (site(a, dim)?, site(b, dim)?);
            let radius = a.norm1().max(b.norm1()) as u32;
            CylindricalFunction::general(format!("eta({a})*eta({b})"), radius, f64::INFINITY, move |st| {
                st.get(&a) as f64 * st.get(&b) as f64
            })
        }
    })
}

fn martingale(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome, Failure> {
    let Setup { window, model } = setup(cfg)?;
    let block = cfg.martingale.as_ref().expect("resolved");
    let eta0 = cfg.initial.as_ref().expect("resolved").build(&window)?;
    let mut rows = Vec::new();
    let mut passed = true;
    for spec in &block.functions {
        let f = observable(spec, &window)?;
        let r = martingale_residual(
            &f,
            &model,
            &window,
            &eta0,
            block.horizon,
            cfg.replicates(),
            cfg.seed,
            cfg.max_events(),
        )?;
        passed &= r.passes();
        rows.push(vec![
            f.name().to_string(),
            r.t.to_string(),
            r.replicates.to_string(),
            r.residual.to_string(),
            r.stderr.to_string(),
            u8::from(r.passes()).to_string(),
        ]);
    }
    Ok(Outcome {
        files: vec![(
            "martingale.csv".into(),
            table(
                &preamble(cfg, hash),
                &["function", "t", "replicates", "residual", "stderr", "passes"],
                &rows,
            ),
        )],
        passed: Some(passed),
        summary: format!("martingale: {} functions, all within 3 stderr: {passed}", rows.len()),
    })
}

fn v_weight(exponent: f64) -> SiteFn {
    Arc::new(move |x: &Site| 1.0 / (1.0 + (x.norm1() as f64).powf(exponent)))
}

/// The drift fit, or check, on `[drift]` samples.
fn fit_drift(cfg: &ExperimentConfig, window: &Window, model: &Arc<dyn RateModel>) -> Result<(DriftReport, LyapunovSpec), Failure> {
    let d = cfg.drift.as_ref().expect("resolved");
    let dim = window.dim();
    let (w, _, a) = weight_pair(cfg, model.as_ref(), dim)?;
    let v = v_weight(d.v_exponent.expect("resolved"));
    let radius = window.radius().unwrap_or_else(|| window.extent() as u32);
    let mut spec = LyapunovSpec::new(dim, v.clone(), w.as_ref(), &a, radius)?;
    if let (Some(c1), Some(c2)) = (d.c1, d.c2) {
        spec = spec.with_constants(c1, c2);
    }
    let layout = layout_for(window, &[model.as_ref()]).map_err(|e| Failure::Config(e.to_string()))?;
    let samples = sample_configurations(&layout, v.as_ref(), d.v_max, d.samples, cfg.seed);
    let report = drift_check(&spec, model.as_ref(), &samples, &default_c2_grid())?;
    Ok((report, spec))
}

#[derive(serde::Serialize)]
struct DriftSummary {
    c1: f64,
    c2: f64,
    fitted: bool,
    samples: usize,
    violations: usize,
    c_va: f64,
    /// A `c1` valid on every configuration, for BPDL models.
    certified_c1: Option<f64>,
}

fn drift(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome, Failure> {
    let Setup { window, model } = setup(cfg)?;
    let (report, spec) = fit_drift(cfg, &window, &model)?;
    let v = v_weight(cfg.drift.as_ref().expect("resolved").v_exponent.expect("resolved"));
    let certified = match cfg.model.as_ref().expect("resolved").bpdl(window.dim())? {
        Some(m) => bpdl_drift_bound(&m, &window, v.as_ref(), report.c2),
        None => None,
    };
    let summary = DriftSummary {
        c1: report.c1,
        c2: report.c2,
        fitted: report.fitted,
        samples: report.samples,
        violations: report.violations,
        c_va: spec.c_va,
        certified_c1: certified,
    };
    let passed = report.violations == 0;
    Ok(Outcome {
        files: vec![
            ("drift.csv".into(), report.to_csv(&preamble(cfg, hash))),
            ("drift.json".into(), json(&summary)),
        ],
        passed: Some(passed),
        summary: format!(
            "drift: c1={} c2={} violations={} of {}",
            report.c1, report.c2, report.violations, report.samples
        ),
    })
}

fn occupation(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome, Failure> {
    let Setup { window, model } = setup(cfg)?;
    let block = cfg.occupation.as_ref().expect("resolved");
    let (c1, c2) = match (block.c1, block.c2) {
        (Some(c1), Some(c2)) => (c1, c2),
        _ => {
            let (r, _) = fit_drift(cfg, &window, &model)?;
            (r.c1, r.c2)
        }
    };
    let v = v_weight(cfg.drift.as_ref().expect("resolved").v_exponent.expect("resolved"));
    let rows = occupation_measure(
        &model,
        &window,
        &|x: &Site| v(x),
        &block.ns,
        &block.rs,
        cfg.seed,
        cfg.replicates(),
        cfg.max_events(),
        Some((c1, c2)),
    )?;
    let passed = rows.iter().all(|r| r.holds != Some(false));
    let mut params = preamble(cfg, hash);
    params.push(("c1", c1.to_string()));
    params.push(("c2", c2.to_string()));
    Ok(Outcome {
        files: vec![("occupation.csv".into(), occupation_csv(&rows, &params))],
        passed: Some(passed),
        summary: format!("occupation: c1={c1} c2={c2} {} rows, bound holds: {passed}", rows.len()),
    })
}

fn survival(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome, Failure> {
    let b = cfg.survival.as_ref().expect("resolved");
    let mut setup = SurvivalSetup::new(b.dim, 0, 0.0, cfg.seed);
    setup.g = b.g.death_curve();
    setup.max_events = cfg.max_events();
    let rows = survival_sweep(&setup, &b.lambdas, &b.horizons, &b.radii, cfg.replicates())?;
    let mut params = preamble(cfg, hash);
    params.push(("g", b.g.death_curve().tag().to_string()));
    Ok(Outcome {
        files: vec![("survival.csv".into(), sweep_csv(&rows, &params))],
        passed: None,
        summary: format!("survival-sweep: {} estimates", rows.len()),
    })
}

fn bracket(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let b = cfg.bracket.as_ref().expect("resolved");
    let mut setup = SurvivalSetup::new(b.dim, b.radius, b.horizon, cfg.seed);
    setup.g = b.g.death_curve();
    setup.max_events = cfg.max_events();
    let opts = BracketOptions {
        lo: b.lo,
        hi: b.hi,
        tol: b.tol,
        threshold: b.threshold,
        initial_replicates: b.initial_replicates,
        max_replicates: b.max_replicates,
    };
    let result = bracket_lambda_c(&setup, &opts)?;
    let rows: Vec<Vec<String>> = result
        .decisions
        .iter()
        .map(|d| {
            let e = &d.estimate;
            vec![
                e.lambda.to_string(),
                e.replicates.to_string(),
                e.survivors.to_string(),
                e.p_hat.to_string(),
                e.ci95.0.to_string(),
                e.ci95.1.to_string(),
                u8::from(d.survives).to_string(),
            ]
        })
        .collect();
    Ok(Outcome {
        files: vec![
            ("bracket.json".into(), json(&result)),
            (
                "bracket.csv".into(),
                table(
                    &[("experiment", "bracket".into()), ("seed", cfg.seed.to_string())],
                    &["lambda", "replicates", "survivors", "p_hat", "ci_lo", "ci_hi", "survives"],
                    &rows,
                ),
            ),
        ],
        passed: None,
        summary: format!("bracket: [{}, {}] after {} decisions", result.lo, result.hi, rows.len()),
    })
}

fn window_conv(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome, Failure> {
    let b = cfg.window_convergence.as_ref().expect("resolved");
    let model = cfg.model.as_ref().expect("resolved").build(b.dim)?;
    let eta0 = cfg.initial.as_ref().expect("resolved").counts(b.dim)?;
    let rows = window_convergence(&model, &eta0, b.horizon, &b.radii, cfg.seed, cfg.replicates(), cfg.max_events())?;
    let mut out = Vec::new();
    for r in &rows {
        for (n, p) in r.law.iter().enumerate() {
            out.push(vec![
                r.radius.to_string(),
                r.tv_to_previous.map(|t| t.to_string()).unwrap_or_default(),
                n.to_string(),
                p.to_string(),
            ]);
        }
    }
    let last = rows.last().and_then(|r| r.tv_to_previous);
    Ok(Outcome {
        files: vec![(
            "window_convergence.csv".into(),
            table(&preamble(cfg, hash), &["radius", "tv_to_previous", "n", "probability"], &out),
        )],
        passed: None,
        summary: format!("window-convergence: {} radii, last tv={last:?}", rows.len()),
    })
}
