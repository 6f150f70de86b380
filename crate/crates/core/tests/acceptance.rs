//! Acceptance criteria 1 to 11, run in order on the current rayon pool.
//!
//! Every criterion prints one `PASS` or `FAIL` line; the test fails if any
//! criterion does. Lines go straight to stderr so they show without
//! `--nocapture`.

use std::io::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bdlattice::analysis::{
    default_c2_grid, drift_check, eval_generator, martingale_residual, occupation_csv,
    occupation_measure, sample_configurations, bpdl_drift_bound, CylindricalFunction,
    LyapunovSpec,
};
use bdlattice::coupling::{contraction_check, coupled_replicates, PairOptions};
use bdlattice::engine::{
    final_state, initial_state, run, try_replicates, with_workers, Algorithm, RunOptions,
    DEFAULT_MAX_EVENTS,
};
use bdlattice::kernel::{make_kernel, FiniteKernel, KernelFamily, KernelParams, SiteFn};
use bdlattice::lattice::{Configuration, Site, Window};
use bdlattice::oracle::{build_generator, transient, CappedStateSpace};
use bdlattice::rates::{layout_for, BpdlModel, BpdlParams, CapSuppressed, ContactModel};
use bdlattice::rng::{Channel, NoiseStream, StreamKey};
use bdlattice::stats::{tv_distance, Empirical};
use bdlattice::survival::{
    bracket_lambda_c, contact_domination, estimate_survival, lambda_monotonicity, survival_sweep,
    sweep_csv, BracketOptions, SurvivalSetup,
};

const SEED: u64 = 20_240_611;

fn report(id: u32, pass: bool, detail: String) -> bool {
    let line = format!("criterion {id:>2}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn site(x: i32) -> Site {
    Site::new(&[x]).unwrap()
}

fn point(window: &Window, n: u32) -> Configuration {
    Configuration::point_mass(Arc::new(window.clone()), n).unwrap()
}

fn bpdl(a_plus: FiniteKernel, a_minus: FiniteKernel) -> BpdlModel {
    BpdlModel::new(BpdlParams {
        b0: 1.0,
        m: 1.0,
        a_plus,
        a_minus,
    })
    .unwrap()
}

/// `a+ = 0.3 I{|x| <= 1}`, competition `0.2` at the origin only.
fn local_bpdl() -> BpdlModel {
    bpdl(
        FiniteKernel::indicator(1, 0.3, 1).unwrap(),
        FiniteKernel::point(1, 0.2).unwrap(),
    )
}

/// `a+ = 0.3 I{|x| <= 1}`, `a- = 0.2 I{|x| <= 1}`.
fn ranged_bpdl() -> BpdlModel {
    bpdl(
        FiniteKernel::indicator(1, 0.3, 1).unwrap(),
        FiniteKernel::indicator(1, 0.2, 1).unwrap(),
    )
}

fn oracle_windows() -> Vec<(&'static str, Window)> {
    vec![
        ("1-site", Window::ball(1, 0).unwrap()),
        ("2-site", Window::from_sites(1, &[site(0), site(1)]).unwrap()),
    ]
}

fn capped_model() -> CapSuppressed<BpdlModel> {
    CapSuppressed::new(
        bpdl(FiniteKernel::point(1, 0.3).unwrap(), FiniteKernel::point(1, 0.2).unwrap()),
        5,
    )
}

const ORACLE_REPS: u64 = 100_000;
const ORACLE_TIMES: [f64; 3] = [0.1, 0.5, 1.0];

/// Empirical law of the state index at `t` on the capped space.
fn empirical(
    space: &CappedStateSpace,
    model: &CapSuppressed<BpdlModel>,
    window: &Window,
    t: f64,
    algorithm: Algorithm,
) -> Empirical {
    let st = initial_state(model, window, &point(window, 1)).unwrap();
    let opts = RunOptions::new(t, SEED).algorithm(algorithm);
    let idx = try_replicates(ORACLE_REPS, |r| {
        final_state(model, st.clone(), &opts.replicate(r))
            .map(|s| space.index_of_state(&s).expect("cap-suppressed run stays in the space"))
    })
    .unwrap();
    Empirical::from_samples(space.len(), idx)
}

fn criterion_1_and_2() -> (bool, bool) {
    let model = capped_model();
    let (mut ok1, mut ok2) = (true, true);
    for (name, window) in oracle_windows() {
        let space = CappedStateSpace::new(Arc::new(window.clone()), 5).unwrap();
        let gen = build_generator(&space, &model).unwrap();
        let pi0 = space.point_mass(&point(&window, 1)).unwrap();
        for t in ORACLE_TIMES {
            let exact = transient(&gen, &pi0, t);
            let clock = Instant::now();
            let g = empirical(&space, &model, &window, t, Algorithm::Gillespie);
            let took = clock.elapsed();
            let (tv, z) = (g.tv(&exact), g.max_z(&exact));
            ok1 &= report(
                1,
                tv <= 0.02 && z <= 3.0 && took <= Duration::from_secs(120),
                format!("{name} t={t}: TV={tv:.5} max|z|={z:.2} {:.1}s", secs(took)),
            );
            let th = empirical(&space, &model, &window, t, Algorithm::Thinning);
            let tv_pair = tv_distance(&g.probabilities(), &th.probabilities());
            ok2 &= report(
                2,
                tv_pair <= 0.02,
                format!(
                    "{name} t={t}: TV(gillespie, thinning)={tv_pair:.5} TV(thinning, exact)={:.5}",
                    th.tv(&exact)
                ),
            );
        }
    }
    (ok1, ok2)
}

fn criterion_3() -> bool {
    let model = local_bpdl();
    let window = Window::ball(1, 5).unwrap();
    let opts = PairOptions::new(1.0, SEED);
    let s = coupled_replicates(
        &model,
        &model,
        &window,
        &point(&window, 1),
        &point(&window, 2),
        &opts,
        10_000,
    )
    .unwrap();
    report(
        3,
        s.domination.clean && s.inclusion_failures == 0 && s.claim,
        format!(
            "violations={} inclusion_failures={} hypotheses_hold={} over {} replicates",
            u64::from(!s.domination.clean),
            s.inclusion_failures,
            s.hypotheses.holds(),
            s.domination.replicates
        ),
    )
}

fn criterion_4() -> bool {
    let setup = SurvivalSetup::new(1, 10, 2.0, SEED);
    let mut ok = true;
    let m = lambda_monotonicity(&setup, 0.5, 1.0, 10_000).unwrap();
    ok &= report(
        4,
        m.domination.clean && m.indicator_violations == 0,
        format!(
            "lambda 0.5 <= 1.0: clean={} indicator_violations={} survivors {} <= {}",
            m.domination.clean, m.indicator_violations, m.lower_survivors, m.upper_survivors
        ),
    );
    for lambda in [0.5, 1.0] {
        let c = contact_domination(&setup, lambda, 10_000).unwrap();
        ok &= report(
            4,
            c.domination.clean && c.indicator_violations == 0,
            format!(
                "contact <= branch-local at lambda={lambda}: clean={} indicator_violations={}",
                c.domination.clean, c.indicator_violations
            ),
        );
    }
    ok
}

fn criterion_5() -> bool {
    let model = local_bpdl();
    let window = Window::ball(1, 5).unwrap();
    let pair = make_kernel(
        KernelFamily::ExpIndicator,
        KernelParams {
            q: Some(1.0),
            c: Some(0.3),
            k: Some(1),
            p: None,
        },
        1,
    )
    .unwrap();
    let e = std::f64::consts::E;
    let expected = 0.3 * (e + 1.0 + 1.0 / e);
    let w = pair.w.clone();
    let mut ok = report(
        5,
        (pair.c_wa - expected).abs() <= 1e-9,
        format!("c_wa={:.12} for a = 0.3 I{{|x| <= 1}}", pair.c_wa),
    );
    for t in [0.25, 0.5] {
        let r = contraction_check(
            &model,
            &point(&window, 1),
            &point(&window, 2),
            &window,
            t,
            10_000,
            SEED,
            &|x: &Site| w(x),
            pair.c_wa,
        )
        .unwrap();
        ok &= report(
            5,
            r.holds,
            format!("t={t}: E dist={:.5} se={:.5} bound={:.5}", r.lhs, r.se, r.bound),
        );
    }
    ok
}

fn criterion_6() -> bool {
    let clock = Instant::now();
    let window = Window::ball(1, 4).unwrap();
    let contact = ContactModel::new(1.5).unwrap();
    let model = ranged_bpdl();
    let v = |x: &Site| 1.0 / (1.0 + (x.norm1() * x.norm1()) as f64);
    let product = CylindricalFunction::general("eta(0)*eta(1)", 1, f64::INFINITY, |st| {
        st.get(&site(0)) as f64 * st.get(&site(1)) as f64
    });
    let mass = CylindricalFunction::linear(
        "mass",
        window.sites().iter().map(|x| (*x, 1.0)).collect(),
    );
    let reps = 100_000;
    let mut ok = true;
    let mut check = |label: &str, r: bdlattice::analysis::Residual| {
        ok &= report(
            6,
            r.passes(),
            format!("{label}: residual={:.3e} stderr={:.3e}", r.residual, r.stderr),
        );
    };
    let start = point(&window, 1);
    let start2 = point(&window, 2);
    let run_c = |f: &CylindricalFunction| {
        martingale_residual(f, &contact, &window, &start, 1.0, reps, SEED, DEFAULT_MAX_EVENTS).unwrap()
    };
    let run_b = |f: &CylindricalFunction| {
        martingale_residual(f, &model, &window, &start2, 1.0, reps, SEED, DEFAULT_MAX_EVENTS).unwrap()
    };
    check("contact, I{eta(0) >= 1}", run_c(&CylindricalFunction::truncated_count(site(0), 1)));
    check("contact, total mass", run_c(&mass));
    check("bpdl, V = sum v eta", run_b(&CylindricalFunction::weighted_mass(&window, &v)));
    check("bpdl, eta(0)*eta(1)", run_b(&product));
    check("bpdl, min(eta(0), 3)", run_b(&CylindricalFunction::truncated_count(site(0), 3)));
    let took = clock.elapsed();
    report(
        6,
        ok && took <= Duration::from_secs(300),
        format!("battery of 5 at 10^5 replicates in {:.1}s", secs(took)),
    )
}

fn criterion_7() -> bool {
    let model = ranged_bpdl();
    let window = Window::ball(1, 50).unwrap();
    let v: SiteFn = Arc::new(|x: &Site| 1.0 / (1.0 + (x.norm1() * x.norm1()) as f64));
    let w = |x: &Site| (-(x.norm1() as f64)).exp();
    let spec = LyapunovSpec::new(1, v.clone(), &w, &model.params().a_plus, 50).unwrap();
    let layout = layout_for(&window, &[&model]).unwrap();
    let samples = sample_configurations(&layout, v.as_ref(), 100.0, 10_000, SEED);
    let fit = drift_check(&spec, &model, &samples, &default_c2_grid()).unwrap();
    let certified = bpdl_drift_bound(&model, &window, v.as_ref(), fit.c2);
    let mut ok = report(
        7,
        fit.violations == 0 && certified.is_some_and(|c| fit.c1 <= c + 1e-9),
        format!(
            "fit c1={:.4} c2={:.4} violations={} over {} configurations; certified c1={:?}",
            fit.c1, fit.c2, fit.violations, fit.samples, certified
        ),
    );
    let rows = occupation_measure(
        &model,
        &window,
        v.as_ref(),
        &[10.0, 50.0],
        &[5.0, 10.0, 20.0],
        SEED,
        2_000,
        DEFAULT_MAX_EVENTS,
        Some((fit.c1, fit.c2)),
    )
    .unwrap();
    for r in rows {
        ok &= report(
            7,
            r.holds == Some(true),
            format!(
                "n={} r={}: mu_hat={:.4} se={:.4} bound={:.4}",
                r.n,
                r.r,
                r.mu_hat,
                r.se,
                r.bound.unwrap_or(f64::NAN)
            ),
        );
    }
    ok
}

fn criterion_8() -> bool {
    let window = Window::from_sites(1, &[site(0), site(1)]).unwrap();
    let model = CapSuppressed::new(ranged_bpdl(), 4);
    let space = CappedStateSpace::new(Arc::new(window.clone()), 4).unwrap();
    let gen = build_generator(&space, &model).unwrap();
    let layout = layout_for(&window, &[&model]).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let key = StreamKey {
            site: Site::origin(1),
            channel: Channel::Clock,
            replicate: k,
            lane: 8,
        };
        let mut rng = NoiseStream::new(SEED, key).rng();
        let table: Vec<f64> = (0..space.len()).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let values = Arc::new(table.clone());
        let space_f = space.clone();
        let f = CylindricalFunction::general(format!("random {k}"), 1, f64::INFINITY, move |st| {
            let occ = [st.get(&site(0)), st.get(&site(1))];
            space_f.index(&occ).map_or(0.0, |i| values[i])
        });
        let qf = gen.apply(&table);
        for (i, qfi) in qf.iter().enumerate() {
            let lf = eval_generator(&f, &space.state(i, &layout), &model);
            worst = worst.max((lf - qfi).abs());
        }
    }
    report(
        8,
        worst <= 1e-12,
        format!("max |LF - QF| = {worst:.3e} over 20 functions, {} states", space.len()),
    )
}

fn criterion_9() -> bool {
    let clock = Instant::now();
    let setup = SurvivalSetup::new(1, 20, 50.0, SEED);
    let low = estimate_survival(&setup, 0.1, 10_000).unwrap();
    let high = estimate_survival(&setup, 4.0, 10_000).unwrap();
    let opts = BracketOptions::default();
    let bracket = bracket_lambda_c(&setup, &opts).unwrap();
    let took = clock.elapsed();
    let guarded = bracket.decisions.iter().all(|d| {
        let (lo, hi) = d.estimate.ci95;
        if d.survives {
            lo > opts.threshold
        } else {
            hi < opts.threshold
        }
    });
    let mut ok = report(
        9,
        low.p_hat < 0.01,
        format!("p_hat(0.1)={:.4} ci={:.4?}", low.p_hat, low.ci95),
    );
    ok &= report(
        9,
        high.p_hat > 0.2,
        format!("p_hat(4.0)={:.4} ci={:.4?}", high.p_hat, high.ci95),
    );
    ok &= report(
        9,
        bracket.hi - bracket.lo <= 0.25 && bracket.lo > 0.0 && bracket.hi < 4.0 && guarded,
        format!(
            "bracket [{}, {}] from {} guarded decisions",
            bracket.lo,
            bracket.hi,
            bracket.decisions.len()
        ),
    );
    report(
        9,
        ok && took <= Duration::from_secs(600),
        format!("survival regimes and bracket in {:.1}s", secs(took)),
    )
}

fn criterion_10() -> bool {
    let e = std::f64::consts::E;
    let ii = make_kernel(
        KernelFamily::ExpIndicator,
        KernelParams {
            q: Some(1.0),
            c: Some(1.0),
            k: Some(1),
            p: None,
        },
        1,
    )
    .unwrap();
    let ok_ii = (ii.c_wa - (e + 1.0 + 1.0 / e)).abs() <= 1e-9;
    let i = make_kernel(
        KernelFamily::ExpExp,
        KernelParams {
            q: Some(2.0),
            p: Some(1.0),
            c: Some(1.0),
            k: None,
        },
        1,
    );
    report(
        10,
        ok_ii && i.is_err(),
        format!("family (ii) c_wa={:.12}; family (i) with p < q rejected: {}", ii.c_wa, i.is_err()),
    )
}

/// CSV and JSONL outputs of a small run of every producer.
fn artifacts() -> Vec<String> {
    let mut out = Vec::new();
    let setup = SurvivalSetup::new(1, 8, 5.0, SEED);
    let rows = survival_sweep(&setup, &[0.5, 2.0], &[5.0], &[8], 400).unwrap();
    out.push(sweep_csv(&rows, &[("seed", SEED.to_string())]));
    let window = Window::ball(1, 6).unwrap();
    let model = ranged_bpdl();
    for r in 0..4 {
        let opts = RunOptions::new(3.0, SEED).replicate(r);
        out.push(run(&model, &window, &point(&window, 2), &opts).unwrap().to_jsonl("h"));
        let opts = opts.algorithm(Algorithm::Thinning);
        out.push(run(&model, &window, &point(&window, 2), &opts).unwrap().to_jsonl("h"));
    }
    let v = |x: &Site| 1.0 / (1.0 + (x.norm1() * x.norm1()) as f64);
    let occ = occupation_measure(&model, &window, &v, &[5.0], &[2.0], SEED, 300, DEFAULT_MAX_EVENTS, None)
        .unwrap();
    out.push(occupation_csv(&occ, &[]));
    let c = coupled_replicates(
        &model,
        &model,
        &window,
        &point(&window, 1),
        &point(&window, 2),
        &PairOptions::new(1.0, SEED),
        300,
    )
    .unwrap();
    out.push(serde_json::to_string(&c).unwrap());
    out
}

fn criterion_11() -> bool {
    let one = with_workers(1, artifacts);
    let four = with_workers(4, artifacts);
    let again = with_workers(4, artifacts);
    let bytes: usize = one.iter().map(String::len).sum();
    report(
        11,
        one == four && four == again,
        format!("{} artifacts, {bytes} bytes, identical across 1 and 4 workers", one.len()),
    )
}

#[test]
fn acceptance_criteria() {
    let (c1, c2) = criterion_1_and_2();
    let results = [
        c1,
        c2,
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
        criterion_11(),
    ];
    let failed: Vec<usize> = (1..=11).filter(|&i| !results[i - 1]).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
