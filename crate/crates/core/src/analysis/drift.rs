use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use super::{eval_generator, CylindricalFunction};
use crate::engine::{try_replicates, Gillespie, Simulator};
use crate::error::{AnalysisError, EngineError};
use crate::kernel::{FiniteKernel, SiteFn};
use crate::lattice::{Layout, Site, State, Window};
use crate::rates::{layout_for, BpdlModel, RateModel};
use crate::rng::{Channel, NoiseStream, StreamKey};
use crate::stats::MeanSe;

/// A Lyapunov weight `v` with its constant `c_va`, the least `c` such that
/// `sum_y v(y) a(x - y) <= c v(x)` on the validation ball.
#[derive(Clone)]
pub struct LyapunovSpec {
    v: SiteFn,
    pub dim: usize,
    pub c_va: f64,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub validation_radius: u32,
    /// `sum v` over the validation ball.
    pub v_sum: f64,
}

impl std::fmt::Debug for LyapunovSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LyapunovSpec")
            .field("dim", &self.dim)
            .field("c_va", &self.c_va)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .field("validation_radius", &self.validation_radius)
            .finish()
    }
}

impl LyapunovSpec {
    /// Checks on the ball of `radius` that `v` is positive and even, that
    /// `v / w` does not decrease from one `|x|_1` shell to the next, and
    /// computes `c_va`.
    pub fn new(
        dim: usize,
        v: SiteFn,
        w: &dyn Fn(&Site) -> f64,
        a: &FiniteKernel,
        radius: u32,
    ) -> Result<Self, AnalysisError> {
        let sites = Site::ball(dim, radius);
        let mut shells = vec![(f64::INFINITY, 0.0f64); radius as usize + 1];
        let mut c_va: f64 = 0.0;
        let mut v_sum = 0.0;
        for x in &sites {
            let vx = v(x);
            if !(vx.is_finite() && vx > 0.0) {
                return Err(AnalysisError::Lyapunov(format!("v({x}) = {vx} is not positive")));
            }
            let vm = v(&x.neg());
            if (vx - vm).abs() > 1e-12 * vx {
                return Err(AnalysisError::Lyapunov(format!("v not even at {x}")));
            }
            let wx = w(x);
            if !(wx > 0.0) {
                return Err(AnalysisError::Lyapunov(format!("w({x}) = {wx} is not positive")));
            }
            let k = x.norm1() as usize;
            let r = vx / wx;
            shells[k] = (shells[k].0.min(r), shells[k].1.max(r));
            let conv: f64 = a.entries().iter().map(|(z, az)| az * v(&x.sub(z))).sum();
            c_va = c_va.max(conv / vx);
            v_sum += vx;
        }
        for k in 1..shells.len() {
            if shells[k].0 < shells[k - 1].1 * (1.0 - 1e-12) {
                return Err(AnalysisError::Lyapunov(format!(
                    "v/w decreases between shells {} and {k}",
                    k - 1
                )));
            }
        }
        Ok(LyapunovSpec {
            v,
            dim,
            c_va,
            c1: None,
            c2: None,
            validation_radius: radius,
            v_sum,
        })
    }

    pub fn with_constants(self, c1: f64, c2: f64) -> Self {
        LyapunovSpec {
            c1: Some(c1),
            c2: Some(c2),
            ..self
        }
    }

    pub fn v(&self, x: &Site) -> f64 {
        (self.v)(x)
    }

    pub fn v_fn(&self) -> &SiteFn {
        &self.v
    }

    /// `V` restricted to `window`.
    pub fn functional(&self, window: &Window) -> CylindricalFunction {
        CylindricalFunction::weighted_mass(window, &*self.v)
    }
}

/// `(V(eta), LV(eta))` for one sampled configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftRow {
    pub v: f64,
    pub lv: f64,
}

/// Smallest admissible `c1` for one `c2` of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftFit {
    pub c2: f64,
    pub c1: f64,
}

/// Outcome of checking `LV <= c1 - c2 V` over a sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub c1: f64,
    pub c2: f64,
    /// Constants were fitted rather than given.
    pub fitted: bool,
    pub samples: usize,
    pub violations: usize,
    pub first_violation: Option<usize>,
    pub grid: Vec<DriftFit>,
    pub rows: Vec<DriftRow>,
}

/// `c2` values tried when fitting: `2^{k/4}` for `k = -24..=12`.
pub fn default_c2_grid() -> Vec<f64> {
    (-24..=12).map(|k| 2f64.powf(k as f64 / 4.0)).collect()
}

fn violated(row: &DriftRow, c1: f64, c2: f64) -> bool {
    let rhs = c1 - c2 * row.v;
    row.lv > rhs + 1e-9 * (1.0 + rhs.abs().max(row.lv.abs()))
}

/// Evaluates `V` and `LV` on every sample and checks the drift inequality.
///
/// Without constants in `spec`, each `c2` of `c2_grid` gets the least
/// `c1 >= 0` with `LV <= c1 - c2 V` on the whole sample (the linear
/// programme in `c1` alone, solved exactly), and the pair minimizing
/// `c1 / c2` is reported.
pub fn drift_check(
    spec: &LyapunovSpec,
    model: &dyn RateModel,
    samples: &[State],
    c2_grid: &[f64],
) -> Result<DriftReport, AnalysisError> {
    let Some(first) = samples.first() else {
        return Err(AnalysisError::Argument("empty sample".into()));
    };
    let vf = spec.functional(first.layout().window());
    let rows: Vec<DriftRow> = samples
        .iter()
        .map(|st| DriftRow {
            v: vf.eval(st),
            lv: eval_generator(&vf, st, model),
        })
        .collect();
    let (c1, c2, fitted, grid) = match (spec.c1, spec.c2) {
        (Some(c1), Some(c2)) => (c1, c2, false, Vec::new()),
        _ => {
            if c2_grid.is_empty() || c2_grid.iter().any(|c| !(*c > 0.0)) {
                return Err(AnalysisError::Argument("c2 grid must be non-empty and positive".into()));
            }
            let grid: Vec<DriftFit> = c2_grid
                .iter()
                .map(|&c2| DriftFit {
                    c2,
                    c1: rows.iter().map(|r| r.lv + c2 * r.v).fold(0.0, f64::max),
                })
                .collect();
            let best = grid
                .iter()
                .min_by(|a, b| (a.c1 / a.c2).total_cmp(&(b.c1 / b.c2)))
                .copied()
                .expect("grid is non-empty");
            (best.c1, best.c2, true, grid)
        }
    };
    let bad: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| violated(r, c1, c2))
        .map(|(i, _)| i)
        .collect();
    Ok(DriftReport {
        c1,
        c2,
        fitted,
        samples: rows.len(),
        violations: bad.len(),
        first_violation: bad.first().copied(),
        grid,
        rows,
    })
}

impl DriftReport {
    /// `# key=value` lines for `params`, then
    /// `sample,V,LV,bound,slack,violated` with `bound = c1 - c2 V` and
    /// `slack = bound - LV`.
    pub fn to_csv(&self, params: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in params {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "# c1={}", self.c1);
        let _ = writeln!(out, "# c2={}", self.c2);
        let _ = writeln!(out, "# fitted={}", self.fitted);
        out.push_str("sample,V,LV,bound,slack,violated\n");
        for (i, r) in self.rows.iter().enumerate() {
            let bound = self.c1 - self.c2 * r.v;
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{}",
                r.v,
                r.lv,
                bound,
                bound - r.lv,
                u8::from(violated(r, self.c1, self.c2))
            );
        }
        out
    }
}

/// `n` random configurations on `layout` with `V <= v_max`.
///
/// Each sample draws a target `V` uniformly in `[0, v_max]` and drops
/// clumps of 1 to 3 particles, half the time at a uniform site and half the
/// time at a site biased toward the origin, until the target is reached.
pub fn sample_configurations(
    layout: &Arc<Layout>,
    v: &dyn Fn(&Site) -> f64,
    v_max: f64,
    n: u64,
    seed: u64,
) -> Vec<State> {
    let mut by_norm: Vec<usize> = layout.active().to_vec();
    by_norm.sort_by_key(|&x| (layout.site_of(x).norm1(), x));
    let weights: Vec<f64> = by_norm.iter().map(|&x| v(&layout.site_of(x))).collect();
    let len = by_norm.len() as f64;
    (0..n)
        .map(|k| {
            let key = StreamKey {
                site: Site::origin(layout.dim()),
                channel: Channel::Clock,
                replicate: k,
                lane: 0x00fe_0000,
            };
            let mut rng = NoiseStream::new(seed, key).rng();
            let mut st = State::empty(layout.clone());
            let target = rng.uniform() * v_max;
            let mut total = 0.0;
            let mut misses = 0;
            while misses < 20 {
                let u = rng.uniform();
                let j = if rng.uniform() < 0.5 {
                    (u * len) as usize
                } else {
                    (u * u * len) as usize
                }
                .min(by_norm.len() - 1);
                let clump = 1 + (rng.next_u64() % 3) as u32;
                let add = weights[j] * clump as f64;
                if total + add <= target {
                    let x = by_norm[j];
                    st.set(x, st.at(x) + clump);
                    total += add;
                } else {
                    misses += 1;
                }
            }
            st
        })
        .collect()
}

/// A `c1` valid for every configuration on `window`, for the BPDL model
/// with constant `c2`, or `None` if none exists.
///
/// Writing `A_y = sum_{z: y + z in window} a+(z) v(y + z)`,
/// `LV + c2 V <= b0 sum v + sum_y max_n [n (A_y - (m - c2) v(y)) - a-(0) v(y) n^2]`
/// because the off-origin competition terms are non-positive. The
/// per-site maxima run over integers `n >= 0`.
pub fn bpdl_drift_bound(
    model: &BpdlModel,
    window: &Window,
    v: &dyn Fn(&Site) -> f64,
    c2: f64,
) -> Option<f64> {
    let p = model.params();
    let a0 = p.a_minus.value(&Site::origin(window.dim()));
    let mut total = 0.0;
    for y in window.sites() {
        let vy = v(y);
        total += p.b0 * vy;
        let a_y: f64 = p
            .a_plus
            .entries()
            .iter()
            .filter(|(z, _)| window.contains(&y.add(z)))
            .map(|(z, az)| az * v(&y.add(z)))
            .sum();
        let kappa = a_y - (p.m - c2) * vy;
        let q = a0 * vy;
        if q <= 0.0 {
            if kappa > 0.0 {
                return None;
            }
            continue;
        }
        let star = (kappa / (2.0 * q)).max(0.0);
        let best = [star.floor(), star.ceil()]
            .iter()
            .map(|&n| n * kappa - q * n * n)
            .fold(0.0, f64::max);
        total += best;
    }
    Some(total)
}

/// Time-averaged fraction of `[0, n]` spent in `{V <= r}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupationRow {
    pub n: f64,
    pub r: f64,
    pub replicates: u64,
    pub mu_hat: f64,
    pub se: f64,
    /// `1 - c1/(c2 r)`, when drift constants were supplied.
    pub bound: Option<f64>,
    /// `mu_hat >= bound - 3 se`.
    pub holds: Option<bool>,
}

/// Estimates `mu_n(K_r) = (1/n) int_0^n P{V(eta_s) <= r} ds` from the
/// empty configuration, with exact time accounting along each path. `ns`
/// must be increasing.
#[allow(clippy::too_many_arguments)]
pub fn occupation_measure<M: RateModel>(
    model: &M,
    window: &Window,
    v: &(dyn Fn(&Site) -> f64 + Sync),
    ns: &[f64],
    rs: &[f64],
    seed: u64,
    replicates: u64,
    max_events: u64,
    drift: Option<(f64, f64)>,
) -> Result<Vec<OccupationRow>, EngineError> {
    if ns.is_empty() || ns.windows(2).any(|p| p[0] >= p[1]) || ns[0] <= 0.0 {
        return Err(EngineError::Argument("n grid must be positive and increasing".into()));
    }
    let layout = layout_for(window, &[model])?;
    let vw: Vec<f64> = (0..layout.grid_len())
        .map(|i| if layout.is_active(i) { v(&layout.site_of(i)) } else { 0.0 })
        .collect();
    let per_rep = try_replicates(replicates, |rep| -> Result<Vec<f64>, EngineError> {
        let mut sim = Gillespie::new(model, State::empty(layout.clone()), seed, rep, max_events)?;
        let mut vnow = 0.0;
        let mut inside = vec![0.0; rs.len()];
        let mut last = 0.0;
        let mut out = Vec::with_capacity(ns.len() * rs.len());
        let credit = |inside: &mut [f64], vnow: f64, dt: f64| {
            for (acc, &r) in inside.iter_mut().zip(rs) {
                if vnow <= r {
                    *acc += dt;
                }
            }
        };
        for &n in ns {
            while let Some(e) = sim.next_event(n)? {
                credit(&mut inside, vnow, e.time - last);
                last = e.time;
                vnow += vw[e.idx] * e.delta as f64;
            }
            credit(&mut inside, vnow, n - last);
            last = n;
            out.extend(inside.iter().map(|t| t / n));
        }
        Ok(out)
    })?;
    let mut rows = Vec::with_capacity(ns.len() * rs.len());
    for (i, &n) in ns.iter().enumerate() {
        for (j, &r) in rs.iter().enumerate() {
            let xs: Vec<f64> = per_rep.iter().map(|p| p[i * rs.len() + j]).collect();
            let m = MeanSe::of(&xs);
            let bound = drift.map(|(c1, c2)| 1.0 - c1 / (c2 * r));
            rows.push(OccupationRow {
                n,
                r,
                replicates,
                mu_hat: m.mean,
                se: m.se,
                bound,
                holds: bound.map(|b| m.mean >= b - 3.0 * m.se),
            });
        }
    }
    Ok(rows)
}

/// `# key=value` lines, then `n,r,replicates,mu_hat,se,bound,holds`
/// (the last two empty without drift constants).
pub fn occupation_csv(rows: &[OccupationRow], params: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in params {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str("n,r,replicates,mu_hat,se,bound,holds\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n,
            r.r,
            r.replicates,
            r.mu_hat,
            r.se,
            r.bound.map(|b| b.to_string()).unwrap_or_default(),
            r.holds.map(|h| u8::from(h).to_string()).unwrap_or_default()
        );
    }
    out
}
