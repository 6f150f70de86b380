//! Exact analysis of tiny capped chains: generator matrix, transient law by
//! uniformization, stationary law by a dense linear solve.
//!
//! Births at a site already holding `cap` particles are dropped, so the
//! matrix describes the cap-suppressed model exactly (see
//! [`crate::rates::CapSuppressed`]).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::OracleError;
use crate::lattice::{Configuration, Layout, State, Window};
use crate::rates::{layout_for, RateModel};

pub const MAX_SITES: usize = 3;
pub const MAX_CAP: u32 = 6;
pub const MAX_STATES: usize = 4096;

/// Every occupancy vector in `{0..=cap}^sites` of a window.
///
/// State `i` has occupancy `(i / (cap+1)^k) mod (cap+1)` at the `k`-th window
/// site.
#[derive(Debug, Clone)]
pub struct CappedStateSpace {
    window: Arc<Window>,
    cap: u32,
    len: usize,
}

impl CappedStateSpace {
    pub fn new(window: Arc<Window>, cap: u32) -> Result<Self, OracleError> {
        let sites = window.len();
        if sites > MAX_SITES || cap > MAX_CAP || sites == 0 {
            return Err(OracleError::Shape { sites, cap });
        }
        let len = (cap as u64 + 1).pow(sites as u32);
        if len > MAX_STATES as u64 {
            return Err(OracleError::TooLarge(len));
        }
        Ok(CappedStateSpace {
            window,
            cap,
            len: len as usize,
        })
    }

    pub fn window(&self) -> &Arc<Window> {
        &self.window
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sites(&self) -> usize {
        self.window.len()
    }

    pub fn occupancies(&self, i: usize) -> Vec<u32> {
        let base = self.cap as usize + 1;
        let mut rem = i;
        (0..self.sites())
            .map(|_| {
                let v = rem % base;
                rem /= base;
                v as u32
            })
            .collect()
    }

    /// `None` when some occupancy exceeds the cap or the length is wrong.
    pub fn index(&self, occupancies: &[u32]) -> Option<usize> {
        if occupancies.len() != self.sites() || occupancies.iter().any(|&v| v > self.cap) {
            return None;
        }
        let base = self.cap as usize + 1;
        Some(
            occupancies
                .iter()
                .rev()
                .fold(0usize, |acc, &v| acc * base + v as usize),
        )
    }

    pub fn configuration(&self, i: usize) -> Configuration {
        let occ = self.occupancies(i);
        Configuration::from_counts(
            self.window.clone(),
            self.window.sites().iter().copied().zip(occ),
        )
        .expect("window sites")
    }

    pub fn state(&self, i: usize, layout: &Arc<Layout>) -> State {
        let mut st = State::empty(layout.clone());
        for (k, v) in self.occupancies(i).into_iter().enumerate() {
            st.set(layout.active()[k], v);
        }
        st
    }

    /// Index of a dense state on this window, if within the cap.
    pub fn index_of_state(&self, st: &State) -> Option<usize> {
        let occ: Vec<u32> = st.layout().active().iter().map(|&x| st.at(x)).collect();
        self.index(&occ)
    }

    /// Point mass on the state matching `config`.
    pub fn point_mass(&self, config: &Configuration) -> Option<Vec<f64>> {
        let occ: Vec<u32> = self.window.sites().iter().map(|s| config.get(s)).collect();
        let i = self.index(&occ)?;
        let mut p = vec![0.0; self.len];
        p[i] = 1.0;
        Some(p)
    }

    /// Law of the total population under `dist`.
    pub fn total_law(&self, dist: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.sites() * self.cap as usize + 1];
        for (i, p) in dist.iter().enumerate() {
            let n: u32 = self.occupancies(i).iter().sum();
            out[n as usize] += p;
        }
        out
    }

    /// `index,occupancies,probability` rows with a header, for inspection.
    pub fn distribution_csv(&self, dist: &[f64]) -> String {
        let mut s = String::from("state,occupancies,probability\n");
        for (i, p) in dist.iter().enumerate() {
            let occ: Vec<String> = self.occupancies(i).iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("{i},{},{p:e}\n", occ.join(" ")));
        }
        s
    }
}

/// Dense generator `Q` of the capped chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    pub q: DMatrix<f64>,
}

impl GeneratorMatrix {
    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.q.nrows() == 0
    }

    /// `(Q f)[s] = sum_t Q[s, t] f(t)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (&self.q * DVector::from_column_slice(f)).as_slice().to_vec()
    }

    pub fn max_abs_row_sum(&self) -> f64 {
        self.q
            .row_iter()
            .map(|r| r.iter().sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

/// `Q[s, s+x] = b(x, s)` for `s(x) < cap`, `Q[s, s-x] = d(x, s)` for
/// `s(x) > 0`, diagonal the negative row sum.
pub fn build_generator(
    space: &CappedStateSpace,
    model: &dyn RateModel,
) -> Result<GeneratorMatrix, OracleError> {
    let layout = layout_for(space.window(), &[model])?;
    let n = space.len();
    let base = space.cap as usize + 1;
    let mut q = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let st = space.state(i, &layout);
        let occ = space.occupancies(i);
        let mut out = 0.0;
        for (k, &x) in layout.active().iter().enumerate() {
            let stride = base.pow(k as u32);
            if occ[k] < space.cap {
                let b = model.birth(x, &st);
                if !(b.is_finite() && b >= 0.0) {
                    return Err(OracleError::InvalidRate { state: i, value: b });
                }
                q[(i, i + stride)] += b;
                out += b;
            }
            if occ[k] > 0 {
                let d = model.death(x, &st);
                if !(d.is_finite() && d >= 0.0) {
                    return Err(OracleError::InvalidRate { state: i, value: d });
                }
                q[(i, i - stride)] += d;
                out += d;
            }
        }
        q[(i, i)] = -out;
    }
    Ok(GeneratorMatrix { q })
}

/// Truncation error allowed in the Poisson mixture.
const UNIFORMIZATION_TAIL: f64 = 1e-12;

/// `pi0 exp(Q t)` by uniformization.
///
/// With `Lambda = max_s |Q[s, s]|` and `P = I + Q / Lambda`, the law is
/// `sum_k Poisson(k; Lambda t) pi0 P^k`; terms are added until the Poisson
/// mass left out is below `1e-12`. Weights are formed in log space so they
/// do not underflow for large `Lambda t`.
pub fn transient(gen: &GeneratorMatrix, pi0: &[f64], t: f64) -> Vec<f64> {
    let n = gen.len();
    assert_eq!(pi0.len(), n, "initial law has the wrong length");
    assert!(t >= 0.0, "negative time");
    let lambda = (0..n).map(|i| -gen.q[(i, i)]).fold(0.0, f64::max);
    if t == 0.0 || lambda == 0.0 {
        return pi0.to_vec();
    }
    let p = DMatrix::<f64>::identity(n, n) + &gen.q / lambda;
    let pt = p.transpose();
    let lt = lambda * t;
    let log_lt = lt.ln();
    let mut v = DVector::from_column_slice(pi0);
    let mut acc = DVector::<f64>::zeros(n);
    let mut log_w = -lt;
    let mut mass = 0.0;
    let k_max = (lt + 60.0 * lt.sqrt() + 200.0) as u64;
    let mut k = 0u64;
    loop {
        let w = log_w.exp();
        acc.axpy(w, &v, 1.0);
        mass += w;
        if (1.0 - mass < UNIFORMIZATION_TAIL && k as f64 >= lt) || k >= k_max {
            break;
        }
        k += 1;
        v = &pt * v;
        log_w += log_lt - (k as f64).ln();
    }
    acc.as_slice().to_vec()
}

/// Closed communicating classes of the chain, each sorted, ordered by
/// smallest member.
pub fn closed_classes(gen: &GeneratorMatrix) -> Vec<Vec<usize>> {
    let n = gen.len();
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && gen.q[(i, j)] > 0.0 {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut class_of = vec![0usize; n];
    let sccs = tarjan_scc(&g);
    for (c, scc) in sccs.iter().enumerate() {
        for v in scc {
            class_of[v.index()] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, scc)| {
            scc.iter().all(|v| {
                let i = v.index();
                (0..n).all(|j| gen.q[(i, j)] <= 0.0 || i == j || class_of[j] == *c)
            })
        })
        .map(|(_, scc)| {
            let mut m: Vec<usize> = scc.iter().map(|v| v.index()).collect();
            m.sort_unstable();
            m
        })
        .collect();
    closed.sort();
    closed
}

/// The unique stationary law, supported on the single closed class.
pub fn stationary(gen: &GeneratorMatrix) -> Result<Vec<f64>, OracleError> {
    let classes = closed_classes(gen);
    if classes.len() != 1 {
        return Err(OracleError::MultiClass { classes });
    }
    let class = &classes[0];
    let m = class.len();
    let mut pi = vec![0.0; gen.len()];
    if m == 1 {
        pi[class[0]] = 1.0;
        return Ok(pi);
    }
    // pi_C Q_CC = 0 with the last balance equation replaced by sum pi = 1
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (r, &i) in class.iter().enumerate() {
        for (c, &j) in class.iter().enumerate() {
            a[(c, r)] = gen.q[(i, j)];
        }
    }
    for c in 0..m {
        a[(m - 1, c)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let sol = a.lu().solve(&rhs).ok_or(OracleError::Singular)?;
    for (r, &i) in class.iter().enumerate() {
        pi[i] = sol[r].max(0.0);
    }
    let total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= total;
    }
    Ok(pi)
}
