//! Weight functions `w`, interaction kernels `a`, and the constant `C_{w,a}`
//! of the weight/kernel inequality `sum_y w(y) a(x-y) <= C_{w,a} w(x)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::KernelError;
use crate::lattice::{ball_cardinality, Site, State};

/// A real function on `Z^d`.
pub type SiteFn = Arc<dyn Fn(&Site) -> f64 + Send + Sync>;

/// Kernel with finite support, stored as `(offset, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteKernel {
    dim: usize,
    entries: Vec<(Site, f64)>,
    radius: u32,
}

impl FiniteKernel {
    /// Builds a kernel from explicit entries. Entries must be non-negative,
    /// and the kernel must be even; zero entries are dropped and duplicate
    /// offsets are summed.
    pub fn from_entries(
        dim: usize,
        entries: impl IntoIterator<Item = (Site, f64)>,
    ) -> Result<Self, KernelError> {
        let mut map = std::collections::BTreeMap::<Site, f64>::new();
        for (z, v) in entries {
            if z.dim() != dim {
                return Err(KernelError::Dimension(dim, z.dim()));
            }
            if !(v.is_finite() && v >= 0.0) {
                return Err(KernelError::NegativeKernel { site: z, value: v });
            }
            *map.entry(z).or_insert(0.0) += v;
        }
        map.retain(|_, v| *v > 0.0);
        for (z, v) in &map {
            if map.get(&z.neg()) != Some(v) {
                return Err(KernelError::NotEven { site: *z });
            }
        }
        let radius = map.keys().map(|z| z.norm1() as u32).max().unwrap_or(0);
        Ok(FiniteKernel {
            dim,
            entries: map.into_iter().collect(),
            radius,
        })
    }

    /// The zero kernel.
    pub fn zero(dim: usize) -> Self {
        FiniteKernel {
            dim,
            entries: Vec::new(),
            radius: 0,
        }
    }

    /// `c * I{|z|_1 <= k}`.
    pub fn indicator(dim: usize, c: f64, k: u32) -> Result<Self, KernelError> {
        FiniteKernel::from_entries(dim, Site::ball(dim, k).into_iter().map(|z| (z, c)))
    }

    /// `c * I{z = 0}`.
    pub fn point(dim: usize, c: f64) -> Result<Self, KernelError> {
        FiniteKernel::indicator(dim, c, 0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(Site, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest `|z|_1` in the support.
    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn value(&self, z: &Site) -> f64 {
        self.entries
            .binary_search_by(|(s, _)| s.cmp(z))
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v).sum()
    }

    /// `sum_y a(x - y) eta(y)` at the grid index `x`.
    #[inline]
    pub fn convolve(&self, x: usize, eta: &State) -> f64 {
        // y = x - z; the kernel is even so x + z gives the same sum, but the
        // literal form is kept.
        let mut acc = 0.0;
        for (z, v) in &self.entries {
            let n = eta.at_offset(x, &z.neg());
            if n != 0 {
                acc += v * n as f64;
            }
        }
        acc
    }

    /// Pointwise sum of two kernels.
    pub fn plus(&self, other: &FiniteKernel) -> FiniteKernel {
        FiniteKernel::from_entries(
            self.dim,
            self.entries.iter().chain(&other.entries).copied(),
        )
        .expect("sum of even non-negative kernels")
    }

    pub fn scaled(&self, c: f64) -> FiniteKernel {
        FiniteKernel::from_entries(self.dim, self.entries.iter().map(|&(z, v)| (z, v * c)))
            .expect("scaling by a non-negative constant")
    }

    /// The kernel with its value at the origin removed.
    pub fn off_origin(&self) -> FiniteKernel {
        FiniteKernel {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .filter(|(z, _)| z.norm1() > 0)
                .copied()
                .collect(),
            radius: self.radius,
        }
    }

    pub fn as_site_fn(&self) -> SiteFn {
        let k = self.clone();
        Arc::new(move |z: &Site| k.value(z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `w = e^{-q|x|}`, `a = c e^{-p|x|}`, `p > q > 0`.
    ExpExp,
    /// `w = e^{-q|x|}`, `a = c I{|x| <= k}`, `q > 0`, `k >= 1`.
    ExpIndicator,
    /// `w = 1/(1+|x|^q)`, `a = c/(1+|x|^p)`, `p > q > d`.
    Polynomial,
    Custom,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::ExpExp => "exp-exp",
            KernelFamily::ExpIndicator => "exp-indicator",
            KernelFamily::Polynomial => "polynomial",
            KernelFamily::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub q: Option<f64>,
    pub p: Option<f64>,
    pub c: Option<f64>,
    pub k: Option<u32>,
}

/// Result of checking the weight/kernel inequality on a ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValidation {
    pub c_wa: f64,
    pub worst_site: Site,
    /// Certified bound on the relative truncation error of the inner sum,
    /// when the caller supplied one.
    pub tail_bound: Option<f64>,
}

/// A validated `(w, a)` pair.
#[derive(Clone)]
pub struct KernelPair {
    pub w: SiteFn,
    pub a: SiteFn,
    pub c_wa: f64,
    pub worst_site: Site,
    pub family: KernelFamily,
    pub dim: usize,
    /// Truncation radius used for `a` in the inner sum.
    pub a_reach: u32,
    pub validation_radius: u32,
    pub tail_bound: Option<f64>,
}

impl fmt::Debug for KernelPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelPair")
            .field("family", &self.family)
            .field("dim", &self.dim)
            .field("c_wa", &self.c_wa)
            .field("worst_site", &self.worst_site)
            .field("a_reach", &self.a_reach)
            .finish()
    }
}

/// Default validation ball radius by dimension.
pub fn default_validation_radius(dim: usize) -> u32 {
    match dim {
        1 => 50,
        2 => 16,
        3 => 8,
        _ => 5,
    }
}

const TAIL_TOL: f64 = 1e-12;

fn shell_size(dim: usize, r: u32) -> f64 {
    if r == 0 {
        1.0
    } else {
        (ball_cardinality(dim, r) - ball_cardinality(dim, r - 1)) as f64
    }
}

/// Smallest reach `K` with `c * sum_{r > K} |shell_r| e^{-gap r} < tol`.
fn exp_tail_reach(dim: usize, c: f64, gap: f64) -> (u32, f64) {
    let mut k = 1u32;
    loop {
        // the shell sizes grow polynomially, so summing 4000 further shells
        // bounds the tail well below f64 resolution once terms are tiny
        let tail: f64 = (k + 1..k + 4000)
            .map(|r| c * shell_size(dim, r) * (-gap * r as f64).exp())
            .sum();
        if tail < TAIL_TOL || k >= 2000 {
            return (k, tail);
        }
        k += 1;
    }
}

fn require(cond: bool, what: &str) -> Result<(), KernelError> {
    if cond {
        Ok(())
    } else {
        Err(KernelError::Constraint(what.to_string()))
    }
}

fn param(v: Option<f64>, name: &str) -> Result<f64, KernelError> {
    v.filter(|x| x.is_finite())
        .ok_or_else(|| KernelError::Constraint(format!("parameter `{name}` is required")))
}

/// Builds one of the built-in `(w, a)` families and validates it on the
/// default ball for `dim`.
pub fn make_kernel(
    family: KernelFamily,
    params: KernelParams,
    dim: usize,
) -> Result<KernelPair, KernelError> {
    make_kernel_on(family, params, dim, default_validation_radius(dim))
}

pub fn make_kernel_on(
    family: KernelFamily,
    params: KernelParams,
    dim: usize,
    validation_radius: u32,
) -> Result<KernelPair, KernelError> {
    if !(1..=crate::lattice::MAX_DIM).contains(&dim) {
        return Err(KernelError::Constraint(format!("dimension {dim} unsupported")));
    }
    let c = param(params.c, "c")?;
    require(c > 0.0, "c > 0")?;
    let (w, a, reach, tail): (SiteFn, SiteFn, u32, Option<f64>) = match family {
        KernelFamily::ExpExp => {
            let q = param(params.q, "q")?;
            let p = param(params.p, "p")?;
            require(q > 0.0, "q > 0")?;
            require(p > q, "p > q")?;
            let (reach, tail) = exp_tail_reach(dim, c, p - q);
            (
                Arc::new(move |x: &Site| (-q * x.norm1() as f64).exp()),
                Arc::new(move |x: &Site| c * (-p * x.norm1() as f64).exp()),
                reach,
                Some(tail),
            )
        }
        KernelFamily::ExpIndicator => {
            let q = param(params.q, "q")?;
            require(q > 0.0, "q > 0")?;
            let k = params
                .k
                .ok_or_else(|| KernelError::Constraint("parameter `k` is required".into()))?;
            require(k >= 1, "k in N (k >= 1)")?;
            (
                Arc::new(move |x: &Site| (-q * x.norm1() as f64).exp()),
                Arc::new(move |x: &Site| if x.norm1() <= k as u64 { c } else { 0.0 }),
                k,
                Some(0.0),
            )
        }
        KernelFamily::Polynomial => {
            let q = param(params.q, "q")?;
            let p = param(params.p, "p")?;
            require(q > dim as f64, "q > d")?;
            require(p > q, "p > q")?;
            // Polynomial tails cannot be certified at 1e-12 with a finite
            // reach; the inner sum is truncated at twice the ball radius.
            (
                Arc::new(move |x: &Site| 1.0 / (1.0 + (x.norm1() as f64).powf(q))),
                Arc::new(move |x: &Site| c / (1.0 + (x.norm1() as f64).powf(p))),
                2 * validation_radius,
                None,
            )
        }
        KernelFamily::Custom => {
            return Err(KernelError::Constraint(
                "custom kernels are built with `custom_kernel`".into(),
            ))
        }
    };
    let v = validate_kernel(w.as_ref(), a.as_ref(), dim, validation_radius, reach)?;
    Ok(KernelPair {
        w,
        a,
        c_wa: v.c_wa,
        worst_site: v.worst_site,
        family,
        dim,
        a_reach: reach,
        validation_radius,
        tail_bound: tail,
    })
}

/// Validates a user-supplied weight with a finite-support kernel.
pub fn custom_kernel(
    w: SiteFn,
    a: &FiniteKernel,
    validation_radius: u32,
) -> Result<KernelPair, KernelError> {
    let dim = a.dim();
    let a_fn = a.as_site_fn();
    let v = validate_kernel(w.as_ref(), a_fn.as_ref(), dim, validation_radius, a.radius())?;
    Ok(KernelPair {
        w,
        a: a_fn,
        c_wa: v.c_wa,
        worst_site: v.worst_site,
        family: KernelFamily::Custom,
        dim,
        a_reach: a.radius(),
        validation_radius,
        tail_bound: Some(0.0),
    })
}

/// Computes `max_x sum_y w(y) a(x-y) / w(x)` over `|x|_1 <= ball_radius`,
/// with `y` ranging over `|y|_1 <= ball_radius + a_reach`, and checks
/// evenness of `w` and `a` exactly on the ball.
///
/// A ratio that keeps increasing toward the ball boundary (the boundary
/// shell maximum is more than 1.5 times the mid-radius one, or the last
/// two-shell increments do not shrink) means the inequality
/// cannot hold on the whole lattice and is reported as
/// [`KernelError::Diverging`].
pub fn validate_kernel(
    w: &(dyn Fn(&Site) -> f64 + Send + Sync),
    a: &(dyn Fn(&Site) -> f64 + Send + Sync),
    dim: usize,
    ball_radius: u32,
    a_reach: u32,
) -> Result<KernelValidation, KernelError> {
    let outer = Site::ball(dim, ball_radius);
    let inner = Site::ball(dim, ball_radius + a_reach);
    for x in &inner {
        let (wx, ax) = (w(x), a(x));
        if !(wx.is_finite() && wx > 0.0) {
            return Err(KernelError::NonPositiveWeight { site: *x, value: wx });
        }
        if !(ax.is_finite() && ax >= 0.0) {
            return Err(KernelError::NegativeKernel { site: *x, value: ax });
        }
        if x.norm1() <= ball_radius as u64 && (wx != w(&x.neg()) || ax != a(&x.neg())) {
            return Err(KernelError::NotEven { site: *x });
        }
    }
    let mut shell_max = vec![f64::NEG_INFINITY; ball_radius as usize + 1];
    let mut best = (f64::NEG_INFINITY, Site::origin(dim));
    for x in &outer {
        let sum: f64 = inner
            .iter()
            .filter(|y| {
                let d: u64 = x
                    .coords()
                    .iter()
                    .zip(y.coords())
                    .map(|(p, q)| (p - q).unsigned_abs() as u64)
                    .sum();
                d <= a_reach as u64
            })
            .map(|y| w(y) * a(&x.sub(y)))
            .sum();
        let ratio = sum / w(x);
        let r = x.norm1() as usize;
        shell_max[r] = shell_max[r].max(ratio);
        if ratio > best.0 {
            best = (ratio, *x);
        }
    }
    if ball_radius >= 4 {
        let big_r = ball_radius as usize;
        let boundary = shell_max[big_r];
        let mid = shell_max[big_r / 2];
        // two-shell steps: in d >= 2 the shell maxima alternate with parity
        let inc1 = shell_max[big_r] - shell_max[big_r - 2];
        let inc2 = shell_max[big_r - 2] - shell_max[big_r - 4];
        let tol = 1e-12 * boundary.abs().max(1.0);
        let accelerating = inc1 > tol && inc2 > tol && inc1 >= 0.999 * inc2;
        if boundary > 1.5 * mid || accelerating {
            return Err(KernelError::Diverging {
                inner: mid,
                boundary,
            });
        }
    }
    Ok(KernelValidation {
        c_wa: best.0.max(0.0),
        worst_site: best.1,
        tail_bound: None,
    })
}
