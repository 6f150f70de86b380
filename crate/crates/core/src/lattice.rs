//! Lattice geometry: sites of `Z^d`, finite windows, and occupancy
//! configurations.
//!
//! Two occupancy representations coexist:
//!
//! * [`Configuration`] is the sparse value type (`Site -> count`, zeros never
//!   stored). It is what callers construct, compare and serialize.
//! * [`State`] is a dense occupancy array over a padded bounding box of the
//!   window ([`Layout`]). Rate models read it through constant-time offset
//!   lookups; the engines mutate it in place.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::LatticeError;

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 4;

/// Largest padded grid a [`Layout`] may allocate.
const MAX_GRID_CELLS: usize = 1 << 24;

/// A point of `Z^d`, `1 <= d <= MAX_DIM`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    dim: u8,
    coords: [i32; MAX_DIM],
}

impl Site {
    pub fn new(coords: &[i32]) -> Result<Self, LatticeError> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(LatticeError::BadDimension(coords.len()));
        }
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Site {
            dim: coords.len() as u8,
            coords: c,
        })
    }

    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Site {
            dim: dim as u8,
            coords: [0; MAX_DIM],
        }
    }

    /// The unit vector along `axis` with the given sign.
    pub fn unit(dim: usize, axis: usize, sign: i32) -> Self {
        let mut s = Site::origin(dim);
        s.coords[axis] = sign;
        s
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    /// `|x|_1`.
    #[inline]
    pub fn norm1(&self) -> u64 {
        self.coords().iter().map(|c| c.unsigned_abs() as u64).sum()
    }

    pub fn neg(&self) -> Site {
        let mut s = *self;
        for c in &mut s.coords {
            *c = -*c;
        }
        s
    }

    pub fn add(&self, other: &Site) -> Site {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = *self;
        for (c, o) in s.coords.iter_mut().zip(other.coords) {
            *c += o;
        }
        s
    }

    pub fn sub(&self, other: &Site) -> Site {
        self.add(&other.neg())
    }

    /// All sites with `|x|_1 <= radius`, in lexicographic order.
    pub fn ball(dim: usize, radius: u32) -> Vec<Site> {
        let r = radius as i32;
        let mut out = Vec::with_capacity(ball_cardinality(dim, radius) as usize);
        let mut cur = vec![-r; dim];
        loop {
            let n: i64 = cur.iter().map(|c: &i32| c.abs() as i64).sum();
            if n <= radius as i64 {
                out.push(Site::new(&cur).expect("dimension checked"));
            }
            // odometer increment
            let mut axis = dim;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if cur[axis] < r {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = -r;
            }
        }
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for Site {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<i32>::deserialize(d)?;
        Site::new(&v).map_err(serde::de::Error::custom)
    }
}

/// `|x - y|_1`.
pub fn l1_distance(x: &Site, y: &Site) -> Result<u64, LatticeError> {
    if x.dim != y.dim {
        return Err(LatticeError::DimensionMismatch(x.dim(), y.dim()));
    }
    Ok(x
        .coords()
        .iter()
        .zip(y.coords())
        .map(|(a, b)| (*a as i64 - *b as i64).unsigned_abs())
        .sum())
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of sites of `Z^d` with `|x|_1 <= r`:
/// `sum_k 2^k C(d, k) C(r, k)`.
pub fn ball_cardinality(dim: usize, radius: u32) -> u64 {
    (0..=dim.min(radius as usize) as u64)
        .map(|k| (1u64 << k) * binomial(dim as u64, k) * binomial(radius as u64, k))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowShape {
    /// `{ x : |x|_1 <= radius }`.
    Ball { radius: u32 },
    /// An explicit finite site set (tiny verification windows).
    Sites,
}

/// A finite set of active sites. Sites outside carry occupancy zero forever
/// and never host events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    dim: usize,
    shape: WindowShape,
    sites: Vec<Site>,
}

impl Window {
    pub fn ball(dim: usize, radius: u32) -> Result<Self, LatticeError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(LatticeError::BadDimension(dim));
        }
        Ok(Window {
            dim,
            shape: WindowShape::Ball { radius },
            sites: Site::ball(dim, radius),
        })
    }

    pub fn from_sites(dim: usize, sites: &[Site]) -> Result<Self, LatticeError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(LatticeError::BadDimension(dim));
        }
        if sites.is_empty() {
            return Err(LatticeError::EmptyWindow);
        }
        if let Some(s) = sites.iter().find(|s| s.dim() != dim) {
            return Err(LatticeError::DimensionMismatch(dim, s.dim()));
        }
        let mut sites = sites.to_vec();
        sites.sort();
        sites.dedup();
        Ok(Window {
            dim,
            shape: WindowShape::Sites,
            sites,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &WindowShape {
        &self.shape
    }

    pub fn radius(&self) -> Option<u32> {
        match self.shape {
            WindowShape::Ball { radius } => Some(radius),
            WindowShape::Sites => None,
        }
    }

    /// Active sites in lexicographic order.
    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, x: &Site) -> bool {
        match self.shape {
            WindowShape::Ball { radius } => x.dim() == self.dim && x.norm1() <= radius as u64,
            WindowShape::Sites => self.sites.binary_search(x).is_ok(),
        }
    }

    /// Largest `|x|_1` over the window.
    pub fn extent(&self) -> u64 {
        self.sites.iter().map(Site::norm1).max().unwrap_or(0)
    }
}

/// Dense addressing for a window: its bounding box padded by `margin` cells
/// on every side, so `x + z` stays inside the array whenever `x` is active
/// and `|z|_1 <= margin`.
#[derive(Debug)]
pub struct Layout {
    window: Window,
    margin: u32,
    lo: [i32; MAX_DIM],
    shape: [usize; MAX_DIM],
    strides: [isize; MAX_DIM],
    len: usize,
    active: Vec<usize>,
    ordinal: Vec<u32>,
}

const INACTIVE: u32 = u32::MAX;

impl Layout {
    pub fn new(window: &Window, margin: u32) -> Result<Arc<Self>, LatticeError> {
        let dim = window.dim;
        let mut lo = [0i32; MAX_DIM];
        let mut hi = [0i32; MAX_DIM];
        for axis in 0..dim {
            let (mn, mx) = window
                .sites
                .iter()
                .map(|s| s.coords[axis])
                .fold((i32::MAX, i32::MIN), |(a, b), c| (a.min(c), b.max(c)));
            lo[axis] = mn - margin as i32;
            hi[axis] = mx + margin as i32;
        }
        let mut shape = [1usize; MAX_DIM];
        let mut strides = [0isize; MAX_DIM];
        let mut len = 1usize;
        for axis in (0..dim).rev() {
            shape[axis] = (hi[axis] - lo[axis] + 1) as usize;
            strides[axis] = len as isize;
            len = len
                .checked_mul(shape[axis])
                .filter(|&l| l <= MAX_GRID_CELLS)
                .ok_or(LatticeError::WindowTooLarge)?;
        }
        let mut layout = Layout {
            window: window.clone(),
            margin,
            lo,
            shape,
            strides,
            len,
            active: Vec::with_capacity(window.len()),
            ordinal: vec![INACTIVE; len],
        };
        for (i, s) in window.sites.iter().enumerate() {
            let idx = layout.index_of(s).expect("window site inside its own box");
            layout.active.push(idx);
            layout.ordinal[idx] = i as u32;
        }
        Ok(Arc::new(layout))
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn dim(&self) -> usize {
        self.window.dim
    }

    pub fn margin(&self) -> u32 {
        self.margin
    }

    /// Number of grid cells (active and padding).
    pub fn grid_len(&self) -> usize {
        self.len
    }

    /// Grid index of the `i`-th active site.
    #[inline]
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Ordinal of an active grid cell.
    #[inline]
    pub fn ordinal(&self, idx: usize) -> Option<usize> {
        match self.ordinal[idx] {
            INACTIVE => None,
            o => Some(o as usize),
        }
    }

    #[inline]
    pub fn is_active(&self, idx: usize) -> bool {
        self.ordinal[idx] != INACTIVE
    }

    /// Grid index of any site inside the padded box.
    pub fn index_of(&self, x: &Site) -> Option<usize> {
        if x.dim() != self.dim() {
            return None;
        }
        let mut idx = 0isize;
        for axis in 0..self.dim() {
            let off = x.coords[axis] - self.lo[axis];
            if off < 0 || off as usize >= self.shape[axis] {
                return None;
            }
            idx += off as isize * self.strides[axis];
        }
        Some(idx as usize)
    }

    pub fn site_of(&self, idx: usize) -> Site {
        let mut s = Site::origin(self.dim());
        let mut rem = idx;
        for axis in 0..self.dim() {
            let st = self.strides[axis] as usize;
            s.coords[axis] = (rem / st) as i32 + self.lo[axis];
            rem %= st;
        }
        s
    }

    /// Linear index shift corresponding to a lattice offset.
    #[inline]
    pub fn delta(&self, z: &Site) -> isize {
        let mut d = 0isize;
        for axis in 0..self.dim() {
            d += z.coords[axis] as isize * self.strides[axis];
        }
        d
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> isize {
        self.strides[axis]
    }

    /// Grid index of `x + z` for a grid index `x` that is active, valid when
    /// `|z|_1 <= margin`.
    #[inline]
    pub fn shift(&self, x: usize, z: &Site) -> usize {
        debug_assert!(z.norm1() <= self.margin as u64, "offset beyond layout margin");
        (x as isize + self.delta(z)) as usize
    }

    /// Active grid indices within `|z|_1 <= radius` of the active cell `x`.
    pub fn active_neighborhood(&self, x: usize, offsets: &[Site]) -> Vec<usize> {
        let base = self.site_of(x);
        let mut out: Vec<usize> = offsets
            .iter()
            .filter_map(|z| self.index_of(&base.add(z)))
            .filter(|&j| self.is_active(j))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Dense occupancy over a [`Layout`].
#[derive(Debug, Clone)]
pub struct State {
    layout: Arc<Layout>,
    counts: Vec<u32>,
    mass: u64,
}

impl State {
    pub fn empty(layout: Arc<Layout>) -> Self {
        let counts = vec![0; layout.grid_len()];
        State {
            layout,
            counts,
            mass: 0,
        }
    }

    pub fn from_configuration(
        layout: Arc<Layout>,
        config: &Configuration,
    ) -> Result<Self, LatticeError> {
        let mut s = State::empty(layout);
        for (x, n) in config.iter() {
            let idx = s
                .layout
                .index_of(x)
                .filter(|&i| s.layout.is_active(i))
                .ok_or(LatticeError::OutsideWindow(*x))?;
            s.counts[idx] = n;
            s.mass += n as u64;
        }
        Ok(s)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Occupancy at a grid index.
    #[inline]
    pub fn at(&self, idx: usize) -> u32 {
        self.counts[idx]
    }

    /// Occupancy at `x + z` for an active grid index `x`.
    #[inline]
    pub fn at_offset(&self, x: usize, z: &Site) -> u32 {
        self.counts[self.layout.shift(x, z)]
    }

    /// `sum_{|z|_1 <= 1} eta(x + z)`; needs a layout margin of at least 1.
    #[inline]
    pub fn nearest_sum(&self, x: usize) -> u64 {
        debug_assert!(self.layout.margin >= 1);
        if self.layout.dim() == 1 {
            let w = &self.counts[x - 1..x + 2];
            return w[0] as u64 + w[1] as u64 + w[2] as u64;
        }
        let mut acc = self.counts[x] as u64;
        for axis in 0..self.layout.dim() {
            let st = self.layout.strides[axis];
            acc += self.counts[(x as isize + st) as usize] as u64;
            acc += self.counts[(x as isize - st) as usize] as u64;
        }
        acc
    }

    /// Occupancy at an arbitrary site (zero outside the window).
    pub fn get(&self, x: &Site) -> u32 {
        self.layout.index_of(x).map_or(0, |i| self.counts[i])
    }

    /// Total number of particles.
    pub fn mass(&self) -> u64 {
        self.mass
    }

    pub fn is_empty(&self) -> bool {
        self.mass == 0
    }

    #[inline]
    pub fn increment(&mut self, idx: usize) {
        debug_assert!(self.layout.is_active(idx));
        self.counts[idx] += 1;
        self.mass += 1;
    }

    /// Removes one particle; a no-op on an empty site.
    #[inline]
    pub fn decrement(&mut self, idx: usize) {
        if self.counts[idx] > 0 {
            self.counts[idx] -= 1;
            self.mass -= 1;
        }
    }

    pub fn set(&mut self, idx: usize, n: u32) {
        debug_assert!(self.layout.is_active(idx) || n == 0);
        self.mass = self.mass - self.counts[idx] as u64 + n as u64;
        self.counts[idx] = n;
    }

    /// Iterator over occupied active cells as `(grid index, count)`.
    pub fn occupied(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.layout
            .active()
            .iter()
            .map(|&i| (i, self.counts[i]))
            .filter(|&(_, n)| n > 0)
    }

    pub fn to_configuration(&self) -> Configuration {
        let window = Arc::new(self.layout.window().clone());
        let counts = self
            .occupied()
            .map(|(i, n)| (self.layout.site_of(i), n))
            .collect();
        Configuration { window, counts }
    }

    /// Pointwise `self <= other` over the active cells. Both states must share
    /// the layout.
    pub fn dominated_by(&self, other: &State) -> bool {
        self.layout
            .active()
            .iter()
            .all(|&i| self.counts[i] <= other.counts[i])
    }
}

impl PartialEq for State {
    fn eq(&self, other: &Self) -> bool {
        self.layout.window() == other.layout.window()
            && self.layout.active().len() == other.layout.active().len()
            && self.occupied().map(|(i, n)| (self.layout.site_of(i), n)).eq(other
                .occupied()
                .map(|(i, n)| (other.layout.site_of(i), n)))
    }
}

/// Sparse occupancy configuration supported in a window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    window: Arc<Window>,
    counts: BTreeMap<Site, u32>,
}

impl Configuration {
    pub fn empty(window: Arc<Window>) -> Self {
        Configuration {
            window,
            counts: BTreeMap::new(),
        }
    }

    pub fn from_counts(
        window: Arc<Window>,
        counts: impl IntoIterator<Item = (Site, u32)>,
    ) -> Result<Self, LatticeError> {
        let mut c = Configuration::empty(window);
        for (x, n) in counts {
            c.set(x, n)?;
        }
        Ok(c)
    }

    /// `n` particles at the origin.
    pub fn point_mass(window: Arc<Window>, n: u32) -> Result<Self, LatticeError> {
        let o = Site::origin(window.dim());
        Configuration::from_counts(window, [(o, n)])
    }

    pub fn window(&self) -> &Arc<Window> {
        &self.window
    }

    pub fn get(&self, x: &Site) -> u32 {
        self.counts.get(x).copied().unwrap_or(0)
    }

    pub fn set(&mut self, x: Site, n: u32) -> Result<(), LatticeError> {
        if x.dim() != self.window.dim() {
            return Err(LatticeError::DimensionMismatch(self.window.dim(), x.dim()));
        }
        if n == 0 {
            self.counts.remove(&x);
            return Ok(());
        }
        if !self.window.contains(&x) {
            return Err(LatticeError::OutsideWindow(x));
        }
        self.counts.insert(x, n);
        Ok(())
    }

    /// Occupied sites with their counts, lexicographically ordered.
    pub fn iter(&self) -> impl Iterator<Item = (&Site, u32)> + '_ {
        self.counts.iter().map(|(s, &n)| (s, n))
    }

    pub fn support_len(&self) -> usize {
        self.counts.len()
    }

    pub fn mass(&self) -> u64 {
        self.counts.values().map(|&n| n as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Pointwise domination `self <= other`.
    pub fn le(&self, other: &Configuration) -> bool {
        self.counts.iter().all(|(x, &n)| n <= other.get(x))
    }

    /// Same configuration on another window; fails if the support does not
    /// fit.
    pub fn rewindow(&self, window: Arc<Window>) -> Result<Configuration, LatticeError> {
        Configuration::from_counts(window, self.iter().map(|(x, n)| (*x, n)))
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let counts: Vec<_> = self.iter().map(|(x, n)| json!([x, n])).collect();
        match self.window.shape() {
            WindowShape::Ball { radius } => json!({
                "dim": self.window.dim(),
                "radius": radius,
                "counts": counts,
            }),
            WindowShape::Sites => json!({
                "dim": self.window.dim(),
                "radius": null,
                "sites": self.window.sites(),
                "counts": counts,
            }),
        }
    }

    /// Byte-stable JSON: sites sorted lexicographically.
    pub fn to_json(&self) -> String {
        self.to_json_value().to_string()
    }

    pub fn from_json(text: &str) -> Result<Self, LatticeError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            dim: usize,
            radius: Option<u32>,
            #[serde(default)]
            sites: Option<Vec<Site>>,
            counts: Vec<(Site, u32)>,
        }
        let raw: Raw =
            serde_json::from_str(text).map_err(|e| LatticeError::Parse(e.to_string()))?;
        let window = match (raw.radius, raw.sites) {
            (Some(r), None) => Window::ball(raw.dim, r)?,
            (None, Some(s)) => Window::from_sites(raw.dim, &s)?,
            _ => {
                return Err(LatticeError::Parse(
                    "exactly one of `radius` and `sites` must be given".into(),
                ))
            }
        };
        Configuration::from_counts(Arc::new(window), raw.counts)
    }
}

/// `sum_x w(x) eta(x)`.
pub fn weighted_norm(config: &Configuration, w: impl Fn(&Site) -> f64) -> f64 {
    config.iter().map(|(x, n)| w(x) * n as f64).sum()
}
