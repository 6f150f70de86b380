/// Complete binary tree of partial sums over non-negative leaf weights.
///
/// Every internal node is recomputed from its two children on update, so
/// the root never accumulates drift from repeated add/subtract.
#[derive(Debug, Clone)]
pub struct SumTree {
    len: usize,
    base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(len: usize) -> Self {
        let base = len.max(1).next_power_of_two();
        SumTree {
            len,
            base,
            nodes: vec![0.0; 2 * base],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.base + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: f64) {
        assert!(i < self.len && value >= 0.0);
        self.set_leaf(i, value);
        self.propagate(i, i);
    }

    /// Writes leaf `i` without touching its ancestors; follow with
    /// `propagate` over a range containing `i`.
    #[inline]
    pub fn set_leaf(&mut self, i: usize, value: f64) {
        assert!(i < self.len && value >= 0.0);
        // + 0.0 maps -0.0 to +0.0
        self.nodes[self.base + i] = value + 0.0;
    }

    /// Recomputes every ancestor of the leaves `lo..=hi`, one level at a
    /// time. Cheaper than separate `set` calls when the range is short.
    #[inline]
    pub fn propagate(&mut self, lo: usize, hi: usize) {
        assert!(lo <= hi && hi < self.len);
        let (mut a, mut b) = (self.base + lo, self.base + hi);
        while a != b {
            a >>= 1;
            b >>= 1;
            let mut k = a;
            loop {
                self.recompute(k);
                if k == b {
                    break;
                }
                k += 1;
            }
        }
        // node a is fresh and its ancestors form a single path; the running
        // sum stays in a register (x + y == y + x exactly)
        let mut k = a;
        let mut v = self.nodes[k];
        while k > 1 {
            // k < 2 base, so k ^ 1 < nodes.len()
            v += unsafe { *self.nodes.get_unchecked(k ^ 1) };
            k >>= 1;
            unsafe { *self.nodes.get_unchecked_mut(k) = v };
        }
    }

    #[inline(always)]
    fn recompute(&mut self, k: usize) {
        debug_assert!(k >= 1 && k < self.base);
        // k < base, so 2k + 1 < nodes.len()
        unsafe {
            let sum = *self.nodes.get_unchecked(2 * k) + *self.nodes.get_unchecked(2 * k + 1);
            *self.nodes.get_unchecked_mut(k) = sum;
        }
    }

    /// Leaf `i` with `prefix(i) <= target < prefix(i + 1)`, and
    /// `target - prefix(i)`.
    ///
    /// Never returns a zero-weight leaf while the total is positive: a
    /// target pushed past a subtree by rounding falls back to the non-empty
    /// side.
    #[inline]
    pub fn find(&self, mut target: f64) -> (usize, f64) {
        let mut k = 1;
        // two levels per step: the grandchildren are loaded before the
        // first decision is known
        while 2 * k < self.base {
            // 2k < base, so 4k + 3 < 2 base = nodes.len()
            let (l, r, g) = unsafe {
                let n = &self.nodes;
                (
                    *n.get_unchecked(2 * k),
                    *n.get_unchecked(2 * k + 1),
                    [
                        *n.get_unchecked(4 * k),
                        *n.get_unchecked(4 * k + 1),
                        *n.get_unchecked(4 * k + 2),
                        *n.get_unchecked(4 * k + 3),
                    ],
                )
            };
            let (go, rem) = Self::step(target, l, r);
            let c = usize::from(go);
            let (go2, rem2) = Self::step(rem, g[2 * c], g[2 * c + 1]);
            target = rem2;
            k = 4 * k + 2 * c + usize::from(go2);
        }
        if k < self.base {
            // k < base, so 2k + 1 < nodes.len()
            let (l, r) = unsafe { (*self.nodes.get_unchecked(2 * k), *self.nodes.get_unchecked(2 * k + 1)) };
            let (go, rem) = Self::step(target, l, r);
            target = rem;
            k = 2 * k + usize::from(go);
        }
        (k - self.base, target)
    }

    /// Descends right iff the target clears the left weight and the right
    /// side is non-empty. `target >= 0` throughout, so an empty left child
    /// always passes.
    #[inline(always)]
    fn step(target: f64, left: f64, right: f64) -> (bool, f64) {
        let go = (target >= left) & (right > 0.0);
        // multiplied rather than selected: the decision is a coin flip, so
        // a branch would mispredict half the time
        (go, target - left * f64::from(u8::from(go)))
    }

    /// Recomputes every internal node from the leaves.
    pub fn rebuild(&mut self) {
        for k in (1..self.base).rev() {
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    impl SumTree {
        fn find0(&self, target: f64) -> usize {
            self.find(target).0
        }
    }

    #[test]
    fn selection_by_prefix() {
        let mut t = SumTree::new(5);
        for (i, w) in [1.0, 0.0, 2.0, 0.0, 3.0].into_iter().enumerate() {
            t.set(i, w);
        }
        assert_eq!(t.total(), 6.0);
        assert_eq!(t.find0(0.0), 0);
        assert_eq!(t.find0(0.999), 0);
        assert_eq!(t.find0(1.0), 2);
        assert_eq!(t.find0(2.999), 2);
        assert_eq!(t.find0(3.0), 4);
        assert_eq!(t.find0(5.999), 4);
        // overshoot lands on the last positive leaf
        assert_eq!(t.find0(6.5), 4);
    }

    #[test]
    fn single_leaf() {
        let mut t = SumTree::new(1);
        t.set(0, 0.5);
        assert_eq!(t.find0(0.3), 0);
        assert_eq!(t.total(), 0.5);
    }

    proptest! {
        #[test]
        fn never_picks_zero_leaf(ws in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..10.0], 1..64),
                                 u in 0.0f64..1.0) {
            let mut t = SumTree::new(ws.len());
            for (i, &w) in ws.iter().enumerate() {
                t.set(i, w);
            }
            prop_assume!(t.total() > 0.0);
            let i = t.find0(u * t.total());
            prop_assert!(ws[i] > 0.0);
            let mut naive: f64 = 0.0;
            for &w in &ws { naive += w; }
            prop_assert!((t.total() - naive).abs() <= 1e-12 * naive);
        }

        #[test]
        fn updates_match_rebuild(ops in proptest::collection::vec((0usize..20, 0.0f64..5.0), 1..200)) {
            let mut t = SumTree::new(20);
            for &(i, w) in &ops {
                t.set(i, w);
            }
            let mut r = t.clone();
            r.rebuild();
            prop_assert_eq!(t.total(), r.total());
        }

        #[test]
        fn range_propagation_matches_rebuild(
            ops in proptest::collection::vec((0usize..37, 0usize..4, 0.0f64..5.0), 1..100)
        ) {
            let mut t = SumTree::new(37);
            for &(i, w, v) in &ops {
                let hi = (i + w).min(36);
                for j in i..=hi {
                    t.set_leaf(j, v + j as f64);
                }
                t.propagate(i, hi);
            }
            let mut r = t.clone();
            r.rebuild();
            prop_assert_eq!(&t.nodes, &r.nodes);
        }
    }
}
