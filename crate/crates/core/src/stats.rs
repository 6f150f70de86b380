//! Order-fixed reductions and interval estimates.
//!
//! Every reduction here takes its inputs in replicate order and sums them
//! pairwise, so the result depends only on the inputs, not on how the
//! replicates were scheduled.

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959964;

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    /// `se` uses the unbiased variance; it is 0 for fewer than two samples.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanSe {
                mean: 0.0,
                se: 0.0,
                n,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n < 2 {
            return MeanSe { mean, se: 0.0, n };
        }
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        MeanSe {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // the interval always contains p; clamp rounding at the ends
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// `(1/2) sum_i |p_i - q_i|`, padding the shorter vector with zeros.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let diffs: Vec<f64> = (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .collect();
    0.5 * pairwise_sum(&diffs)
}

/// Empirical law of a discrete observable taking values in `0..support`.
#[derive(Debug, Clone, PartialEq)]
pub struct Empirical {
    counts: Vec<u64>,
    n: u64,
}

impl Empirical {
    pub fn new(support: usize) -> Self {
        Empirical {
            counts: vec![0; support],
            n: 0,
        }
    }

    pub fn from_samples(support: usize, samples: impl IntoIterator<Item = usize>) -> Self {
        let mut e = Empirical::new(support);
        for s in samples {
            e.push(s);
        }
        e
    }

    /// Values beyond the support grow it.
    pub fn push(&mut self, value: usize) {
        if value >= self.counts.len() {
            self.counts.resize(value + 1, 0);
        }
        self.counts[value] += 1;
        self.n += 1;
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.n.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Binomial standard error of each state probability.
    pub fn standard_errors(&self) -> Vec<f64> {
        let n = self.n.max(1) as f64;
        self.probabilities()
            .iter()
            .map(|p| (p * (1.0 - p) / n).sqrt())
            .collect()
    }

    pub fn tv(&self, q: &[f64]) -> f64 {
        tv_distance(&self.probabilities(), q)
    }

    /// Largest `|p_hat_i - q_i| / se_i` where `se_i` uses the reference
    /// probability `q_i` (an exact zero deviation scores 0; a non-zero
    /// deviation against `q_i = 0` scores infinity).
    pub fn max_z(&self, q: &[f64]) -> f64 {
        let p = self.probabilities();
        let n = self.n.max(1) as f64;
        let len = p.len().max(q.len());
        (0..len)
            .map(|i| {
                let ph = p.get(i).copied().unwrap_or(0.0);
                let qi = q.get(i).copied().unwrap_or(0.0);
                let dev = (ph - qi).abs();
                if dev == 0.0 {
                    return 0.0;
                }
                let se = (qi * (1.0 - qi) / n).sqrt();
                if se == 0.0 {
                    f64::INFINITY
                } else {
                    dev / se
                }
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn pairwise_matches_exact_small_sums() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn mean_and_standard_error() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // var = 5/3, se = sqrt(5/12)
        assert!((m.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanSe::of(&[7.0]).se, 0.0);
    }

    #[test]
    fn wilson_reference_values() {
        // 0 of 10: upper = z^2 / (n + z^2)
        let (lo, hi) = wilson(0, 10, Z95);
        assert_eq!(lo, 0.0);
        assert!((hi - Z95 * Z95 / (10.0 + Z95 * Z95)).abs() < 1e-12);
        let (lo, hi) = wilson(50, 100, Z95);
        assert!((lo - 0.403_832).abs() < 1e-5 && (hi - 0.596_168).abs() < 1e-5);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.5]), 0.25);
    }

    #[test]
    fn empirical_law() {
        let e = Empirical::from_samples(3, [0, 1, 1, 2]);
        assert_eq!(e.probabilities(), vec![0.25, 0.5, 0.25]);
        assert_eq!(e.tv(&[0.25, 0.5, 0.25]), 0.0);
        assert_eq!(e.max_z(&[0.25, 0.5, 0.25]), 0.0);
    }

    proptest! {
        #[test]
        fn wilson_contains_estimate(n in 1u64..5000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).floor() as u64;
            let (lo, hi) = wilson(k, n, Z95);
            let p = k as f64 / n as f64;
            prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        }

        #[test]
        fn pairwise_close_to_naive(xs in proptest::collection::vec(-1e3f64..1e3, 0..500)) {
            let naive: f64 = xs.iter().sum();
            prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
        }
    }
}
