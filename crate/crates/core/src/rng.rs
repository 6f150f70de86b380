//! Keyed random streams.
//!
//! Every stream is a pure function of `(seed, StreamKey)`: the key is folded
//! into a 256-bit ChaCha key, so two streams with different keys never share
//! state and replaying a key reproduces the exact same sequence no matter
//! which thread or in which order it is requested.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, Exp1};

use crate::lattice::Site;

/// Noise channel of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    /// Holding times and event selection of the Gillespie engine.
    Clock = 0,
    /// Birth marks (the `N1` process).
    Birth = 1,
    /// Death marks (the `N2` process).
    Death = 2,
}

/// Identifies one independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub site: Site,
    pub channel: Channel,
    pub replicate: u64,
    /// Sub-stream index (thinning strips use one sub-stream per mark band).
    pub lane: u32,
}

impl StreamKey {
    /// The per-replicate stream used for holding times and selection.
    pub fn clock(dim: usize, replicate: u64) -> Self {
        StreamKey {
            site: Site::origin(dim),
            channel: Channel::Clock,
            replicate,
            lane: 0,
        }
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded, keyed stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    pub seed: u64,
    pub key: StreamKey,
}

impl NoiseStream {
    pub fn new(seed: u64, key: StreamKey) -> Self {
        NoiseStream { seed, key }
    }

    fn key_words(&self) -> impl Iterator<Item = u64> + '_ {
        let k = &self.key;
        [
            self.seed,
            k.replicate,
            k.channel as u64,
            u64::from(k.lane),
            k.site.dim() as u64,
        ]
        .into_iter()
        .chain(k.site.coords().iter().map(|&c| c as i64 as u64))
    }

    /// Generator positioned at the start of the stream.
    pub fn rng(&self) -> StreamRng {
        let mut h = 0x6A09_E667_F3BC_C908u64;
        for w in self.key_words() {
            h = splitmix64(h ^ w);
        }
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        StreamRng {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }
}

/// Uniform and exponential draws on top of a ChaCha8 block generator.
#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Exponential holding time with the given rate (`rate > 0`), by the
    /// ziggurat method.
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        let e: f64 = Exp1.sample(&mut self.inner);
        e / rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(x: i32, channel: Channel, replicate: u64) -> StreamKey {
        StreamKey {
            site: Site::new(&[x]).unwrap(),
            channel,
            replicate,
            lane: 0,
        }
    }

    #[test]
    fn same_key_same_sequence() {
        let s = NoiseStream::new(7, key(3, Channel::Birth, 11));
        let a: Vec<u64> = (0..16).scan(s.rng(), |r, _| Some(r.next_u64())).collect();
        let b: Vec<u64> = (0..16).scan(s.rng(), |r, _| Some(r.next_u64())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_keys_differ() {
        let base = NoiseStream::new(7, key(3, Channel::Birth, 11));
        let others = [
            NoiseStream::new(8, key(3, Channel::Birth, 11)),
            NoiseStream::new(7, key(4, Channel::Birth, 11)),
            NoiseStream::new(7, key(3, Channel::Death, 11)),
            NoiseStream::new(7, key(3, Channel::Birth, 12)),
            NoiseStream::new(
                7,
                StreamKey {
                    lane: 1,
                    ..key(3, Channel::Birth, 11)
                },
            ),
        ];
        let first = base.rng().next_u64();
        for o in others {
            assert_ne!(first, o.rng().next_u64(), "{o:?}");
        }
    }

    #[test]
    fn uniform_moments() {
        let mut r = NoiseStream::new(1, key(0, Channel::Clock, 0)).rng();
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.uniform()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005);
        assert!((var - 1.0 / 12.0).abs() < 0.002);
        assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn exponential_mean() {
        let mut r = NoiseStream::new(2, key(0, Channel::Clock, 0)).rng();
        let n = 200_000;
        let mean = (0..n).map(|_| r.exponential(4.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 0.003, "{mean}");
    }
}
