//! Counter-addressed Gaussian noise.
//!
//! Every draw is a pure function of `(seed, stream_id, counter)`, so a
//! trajectory's noise can be replayed from a three-integer description
//! instead of stored tensors. Uniform bits come from ChaCha8 positioned by
//! stream and word offset; normals come from the Box–Muller transform.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;

pub const ALGORITHM_ID: &str = "chacha8-boxmuller-v1";

/// Position in a counter-based random stream.
///
/// `counter` counts 64-bit words consumed from the stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u64,
    pub algorithm_id: String,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::at(seed, stream_id, 0)
    }

    pub fn at(seed: u64, stream_id: u64, counter: u64) -> Self {
        RngStream {
            seed,
            stream_id,
            counter,
            algorithm_id: ALGORITHM_ID.to_string(),
        }
    }

    /// Number of 64-bit words consumed by `len` normal draws.
    pub fn words_for(len: usize) -> u64 {
        (len as u64).div_ceil(2) * 2
    }

    fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng.set_word_pos(u128::from(self.counter) * 2);
        rng
    }

    /// Uniform words starting at the current counter.
    pub fn uniform_words(&self, count: usize) -> (Vec<u64>, RngStream) {
        let mut rng = self.generator();
        let words = (0..count).map(|_| rng.next_u64()).collect();
        (words, self.advanced(count as u64))
    }

    pub fn advanced(&self, words: u64) -> RngStream {
        RngStream {
            counter: self.counter + words,
            ..self.clone()
        }
    }

    /// `len` i.i.d. standard normals in double precision.
    pub fn normals(&self, len: usize) -> (Vec<f64>, RngStream) {
        let words = Self::words_for(len);
        let mut rng = self.generator();
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let (z0, z1) = box_muller(rng.next_u64(), rng.next_u64());
            out.push(z0);
            if out.len() < len {
                out.push(z1);
            }
        }
        (out, self.advanced(words))
    }
}

/// Child seed for `(purpose, index)` under a master seed.
pub fn derive_seed(master: u64, purpose: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ purpose) ^ index)
}

fn box_muller(a: u64, b: u64) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 in (0, 1] keeps the log finite.
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Standard-normal tensor of the given shape, plus the advanced stream.
pub fn gaussian(stream: &RngStream, shape: &[usize]) -> (Tensor, RngStream) {
    let len = shape.iter().product();
    let (values, next) = stream.normals(len);
    let tensor = Tensor::from_f64(shape.to_vec(), &values)
        .expect("length matches shape by construction");
    (tensor, next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_is_identical() {
        let s = RngStream::at(7, 3, 40);
        let (a, na) = gaussian(&s, &[4, 5]);
        let (b, nb) = gaussian(&s, &[4, 5]);
        assert_eq!(a, b);
        assert_eq!(na, nb);
        assert_eq!(na.counter, 40 + 20);
    }

    #[test]
    fn counter_gives_random_access() {
        let s = RngStream::new(11, 0);
        let (all, _) = s.normals(10);
        let (tail, _) = s.advanced(4).normals(6);
        assert_eq!(&all[4..], &tail[..]);
    }

    #[test]
    fn odd_lengths_stay_aligned() {
        let s = RngStream::new(1, 1);
        let (_, next) = s.normals(3);
        assert_eq!(next.counter, 4);
    }

    #[test]
    fn moments_over_a_million_draws() {
        let (z, _) = RngStream::new(2024, 0).normals(1_000_000);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!(var > 0.99 && var < 1.01, "var {var}");
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let (a, _) = RngStream::new(5, 0).normals(100_000);
        let (b, _) = RngStream::new(5, 1).normals(100_000);
        let n = a.len() as f64;
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n;
        assert!(corr.abs() < 0.01, "corr {corr}");
    }
}
