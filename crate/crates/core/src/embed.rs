//! Deterministic stand-in for an image/text embedding model.
//!
//! A descriptor string is hashed with 64-bit FNV-1a. The hash seeds a
//! xoshiro256++ generator (state expanded with SplitMix64), which produces
//! `dim` standard normal draws; their L2-normalization is the base vector.
//!
//! Noise uses a second generator seeded with FNV-1a continued over the
//! descriptor bytes followed by the 8 little-endian bytes of the noise seed.
//! The noise vector is `dim` normal draws scaled by `1/sqrt(dim)` (so its
//! expected norm is 1) and the result is `normalize(base + sigma * noise)`.
//!
//! Normal draws use the Marsaglia polar method: take two uniforms
//! `u = (next_u64 >> 11) * 2^-53`, map them to `v = 2u - 1`, reject while
//! `s = v1² + v2²` is 0 or ≥ 1, then emit `v1·m` followed by `v2·m` with
//! `m = sqrt(-2 ln s / s)`. Both values of a pair are used, in that order.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::vector_store::Embedding;

pub const DEFAULT_DIM: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

fn fnv1a64_extend(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Standard normal source following the documented polar-method order.
pub struct GaussianStream {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        GaussianStream {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        loop {
            let v1 = 2.0 * self.next_uniform() - 1.0;
            let v2 = 2.0 * self.next_uniform() - 1.0;
            let s = v1 * v1 + v2 * v2;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v2 * m);
                return v1 * m;
            }
        }
    }
}

/// Seeded stub embedder of fixed dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StubEmbedder {
    pub dim: usize,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        StubEmbedder { dim: DEFAULT_DIM }
    }
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        StubEmbedder { dim }
    }

    /// Noise-free embedding of `descriptor`.
    pub fn base(&self, descriptor: &str) -> Embedding {
        let mut g = GaussianStream::new(fnv1a64(descriptor.as_bytes()));
        let values = (0..self.dim).map(|_| g.next_gaussian()).collect();
        Embedding::normalized(values).expect("gaussian draws are never all zero")
    }

    /// `normalize(base + sigma * noise)`; `sigma == 0` returns [`Self::base`].
    pub fn embed(&self, descriptor: &str, noise_sigma: f64, seed: u64) -> Embedding {
        assert!(noise_sigma >= 0.0, "noise sigma must be non-negative");
        let base = self.base(descriptor);
        if noise_sigma == 0.0 {
            return base;
        }
        let noise_seed = fnv1a64_extend(fnv1a64(descriptor.as_bytes()), &seed.to_le_bytes());
        let mut g = GaussianStream::new(noise_seed);
        let scale = noise_sigma / (self.dim as f64).sqrt();
        let values = base.values().iter().map(|b| b + scale * g.next_gaussian()).collect();
        Embedding::normalized(values).expect("noisy vector is non-zero")
    }
}

/// Descriptor used for the observation at `node` facing `heading_deg`.
pub fn place_descriptor(node: &str, heading_deg: u16) -> String {
    format!("node:{node}/dir:{heading_deg}")
}

/// [`StubEmbedder::embed`] with the default dimension.
pub fn stub_embed(descriptor: &str, noise_sigma: f64, seed: u64) -> Embedding {
    StubEmbedder::default().embed(descriptor, noise_sigma, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector_store::cosine_similarity;

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn frozen_first_components() {
        // Values from tests/oracles/stub_embed.py, an independent
        // implementation of the hash, generator and polar-method order.
        let e = stub_embed("node:A/dir:0", 0.0, 0);
        let head: Vec<String> = e.values()[..3].iter().map(|v| format!("{v:.12}")).collect();
        assert_eq!(head, FROZEN_HEAD);
    }

    const FROZEN_HEAD: [&str; 3] = ["-0.154794509046", "-0.112686473329", "0.041873748290"];

    #[test]
    fn zero_sigma_is_exact() {
        let a = stub_embed("node:B/dir:90", 0.0, 1);
        let b = stub_embed("node:B/dir:90", 0.0, 99);
        assert_eq!(a, b);
        assert!((cosine_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((a.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noise_depends_on_seed() {
        let a = stub_embed("node:B/dir:90", 0.1, 1);
        let b = stub_embed("node:B/dir:90", 0.1, 2);
        assert_ne!(a, b);
        assert_eq!(a, stub_embed("node:B/dir:90", 0.1, 1));
    }

    #[test]
    fn gaussian_moments() {
        let mut g = GaussianStream::new(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| g.next_gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
