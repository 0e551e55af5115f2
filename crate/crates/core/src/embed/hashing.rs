use crate::corpus::tokenize;
use crate::io::short_hash;
use crate::num::Scalar;

use super::{EmbedError, Embedder, Embedding, Fingerprint};

/// Signed feature-hashing bag-of-tokens embedder.
///
/// Each token is lowercased, stripped of surrounding punctuation, and hashed
/// with a seeded FNV-1a into a bucket in `[0, dim)` and a sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 2, "embedding dimension must be at least 2");
        Self { dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed_text<S: Scalar>(&self, text: &str) -> Embedding<S> {
        let mut acc = vec![0.0f64; self.dim];
        for token in tokenize(text) {
            let norm = normalize_token(token);
            if norm.is_empty() {
                continue;
            }
            let h = seeded_fnv1a(norm.as_bytes(), self.seed);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign;
        }
        let values = acc.into_iter().map(S::from_f64_lossy).collect();
        Embedding::normalized(values).expect("finite, non-empty")
    }
}

impl<S: Scalar> Embedder<S> for HashEmbedder {
    fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            name: "hash-bow".into(),
            params_hash: short_hash(format!("d={};seed={}", self.dim, self.seed).as_bytes()),
        }
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<S>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric() && c != '+')
        .to_lowercase()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn seeded_fnv1a(bytes: &[u8], seed: u64) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = 0xcbf2_9ce4_8422_2325 ^ splitmix64(seed);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    // final avalanche so the top bit (sign) is well mixed
    splitmix64(h)
}
