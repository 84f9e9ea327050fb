//! A deterministic hashed bag-of-words text encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FusorError, Result};
use crate::model::InstructionEmbedding;

pub trait TextEncoderAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> InstructionEmbedding;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextEncoderSpec {
    pub dim: usize,
    pub table_size: usize,
    pub seed: u64,
}

impl Default for TextEncoderSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            table_size: 256,
            seed: 0x7e47,
        }
    }
}

/// Hashes each whitespace token (FNV-1a) into a table of `N(0, 1)` vectors
/// and returns their mean. The empty string, or one with no tokens, embeds
/// to the zero vector.
#[derive(Clone, Debug)]
pub struct HashedTextEncoder {
    dim: usize,
    table: Vec<Vec<f64>>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashedTextEncoder {
    pub fn new(spec: &TextEncoderSpec) -> Result<Self> {
        if spec.dim == 0 || spec.table_size == 0 {
            return Err(FusorError::Config(
                "text encoder dim and table_size must be >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let dist = Normal::new(0.0, 1.0).expect("unit normal");
        let table = (0..spec.table_size)
            .map(|_| (0..spec.dim).map(|_| dist.sample(&mut rng)).collect())
            .collect();
        Ok(Self {
            dim: spec.dim,
            table,
        })
    }

    fn slot(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.table.len() as u64) as usize
    }
}

impl TextEncoderAdapter for HashedTextEncoder {
    fn name(&self) -> &str {
        "hashed-bow"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> InstructionEmbedding {
        let mut acc = vec![0.0; self.dim];
        let mut count = 0usize;
        for token in text.split_whitespace() {
            for (a, v) in acc.iter_mut().zip(&self.table[self.slot(token)]) {
                *a += v;
            }
            count += 1;
        }
        if count > 0 {
            let inv = 1.0 / count as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        InstructionEmbedding::new(acc).expect("finite, nonempty embedding")
    }
}

pub fn mock_text_encoder(spec: &TextEncoderSpec) -> Result<HashedTextEncoder> {
    HashedTextEncoder::new(spec)
}
