use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Appended to every tokenized prompt.
pub const EOS_TOKEN: &str = "<eos>";

/// Deterministic stand-in for a text encoder.
///
/// A prompt is lowercased and split on whitespace, and `<eos>` is appended.
/// Token `t` maps to `d_model` values drawn uniformly from `[-1, 1)` by a
/// ChaCha8 stream seeded with the first eight bytes (little endian) of
/// `SHA-256(seed_le_bytes || t)`. The same word therefore embeds
/// identically wherever it appears; position is added by the model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextEmbedder {
    pub d_model: usize,
    pub seed: u64,
}

impl TextEmbedder {
    pub fn new(d_model: usize, seed: u64) -> Self {
        TextEmbedder { d_model, seed }
    }

    pub fn tokenize(prompt: &str) -> Vec<String> {
        prompt
            .split_whitespace()
            .map(str::to_lowercase)
            .chain(std::iter::once(EOS_TOKEN.to_string()))
            .collect()
    }

    pub fn token_count(prompt: &str) -> usize {
        prompt.split_whitespace().count() + 1
    }

    pub fn embed_token(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 8];
        seed.copy_from_slice(&digest[..8]);
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(seed));
        (0..self.d_model)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect()
    }

    /// `n_text × d_model` embedding of a prompt.
    pub fn embed(&self, prompt: &str) -> Result<Tensor> {
        if self.d_model == 0 {
            return Err(Error::invalid("text embedder needs d_model > 0"));
        }
        let rows: Vec<Vec<f64>> = Self::tokenize(prompt)
            .iter()
            .map(|t| self.embed_token(t))
            .collect();
        Tensor::from_rows(&rows)
    }
}
