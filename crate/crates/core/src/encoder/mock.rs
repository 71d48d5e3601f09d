use ndarray::ArrayView3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Embedding, VisionLanguageEncoder};
use crate::Result;

/// Deterministic stand-in for a pretrained encoder.
///
/// An input's bytes are hashed together with the seed and a domain tag
/// (SHA-256); the digest seeds a ChaCha8 stream whose first `dim` uniform
/// draws in `[-1, 1)` form the embedding before normalization. Images hash
/// their `f32` little-endian pixel bytes in `[row, col, channel]` order,
/// texts their UTF-8 bytes.
#[derive(Debug, Clone)]
pub struct MockEncoder {
    seed: u64,
    dim: usize,
}

impl MockEncoder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        MockEncoder { seed, dim }
    }

    fn embed_bytes(&self, domain: &[u8], chunks: impl Iterator<Item = [u8; 4]>, tail: &[u8]) -> Embedding {
        let mut h = Sha256::new();
        h.update(b"clif-mock/1");
        h.update(self.seed.to_le_bytes());
        h.update(domain);
        let mut buf = Vec::with_capacity(chunks.size_hint().0 * 4);
        chunks.for_each(|c| buf.extend_from_slice(&c));
        h.update(&buf);
        h.update(tail);
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let values = (0..self.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Embedding::normalized(values).expect("random draw is nonzero")
    }
}

impl VisionLanguageEncoder for MockEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, block: ArrayView3<f32>) -> Result<Embedding> {
        let (h, w, c) = block.dim();
        let mut domain = b"image".to_vec();
        for d in [h, w, c] {
            domain.extend((d as u32).to_le_bytes());
        }
        Ok(self.embed_bytes(&domain, block.iter().map(|v| v.to_le_bytes()), &[]))
    }

    fn embed_text(&self, prompt: &str) -> Result<Embedding> {
        Ok(self.embed_bytes(b"text", std::iter::empty(), prompt.as_bytes()))
    }

    fn fingerprint(&self) -> String {
        format!("mock/1;seed={};dim={}", self.seed, self.dim)
    }
}
