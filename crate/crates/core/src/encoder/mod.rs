//! Vision-language encoder abstraction: unit-norm image and text embeddings
//! plus temperature-scaled softmax scores over a prompt list.

mod mock;
#[cfg(feature = "onnx")]
mod onnx;
mod preprocess;
mod tokenizer;

use std::sync::Arc;

use ndarray::ArrayView3;

use crate::config::{EncoderBackend, EncoderConfig};
use crate::{Error, Result, Scalar};

pub use mock::MockEncoder;
#[cfg(feature = "onnx")]
pub use onnx::OnnxEncoder;
pub use preprocess::{image_to_nchw, CLIP_MEAN, CLIP_STD};
pub use tokenizer::{ClipTokenizer, CONTEXT_LENGTH};

/// Side of the square blocks the image tower accepts.
pub const BLOCK: usize = 224;
pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;
const NORM_TOLERANCE: f32 = 1e-5;

/// L2-normalized embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Normalize `values` to unit length. Zero or non-finite vectors are
    /// rejected.
    pub fn normalized(mut values: Vec<f32>) -> Result<Self> {
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Encoder(format!("cannot normalize embedding with norm {norm}")));
        }
        for v in &mut values {
            *v = (*v as f64 / norm) as f32;
        }
        Ok(Embedding(values))
    }

    /// Wrap a vector that is already unit-norm.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE as f64 {
            return Err(Error::Encoder(format!("embedding norm {norm} is not 1")));
        }
        Ok(Embedding(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "embedding dimensions differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self.0.iter().zip(&other.0).map(|(&a, &b)| a as f64 * b as f64).sum())
    }
}

/// A backend producing raw embeddings. Implementations must be pure
/// functions of their weights and inputs.
pub trait VisionLanguageEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// `block` is `[224, 224, 3]` with values in `[0, 1]`.
    fn embed_image(&self, block: ArrayView3<f32>) -> Result<Embedding>;

    fn embed_text(&self, prompt: &str) -> Result<Embedding>;

    /// Identifies backend and weights; feeds cache invalidation.
    fn fingerprint(&self) -> String;
}

/// An encoder backend together with its softmax temperature.
#[derive(Clone)]
pub struct EncoderHandle {
    backend: Arc<dyn VisionLanguageEncoder>,
    logit_scale: f64,
}

impl std::fmt::Debug for EncoderHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncoderHandle")
            .field("backend", &self.backend.fingerprint())
            .field("logit_scale", &self.logit_scale)
            .finish()
    }
}

impl EncoderHandle {
    pub fn new(backend: Arc<dyn VisionLanguageEncoder>, logit_scale: f64) -> Result<Self> {
        if !(logit_scale > 0.0 && logit_scale.is_finite()) {
            return Err(Error::Invalid(format!("logit_scale must be positive, got {logit_scale}")));
        }
        Ok(EncoderHandle { backend, logit_scale })
    }

    pub fn mock(seed: u64, dim: usize) -> Self {
        Self::new(Arc::new(MockEncoder::new(seed, dim)), DEFAULT_LOGIT_SCALE).expect("valid scale")
    }

    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        let backend: Arc<dyn VisionLanguageEncoder> = match cfg.backend {
            EncoderBackend::Mock => Arc::new(MockEncoder::new(cfg.mock_seed, cfg.mock_dim)),
            EncoderBackend::Pretrained => pretrained_backend(cfg)?,
        };
        Self::new(backend, cfg.logit_scale)
    }

    pub fn dim(&self) -> usize {
        self.backend.dim()
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    pub fn fingerprint(&self) -> String {
        format!("{};scale={}", self.backend.fingerprint(), self.logit_scale)
    }

    pub fn embed_image(&self, block: ArrayView3<f32>) -> Result<Embedding> {
        let (h, w, c) = block.dim();
        if (h, w, c) != (BLOCK, BLOCK, 3) {
            return Err(Error::Shape(format!(
                "image block must be {BLOCK}x{BLOCK}x3, got {h}x{w}x{c}"
            )));
        }
        if let Some(v) = block.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("pixel value {v} outside [0, 1]")));
        }
        self.backend.embed_image(block)
    }

    pub fn embed_texts(&self, prompts: &[String]) -> Result<Vec<Embedding>> {
        if prompts.is_empty() {
            return Err(Error::Invalid("no prompts to embed".into()));
        }
        prompts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if p.trim().is_empty() {
                    Err(Error::Invalid(format!("prompt {i} is empty")))
                } else {
                    self.backend.embed_text(p)
                }
            })
            .collect()
    }

    pub fn semantic_scores(&self, image: &Embedding, texts: &[Embedding]) -> Result<Vec<f32>> {
        semantic_scores(image, texts, self.logit_scale)
    }
}

#[cfg(feature = "onnx")]
fn pretrained_backend(cfg: &EncoderConfig) -> Result<Arc<dyn VisionLanguageEncoder>> {
    let need = |p: &Option<std::path::PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("encoder.backend = pretrained requires {key}")))
    };
    Ok(Arc::new(OnnxEncoder::load(
        need(&cfg.image_model, "encoder.image_model")?,
        need(&cfg.text_model, "encoder.text_model")?,
        need(&cfg.vocab, "encoder.vocab")?,
    )?))
}

#[cfg(not(feature = "onnx"))]
fn pretrained_backend(_cfg: &EncoderConfig) -> Result<Arc<dyn VisionLanguageEncoder>> {
    Err(Error::Config(
        "encoder.backend = pretrained needs a build with the `onnx` feature".into(),
    ))
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `softmax(scale · cosᵢ)`.
pub fn scores_from_cosines<T: Scalar>(cosines: &[T], logit_scale: T) -> Vec<T> {
    let logits: Vec<T> = cosines.iter().map(|&c| c * logit_scale).collect();
    softmax(&logits)
}

/// Probability of each prompt for one image block. Computed in `f64`,
/// returned as `f32`.
pub fn semantic_scores(image: &Embedding, texts: &[Embedding], logit_scale: f64) -> Result<Vec<f32>> {
    if texts.is_empty() {
        return Err(Error::Invalid("no text embeddings".into()));
    }
    let cosines = texts
        .iter()
        .map(|t| image.cosine(t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores_from_cosines(&cosines, logit_scale)
        .into_iter()
        .map(|p| p as f32)
        .collect())
}
