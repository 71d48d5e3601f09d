//! Pretrained backend running exported image and text towers.
//!
//! Contract of the exported graphs: the image model takes one normalized
//! `[1, 3, 224, 224]` `f32` tensor, the text model one `[1, 77]` `i64`
//! token tensor; each returns a `[1, D]` embedding (normalized here).

use std::path::{Path, PathBuf};

use ndarray::ArrayView3;
use sha2::{Digest, Sha256};
use tract_onnx::prelude::*;

use super::{image_to_nchw, ClipTokenizer, Embedding, VisionLanguageEncoder, BLOCK, CONTEXT_LENGTH};
use crate::{Error, Result};

type Plan = TypedRunnableModel<TypedModel>;

pub struct OnnxEncoder {
    image: Plan,
    text: Plan,
    tokenizer: ClipTokenizer,
    dim: usize,
    fingerprint: String,
}

fn encoder_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Encoder(format!("{}: {e}", path.display()))
}

fn load_plan(path: &Path, fact: InferenceFact) -> Result<Plan> {
    tract_onnx::onnx()
        .model_for_path(path)
        .and_then(|m| m.with_input_fact(0, fact))
        .and_then(|m| m.into_optimized())
        .and_then(|m| m.into_runnable())
        .map_err(|e| encoder_err(path, e))
}

fn file_digest(paths: &[&PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Error::io(*p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(&h.finalize()[..12]))
}

fn first_row(outputs: TVec<TValue>, path: &Path) -> Result<Vec<f32>> {
    let view = outputs[0]
        .to_array_view::<f32>()
        .map_err(|e| encoder_err(path, e))?;
    Ok(view.iter().copied().collect())
}

impl OnnxEncoder {
    pub fn load(image_model: PathBuf, text_model: PathBuf, vocab: PathBuf) -> Result<Self> {
        let image = load_plan(
            &image_model,
            InferenceFact::dt_shape(f32::datum_type(), tvec!(1, 3, BLOCK, BLOCK)),
        )?;
        let text = load_plan(
            &text_model,
            InferenceFact::dt_shape(i64::datum_type(), tvec!(1, CONTEXT_LENGTH)),
        )?;
        let tokenizer = ClipTokenizer::load(&vocab)?;
        let fingerprint = format!(
            "onnx/1;{}",
            file_digest(&[&image_model, &text_model, &vocab])?
        );
        let mut enc = OnnxEncoder {
            image,
            text,
            tokenizer,
            dim: 0,
            fingerprint,
        };
        let probe = enc.run_text("a photo", &text_model)?;
        enc.dim = probe.len();
        Ok(enc)
    }

    fn run_text(&self, prompt: &str, path: &Path) -> Result<Vec<f32>> {
        let ids: Vec<i64> = self.tokenizer.encode_padded(prompt).iter().map(|&i| i as i64).collect();
        let input = tract_ndarray::Array2::from_shape_vec((1, CONTEXT_LENGTH), ids).expect("context length");
        let out = self
            .text
            .run(tvec!(Tensor::from(input).into()))
            .map_err(|e| encoder_err(path, e))?;
        first_row(out, path)
    }
}

impl VisionLanguageEncoder for OnnxEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, block: ArrayView3<f32>) -> Result<Embedding> {
        let nchw = image_to_nchw(block);
        let input = tract_ndarray::Array4::from_shape_vec(nchw.dim(), nchw.into_raw_vec_and_offset().0)
            .expect("same shape");
        let out = self
            .image
            .run(tvec!(Tensor::from(input).into()))
            .map_err(|e| Error::Encoder(e.to_string()))?;
        let v = first_row(out, Path::new("image model"))?;
        if v.len() != self.dim {
            return Err(Error::Encoder(format!(
                "image embedding has {} dims, text has {}",
                v.len(),
                self.dim
            )));
        }
        Embedding::normalized(v)
    }

    fn embed_text(&self, prompt: &str) -> Result<Embedding> {
        Embedding::normalized(self.run_text(prompt, Path::new("text model"))?)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}
