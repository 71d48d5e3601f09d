//! Controlled-distortion probes: sweep a distortion over levels and record
//! how one description's semantic score responds, and compare prompt banks
//! as inputs to a semantic-only quality regressor.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GridSpec, RunConfig};
use crate::dataset_io::{decode_frames, DatasetManifest, Frame, FrameSequence};
use crate::encoder::{EncoderHandle, Embedding};
use crate::eval::{plan_splits, run_splits, SplitsReport};
use crate::fusion::{fit, ClifModel, TrainSample};
use crate::prompt_bank::PromptBank;
use crate::sfe::{
    ensure_min_side, plan_block_grid, pool_frame, stack_video, FrameSemanticMap, SemanticScorer, VideoSemanticMap,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    Brightness,
    Contrast,
    Noise,
    Colorfulness,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [Self::Brightness, Self::Contrast, Self::Noise, Self::Colorfulness];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Brightness => "brightness",
            Self::Contrast => "contrast",
            Self::Noise => "noise",
            Self::Colorfulness => "colorfulness",
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown distortion kind `{s}`")))
    }
}

/// `level` in `[-1, 1]`: negative attenuates, positive enhances, 0 is the
/// identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: f64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&level) {
            return Err(Error::Invalid(format!("distortion level {level} outside [-1, 1]")));
        }
        Ok(DistortionSpec { kind, level })
    }
}

fn clamp01(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

/// Separable Gaussian blur, `σ = radius/2`, edges clamped.
pub fn gaussian_blur(frame: &Frame, radius: f64) -> Frame {
    if radius <= 0.0 {
        return frame.clone();
    }
    let sigma = radius / 2.0;
    let half = radius.ceil() as isize;
    let mut kernel: Vec<f64> = (-half..=half).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    let pass = |src: &Frame, axis: Axis| -> Frame {
        let len = src.len_of(axis) as isize;
        Array3::from_shape_fn(src.dim(), |(y, x, c)| {
            let pos = if axis == Axis(0) { y } else { x } as isize;
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let p = (pos + k as isize - half).clamp(0, len - 1) as usize;
                    let v = if axis == Axis(0) { src[[p, x, c]] } else { src[[y, p, c]] };
                    w * v as f64
                })
                .sum::<f64>() as f32
        })
    };
    pass(&pass(frame, Axis(1)), Axis(0))
}

/// Scale HSV saturation by `factor` keeping hue and value: each channel moves
/// away from (or toward) the pixel's max by the same factor, capped where
/// the smallest channel would hit 0.
fn scale_saturation(frame: &Frame, factor: f32) -> Frame {
    let mut out = frame.clone();
    for mut px in out.lanes_mut(Axis(2)) {
        let max = px.iter().copied().fold(f32::MIN, f32::max);
        let min = px.iter().copied().fold(f32::MAX, f32::min);
        if max <= min {
            continue;
        }
        let k = factor.min(max / (max - min));
        px.mapv_inplace(|c| clamp01(max - k * (max - c)));
    }
    out
}

/// Apply a distortion. Pure in `(frame, spec, seed)`; level 0 returns the
/// input unchanged.
pub fn apply_distortion(frame: &Frame, spec: &DistortionSpec, seed: u64) -> Frame {
    let level = spec.level;
    if level == 0.0 {
        return frame.clone();
    }
    let l = level as f32;
    match spec.kind {
        DistortionKind::Brightness => frame.mapv(|p| clamp01(p + l * 0.5)),
        DistortionKind::Contrast => frame.mapv(|p| clamp01(0.5 + (1.0 + l) * (p - 0.5))),
        DistortionKind::Noise if level > 0.0 => {
            let normal = Normal::new(0.0f32, l * 0.2).expect("positive sigma");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            frame.mapv(|p| clamp01(p + normal.sample(&mut rng)))
        }
        DistortionKind::Noise => gaussian_blur(frame, level.abs() * 4.0),
        DistortionKind::Colorfulness => scale_saturation(frame, 1.0 + l),
    }
}

/// Mean score of one description at each distortion level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub description: String,
    pub kind: DistortionKind,
    pub levels: Vec<f64>,
    pub responses: Vec<f64>,
}

/// Score every window of each frame once per bank. Window embeddings are
/// shared across banks.
fn frame_maps(
    frame: &Frame,
    grid: GridSpec,
    encoder: &EncoderHandle,
    scorers: &[SemanticScorer],
) -> Result<Vec<FrameSemanticMap<f32>>> {
    let f = ensure_min_side(frame);
    let (h, w, _) = f.dim();
    let plan = plan_block_grid(h, w, grid.rows, grid.cols)?;
    let embeddings = plan
        .positions
        .par_iter()
        .map(|&(t, l)| encoder.embed_image(f.slice(s![t..t + plan.block, l..l + plan.block, ..])))
        .collect::<Result<Vec<Embedding>>>()?;
    scorers
        .iter()
        .map(|sc| {
            let scores = embeddings.iter().map(|e| sc.score(e)).collect::<Result<Vec<_>>>()?;
            FrameSemanticMap::stitch(plan.rows, plan.cols, scores)
        })
        .collect()
}

pub fn response_curve(
    frames: &FrameSequence,
    description: &str,
    kind: DistortionKind,
    levels: &[f64],
    encoder: &EncoderHandle,
    bank: &PromptBank,
    grid: GridSpec,
    seed: u64,
) -> Result<ResponseCurve> {
    let channel = bank
        .index_of(description)
        .ok_or_else(|| Error::Invalid(format!("description `{description}` is not in the prompt bank")))?;
    if levels.is_empty() || levels.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Invalid("levels must be a non-empty ascending list".into()));
    }
    let specs = levels.iter().map(|&l| DistortionSpec::new(kind, l)).collect::<Result<Vec<_>>>()?;
    let scorer = [SemanticScorer::new(encoder, bank)?];
    let responses = specs
        .par_iter()
        .map(|spec| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (i, frame) in frames.frames.iter().enumerate() {
                let distorted = apply_distortion(frame, spec, seed.wrapping_add(i as u64));
                let map = frame_maps(&distorted, grid, encoder, &scorer)?.remove(0);
                for v in map.values().index_axis(Axis(2), channel) {
                    sum += *v as f64;
                    count += 1;
                }
            }
            Ok(sum / count as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResponseCurve { description: description.to_string(), kind, levels: levels.to_vec(), responses })
}

/// `description,kind,level,response` rows.
pub fn curves_to_csv(curves: &[ResponseCurve]) -> String {
    let mut out = String::from("description,kind,level,response\n");
    for c in curves {
        for (l, r) in c.levels.iter().zip(&c.responses) {
            out.push_str(&format!("{},{},{l},{r}\n", c.description, c.kind));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub bank: String,
    pub descriptions: usize,
    pub report: SplitsReport,
}

pub fn comparison_to_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("bank,descriptions,srocc_mean,krocc_mean,plcc_mean,srocc_median,krocc_median,plcc_median\n");
    for r in rows {
        let (m, d) = (&r.report.mean, &r.report.median);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.bank, r.descriptions, m.srocc, m.krocc, m.plcc, d.srocc, d.krocc, d.plcc
        ));
    }
    out
}

/// Semantic maps of one video for several banks at once.
pub fn multi_bank_semantics(
    frames: &FrameSequence,
    grid: GridSpec,
    encoder: &EncoderHandle,
    scorers: &[SemanticScorer],
) -> Result<Vec<VideoSemanticMap<f32>>> {
    let per_frame = frames
        .frames
        .par_iter()
        .map(|f| frame_maps(f, grid, encoder, scorers))
        .collect::<Result<Vec<_>>>()?;
    (0..scorers.len())
        .map(|b| stack_video(&per_frame.iter().map(|maps| pool_frame(&maps[b])).collect::<Vec<_>>()))
        .collect()
}

/// Train and evaluate a semantic-only regressor per bank over the configured
/// splits. Identical banks give identical rows.
pub fn prompt_comparison(
    manifest: &DatasetManifest,
    banks: &[(String, PromptBank)],
    encoder: &EncoderHandle,
    cfg: &RunConfig,
) -> Result<Vec<ComparisonRow>> {
    if banks.is_empty() {
        return Err(Error::Invalid("no prompt banks to compare".into()));
    }
    let splits = plan_splits(manifest.len(), cfg.eval.splits, cfg.eval.train_frac, cfg.seed)?;
    let scorers = banks.iter().map(|(_, b)| SemanticScorer::new(encoder, b)).collect::<Result<Vec<_>>>()?;
    let mut per_bank: Vec<Vec<TrainSample<f32>>> = vec![Vec::with_capacity(manifest.len()); banks.len()];
    for entry in &manifest.entries {
        let frames = decode_frames(&entry.path, cfg.sfe.frames.into())?;
        for (b, map) in multi_bank_semantics(&frames, cfg.sfe.grid, encoder, &scorers)?.into_iter().enumerate() {
            per_bank[b].push(TrainSample { id: entry.video_id.clone(), semantic: Some(map), fragments: None, mos: entry.mos });
        }
    }
    let mut semantic_cfg = cfg.clone();
    semantic_cfg.sfe.enabled = true;
    semantic_cfg.spatial.enabled = false;
    banks
        .iter()
        .zip(per_bank)
        .map(|((name, bank), samples)| {
            let report = run_splits(&splits, |split| {
                let seed = cfg.seed.wrapping_add(split.id as u64);
                let train: Vec<_> = split.train.iter().map(|&i| samples[i].clone()).collect();
                let mut model = ClifModel::from_config(&semantic_cfg, 2 * bank.len(), seed)?;
                fit(&mut model, &train, &semantic_cfg.train, seed)?;
                let pred = split.test.iter().map(|&i| model.predict(&samples[i])).collect::<Result<Vec<_>>>()?;
                let gt = split.test.iter().map(|&i| samples[i].mos).collect();
                Ok((pred, gt))
            })?;
            Ok(ComparisonRow { bank: name.clone(), descriptions: bank.len(), report })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_frame() -> Frame {
        Array3::from_shape_fn((6, 8, 3), |(y, x, c)| ((y * 8 + x) as f32 / 48.0 + c as f32 * 0.1).min(1.0))
    }

    #[test]
    fn level_zero_is_identity() {
        let f = gradient_frame();
        for kind in DistortionKind::ALL {
            assert_eq!(apply_distortion(&f, &DistortionSpec::new(kind, 0.0).unwrap(), 3), f);
        }
    }

    #[test]
    fn brightness_closed_form() {
        let gray = Array3::from_elem((4, 4, 3), 0.5f32);
        let out = apply_distortion(&gray, &DistortionSpec::new(DistortionKind::Brightness, 0.5).unwrap(), 0);
        assert!(out.iter().all(|&v| v == 0.75));
    }

    #[test]
    fn contrast_closed_form() {
        let f = Array3::from_elem((1, 2, 3), 0.7f32);
        let out = apply_distortion(&f, &DistortionSpec::new(DistortionKind::Contrast, -0.5).unwrap(), 0);
        assert!(out.iter().all(|&v| (v - 0.6).abs() < 1e-6));
    }

    #[test]
    fn noise_raises_variance_deterministically() {
        let f = Array3::from_elem((32, 32, 3), 0.5f32);
        let spec = DistortionSpec::new(DistortionKind::Noise, 1.0).unwrap();
        let a = apply_distortion(&f, &spec, 11);
        assert_eq!(a, apply_distortion(&f, &spec, 11));
        assert_ne!(a, apply_distortion(&f, &spec, 12));
        let mean = a.mean().unwrap();
        let var = a.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
        assert!(var > 0.01, "{var}");
    }

    #[test]
    fn blur_smooths_and_keeps_constants() {
        let c = Array3::from_elem((5, 5, 3), 0.3f32);
        let b = gaussian_blur(&c, 4.0);
        assert!(b.iter().all(|&v| (v - 0.3).abs() < 1e-6));
        let mut spike = Array3::zeros((9, 9, 1));
        spike[[4, 4, 0]] = 1.0f32;
        let b = gaussian_blur(&spike, 2.0);
        assert!(b[[4, 4, 0]] < 1.0 && b[[4, 5, 0]] > 0.0);
    }

    #[test]
    fn saturation_scaling() {
        let f = Array3::from_shape_vec((1, 1, 3), vec![0.8f32, 0.4, 0.6]).unwrap();
        let gray = apply_distortion(&f, &DistortionSpec::new(DistortionKind::Colorfulness, -1.0).unwrap(), 0);
        assert!(gray.iter().all(|&v| (v - 0.8).abs() < 1e-6));
        let vivid = apply_distortion(&f, &DistortionSpec::new(DistortionKind::Colorfulness, 1.0).unwrap(), 0);
        assert!((vivid[[0, 0, 1]] - 0.0).abs() < 1e-6);
        assert!((vivid[[0, 0, 0]] - 0.8).abs() < 1e-6);
        assert!((vivid[[0, 0, 2]] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn level_bounds() {
        assert!(DistortionSpec::new(DistortionKind::Noise, 1.5).is_err());
        assert_eq!("contrast".parse::<DistortionKind>().unwrap(), DistortionKind::Contrast);
    }

    #[test]
    fn curve_identity_level_and_determinism() {
        let frames = FrameSequence::from_frames(vec![Array3::from_elem((224, 224, 3), 0.4f32)], "c").unwrap();
        let enc = EncoderHandle::mock(1, 32);
        let bank = crate::prompt_bank::default_bank();
        let grid = GridSpec { rows: 1, cols: 1 };
        let c = response_curve(&frames, "bright", DistortionKind::Brightness, &[0.0], &enc, &bank, grid, 0).unwrap();
        let scorer = SemanticScorer::new(&enc, &bank).unwrap();
        let direct = scorer.score(&enc.embed_image(frames.frames[0].view()).unwrap()).unwrap()[0];
        assert!((c.responses[0] - direct as f64).abs() < 1e-7);
        let levels = [-1.0, 0.0, 1.0];
        let a = response_curve(&frames, "bright", DistortionKind::Brightness, &levels, &enc, &bank, grid, 0).unwrap();
        let b = response_curve(&frames, "bright", DistortionKind::Brightness, &levels, &enc, &bank, grid, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.responses.iter().all(|&r| r > 0.0 && r < 1.0));
        assert!(response_curve(&frames, "nope", DistortionKind::Noise, &levels, &enc, &bank, grid, 0).is_err());
        assert_eq!(curves_to_csv(&[a]).lines().count(), 4);
    }
}
