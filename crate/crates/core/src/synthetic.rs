//! Procedural test dataset: short clips whose MOS is a monotone function of
//! mean brightness plus a little seeded noise.

use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset_io::{write_frame_png, Frame};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub clips: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Standard deviation of the noise added to MOS.
    pub mos_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { clips: 24, frames: 8, height: 240, width: 320, seed: 0, mos_noise: 0.02 }
    }
}

/// Brightness-to-MOS map on a 1–5 scale.
pub fn mos_from_brightness(mean: f64) -> f64 {
    1.0 + 4.0 * mean
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Frames of one clip: a drifting sinusoidal texture over a base level.
pub fn synthetic_clip(spec: &SyntheticSpec, base: f32, rng: &mut ChaCha8Rng) -> Vec<Frame> {
    let (fx, fy) = (rng.gen_range(0.02f32..0.08), rng.gen_range(0.02f32..0.08));
    let phase = rng.gen_range(0.0f32..std::f32::consts::TAU);
    let tint: [f32; 3] = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
    (0..spec.frames)
        .map(|t| {
            let shift = phase + 0.3 * t as f32;
            Array3::from_shape_fn((spec.height, spec.width, 3), |(y, x, c)| {
                let wave = (fx * x as f32 + shift).sin() * (fy * y as f32 - shift).cos();
                quantize(base + tint[c] + 0.12 * wave)
            })
        })
        .collect()
}

/// Write clips as PNG frame directories under `dir` plus `manifest.csv`;
/// returns the manifest path.
pub fn write_synthetic_dataset(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    if spec.clips == 0 || spec.frames == 0 {
        return Err(Error::Invalid("synthetic dataset needs at least one clip and frame".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut bases: Vec<f32> = (0..spec.clips)
        .map(|i| 0.2 + 0.6 * i as f32 / (spec.clips.max(2) - 1) as f32)
        .collect();
    bases.shuffle(&mut rng);
    let noise = Normal::new(0.0, spec.mos_noise).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut csv = String::from("video_id,path,mos\n");
    for (i, &base) in bases.iter().enumerate() {
        let id = format!("clip{i:02}");
        let clip_dir = dir.join(&id);
        std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
        let frames = synthetic_clip(spec, base, &mut rng);
        let mut sum = 0.0;
        for (t, f) in frames.iter().enumerate() {
            write_frame_png(f, clip_dir.join(format!("frame_{t:04}.png")))?;
            sum += f.iter().map(|&v| v as f64).sum::<f64>() / f.len() as f64;
        }
        let mos = mos_from_brightness(sum / frames.len() as f64) + noise.sample(&mut rng);
        csv.push_str(&format!("{id},{id},{mos:.6}\n"));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
