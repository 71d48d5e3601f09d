use ndarray::{s, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset_io::FrameSequence;
use crate::{Error, Result};

/// `[frames, side, side, 3]` mosaic of native-resolution patches.
pub type FragmentClip = Array4<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentSpec {
    /// Cells per side.
    pub grid: usize,
    /// Patch side in pixels.
    pub patch: usize,
    pub frames_out: usize,
    pub seed: u64,
}

impl Default for FragmentSpec {
    fn default() -> Self {
        FragmentSpec {
            grid: 7,
            patch: 32,
            frames_out: 16,
            seed: 0,
        }
    }
}

impl FragmentSpec {
    pub fn side(&self) -> usize {
        self.grid * self.patch
    }
}

/// Where every patch of a fragment clip comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentPlan {
    pub grid: usize,
    pub patch: usize,
    /// Source frame index of each output frame.
    pub frame_indices: Vec<usize>,
    /// `(top, left)` crop origin of each cell, row-major; shared by all
    /// output frames.
    pub origins: Vec<(usize, usize)>,
}

fn region(extent: usize, grid: usize, i: usize) -> (usize, usize) {
    (i * extent / grid, (i + 1) * extent / grid)
}

impl FragmentPlan {
    /// Seeded plan: a contiguous run of frames at a uniform start, and one
    /// uniform crop offset inside each of the `grid × grid` regions.
    pub fn sample(frames: usize, height: usize, width: usize, spec: &FragmentSpec) -> Result<Self> {
        Self::check(frames, height, width, spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let frame_indices = if spec.frames_out > frames {
            log::warn!(
                "fragment sampling wants {} frames, clip has {frames}; repeating the last frame",
                spec.frames_out
            );
            (0..spec.frames_out).map(|i| i.min(frames - 1)).collect()
        } else {
            let start = rng.gen_range(0..=frames - spec.frames_out);
            (start..start + spec.frames_out).collect()
        };
        let mut origins = Vec::with_capacity(spec.grid * spec.grid);
        for i in 0..spec.grid {
            let (y0, y1) = region(height, spec.grid, i);
            for j in 0..spec.grid {
                let (x0, x1) = region(width, spec.grid, j);
                let dy = rng.gen_range(0..=(y1 - y0).saturating_sub(spec.patch));
                let dx = rng.gen_range(0..=(x1 - x0).saturating_sub(spec.patch));
                origins.push(((y0 + dy).min(height - spec.patch), (x0 + dx).min(width - spec.patch)));
            }
        }
        Ok(FragmentPlan {
            grid: spec.grid,
            patch: spec.patch,
            frame_indices,
            origins,
        })
    }

    /// Every crop at its region's top-left corner, frames from the start.
    pub fn aligned(frames: usize, height: usize, width: usize, spec: &FragmentSpec) -> Result<Self> {
        Self::check(frames, height, width, spec)?;
        let frame_indices = (0..spec.frames_out).map(|i| i.min(frames - 1)).collect();
        let origins = (0..spec.grid)
            .flat_map(|i| (0..spec.grid).map(move |j| (i, j)))
            .map(|(i, j)| {
                let y = region(height, spec.grid, i).0.min(height - spec.patch);
                let x = region(width, spec.grid, j).0.min(width - spec.patch);
                (y, x)
            })
            .collect();
        Ok(FragmentPlan {
            grid: spec.grid,
            patch: spec.patch,
            frame_indices,
            origins,
        })
    }

    fn check(frames: usize, height: usize, width: usize, spec: &FragmentSpec) -> Result<()> {
        if spec.grid == 0 || spec.patch == 0 || spec.frames_out == 0 {
            return Err(Error::Invalid(format!("degenerate fragment spec {spec:?}")));
        }
        if frames == 0 {
            return Err(Error::Invalid("cannot sample fragments from an empty clip".into()));
        }
        if height < spec.patch || width < spec.patch {
            return Err(Error::Invalid(format!(
                "frame {height}x{width} is smaller than the {}px fragment patch",
                spec.patch
            )));
        }
        Ok(())
    }
}

/// Copy the planned patches into a fragment clip; pixels are copied, never
/// interpolated.
pub fn splice_fragments(frames: &FrameSequence, plan: &FragmentPlan) -> Result<FragmentClip> {
    let (h, w) = frames.size();
    let p = plan.patch;
    if plan.origins.iter().any(|&(y, x)| y + p > h || x + p > w) {
        return Err(Error::Invalid("fragment crop exceeds the frame".into()));
    }
    let side = plan.grid * p;
    let mut out = Array4::zeros((plan.frame_indices.len(), side, side, 3));
    for (t, &src) in plan.frame_indices.iter().enumerate() {
        let frame = frames
            .frames
            .get(src)
            .ok_or_else(|| Error::Invalid(format!("plan references frame {src}")))?;
        for (cell, &(y, x)) in plan.origins.iter().enumerate() {
            let (gi, gj) = (cell / plan.grid, cell % plan.grid);
            out.slice_mut(s![t, gi * p..(gi + 1) * p, gj * p..(gj + 1) * p, ..])
                .assign(&frame.slice(s![y..y + p, x..x + p, ..]));
        }
    }
    Ok(out)
}

pub fn sample_fragments(frames: &FrameSequence, spec: &FragmentSpec) -> Result<FragmentClip> {
    let (h, w) = frames.size();
    let plan = FragmentPlan::sample(frames.len(), h, w, spec)?;
    splice_fragments(frames, &plan)
}
