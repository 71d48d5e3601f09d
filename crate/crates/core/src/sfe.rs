//! Semantic feature extraction.
//!
//! Each frame is covered by an `m × n` grid of 224-pixel windows taken at
//! native resolution. Every window is scored against all prompts, the
//! per-window score vectors are placed back at their grid position to form
//! an `[m, n, r]` map, and the map is reduced by global average and max
//! pooling into a `2r` vector (average block first). Stacking the frame
//! vectors gives a `[2r, T]` video map, which a small per-channel temporal
//! MLP turns into the `2r` semantic feature vector.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::config::GridSpec;
use crate::dataset_io::{Frame, FrameSequence};
use crate::encoder::{semantic_scores, Embedding, EncoderHandle, BLOCK};
use crate::nn::{Mlp2, Mlp2Trace, Parameters};
use crate::prompt_bank::PromptBank;
use crate::{Error, Result, Scalar};

const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    pub rows: usize,
    pub cols: usize,
    /// `(top, left)` offsets in row-major order.
    pub positions: Vec<(usize, usize)>,
    pub block: usize,
}

impl BlockGrid {
    pub fn position(&self, row: usize, col: usize) -> (usize, usize) {
        self.positions[row * self.cols + col]
    }
}

fn axis_offsets(extent: usize, count: usize) -> Vec<usize> {
    let slack = extent - BLOCK;
    if count == 1 {
        return vec![(slack as f64 / 2.0).round() as usize];
    }
    (0..count)
        .map(|i| (slack as f64 * i as f64 / (count - 1) as f64).round() as usize)
        .collect()
}

/// Window offsets `round((H−224)·i/(m−1))`, centred when `m == 1`.
/// Frames must already be at least 224 on both sides.
pub fn plan_block_grid(height: usize, width: usize, rows: usize, cols: usize) -> Result<BlockGrid> {
    if rows == 0 || cols == 0 {
        return Err(Error::Invalid(format!("grid {rows}x{cols} needs positive counts")));
    }
    if height < BLOCK || width < BLOCK {
        return Err(Error::Invalid(format!(
            "frame {height}x{width} is smaller than the {BLOCK}px window; upscale first"
        )));
    }
    let tops = axis_offsets(height, rows);
    let lefts = axis_offsets(width, cols);
    let positions = tops
        .iter()
        .flat_map(|&t| lefts.iter().map(move |&l| (t, l)))
        .collect();
    Ok(BlockGrid {
        rows,
        cols,
        positions,
        block: BLOCK,
    })
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(frame: &Frame, out_h: usize, out_w: usize) -> Frame {
    let (h, w, c) = frame.dim();
    let src = |out: usize, n_out: usize, n_in: usize| -> (usize, usize, f32) {
        let x = ((out as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, (x - i0 as f64) as f32)
    };
    let ys: Vec<_> = (0..out_h).map(|y| src(y, out_h, h)).collect();
    let xs: Vec<_> = (0..out_w).map(|x| src(x, out_w, w)).collect();
    Array3::from_shape_fn((out_h, out_w, c), |(y, x, ch)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = frame[[y0, x0, ch]] * (1.0 - fx) + frame[[y0, x1, ch]] * fx;
        let bottom = frame[[y1, x0, ch]] * (1.0 - fx) + frame[[y1, x1, ch]] * fx;
        (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
    })
}

/// Upscale so the short side is 224 (aspect preserved); frames already
/// large enough are returned unchanged.
pub fn ensure_min_side(frame: &Frame) -> std::borrow::Cow<'_, Frame> {
    let (h, w, _) = frame.dim();
    let short = h.min(w);
    if short >= BLOCK {
        return std::borrow::Cow::Borrowed(frame);
    }
    let scale = BLOCK as f64 / short as f64;
    let (oh, ow) = if h <= w {
        (BLOCK, ((w as f64 * scale).round() as usize).max(BLOCK))
    } else {
        (((h as f64 * scale).round() as usize).max(BLOCK), BLOCK)
    };
    std::borrow::Cow::Owned(resize_bilinear(frame, oh, ow))
}

/// `[m, n, r]` per-window prompt probabilities of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSemanticMap<T> {
    values: Array3<T>,
}

impl<T: Scalar> FrameSemanticMap<T> {
    pub fn new(values: Array3<T>) -> Result<Self> {
        let (m, n, r) = values.dim();
        if m == 0 || n == 0 || r == 0 {
            return Err(Error::Shape(format!("semantic map {m}x{n}x{r} has an empty axis")));
        }
        for lane in values.lanes(Axis(2)) {
            let sum: f64 = lane.iter().map(|v| v.as_f64()).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Invalid(format!("score row sums to {sum}, expected 1")));
            }
        }
        Ok(FrameSemanticMap { values })
    }

    /// Place per-window score vectors (row-major) at their grid position.
    pub fn stitch(rows: usize, cols: usize, scores: Vec<Vec<T>>) -> Result<Self> {
        if scores.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} score vectors for a {rows}x{cols} grid",
                scores.len()
            )));
        }
        let r = scores.first().map_or(0, Vec::len);
        if scores.iter().any(|v| v.len() != r) {
            return Err(Error::Shape("score vectors differ in length".into()));
        }
        let flat: Vec<T> = scores.into_iter().flatten().collect();
        Self::new(Array3::from_shape_vec((rows, cols, r), flat).expect("checked length"))
    }

    pub fn values(&self) -> &Array3<T> {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values.dim().2
    }
}

/// `[avg (r) ‖ max (r)]` pooled frame vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePooledVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> FramePooledVector<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn avg(&self) -> &[T] {
        &self.values[..self.values.len() / 2]
    }

    pub fn max(&self) -> &[T] {
        &self.values[self.values.len() / 2..]
    }

    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(Error::Shape(format!("pooled vector length {} is not 2r", values.len())));
        }
        Ok(FramePooledVector { values })
    }
}

/// Global average and max pooling over grid positions. Averages are summed
/// in row-major order.
pub fn pool_frame<T: Scalar>(map: &FrameSemanticMap<T>) -> FramePooledVector<T> {
    let (m, n, r) = map.values.dim();
    let count = (m * n) as f64;
    let mut avg = Vec::with_capacity(r);
    let mut max = Vec::with_capacity(r);
    for k in 0..r {
        let channel = map.values.slice(s![.., .., k]);
        let hi = channel.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: f64 = channel.iter().map(|v| v.as_f64()).sum();
        // the mean can round a hair above the maximum when all entries agree
        avg.push(T::of(sum / count).min(hi));
        max.push(hi);
    }
    avg.extend(max);
    FramePooledVector { values: avg }
}

/// `[2r, T]` stack of pooled frame vectors, one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSemanticMap<T> {
    values: Array2<T>,
}

impl<T: Scalar> VideoSemanticMap<T> {
    pub fn from_array(values: Array2<T>) -> Result<Self> {
        let (c, t) = values.dim();
        if c == 0 || c % 2 != 0 || t == 0 {
            return Err(Error::Shape(format!("video map [{c}, {t}] is not [2r, T]")));
        }
        Ok(VideoSemanticMap { values })
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    /// `2r`.
    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn cast<U: Scalar>(&self) -> VideoSemanticMap<U> {
        VideoSemanticMap {
            values: self.values.mapv(|v| U::of(v.as_f64())),
        }
    }
}

pub fn stack_video<T: Scalar>(pooled: &[FramePooledVector<T>]) -> Result<VideoSemanticMap<T>> {
    let first = pooled
        .first()
        .ok_or_else(|| Error::Invalid("no frames to stack".into()))?;
    let channels = first.values.len();
    if let Some((t, _)) = pooled.iter().enumerate().find(|(_, p)| p.values.len() != channels) {
        return Err(Error::Shape(format!(
            "frame {t} has {} pooled values, frame 0 has {channels}",
            pooled[t].values.len()
        )));
    }
    let values = Array2::from_shape_fn((channels, pooled.len()), |(k, t)| pooled[t].values[k]);
    VideoSemanticMap::from_array(values)
}

/// Linear interpolation along time to `t_out` columns.
pub fn resample_time<T: Scalar>(values: ArrayView2<T>, t_out: usize) -> Array2<T> {
    let (rows, t_in) = values.dim();
    assert!(t_in > 0 && t_out > 0);
    let mut out = Array2::zeros((rows, t_out));
    for c in 0..t_out {
        let x = if t_out == 1 {
            (t_in - 1) as f64 / 2.0
        } else {
            c as f64 * (t_in - 1) as f64 / (t_out - 1) as f64
        };
        let i0 = (x.floor() as usize).min(t_in - 1);
        let i1 = (i0 + 1).min(t_in - 1);
        let frac = T::of(x - i0 as f64);
        let a = values.column(i0);
        let b = values.column(i1);
        out.column_mut(c)
            .assign(&(a.mapv(|v| v * (T::one() - frac)) + b.mapv(|v| v * frac)));
    }
    out
}

/// Text side of the scorer: prompt embeddings of one bank.
#[derive(Debug, Clone)]
pub struct SemanticScorer {
    texts: Vec<Embedding>,
    logit_scale: f64,
    digest: String,
}

impl SemanticScorer {
    pub fn new(encoder: &EncoderHandle, bank: &PromptBank) -> Result<Self> {
        Ok(SemanticScorer {
            texts: encoder.embed_texts(&bank.prompts())?,
            logit_scale: encoder.logit_scale(),
            digest: bank.digest().to_string(),
        })
    }

    pub fn channels(&self) -> usize {
        self.texts.len()
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn score(&self, image: &Embedding) -> Result<Vec<f32>> {
        semantic_scores(image, &self.texts, self.logit_scale)
    }
}

/// Score every window of `grid` and stitch the results by position.
/// Windows are encoded in parallel; the result does not depend on the
/// thread count.
pub fn extract_frame_semantics(
    frame: &Frame,
    grid: &BlockGrid,
    encoder: &EncoderHandle,
    scorer: &SemanticScorer,
) -> Result<FrameSemanticMap<f32>> {
    let (h, w, _) = frame.dim();
    if let Some(&(t, l)) = grid.positions.iter().find(|&&(t, l)| t + grid.block > h || l + grid.block > w) {
        return Err(Error::Invalid(format!(
            "window at ({t}, {l}) exceeds frame {h}x{w}"
        )));
    }
    let scores = grid
        .positions
        .par_iter()
        .map(|&(top, left)| {
            let block = frame.slice(s![top..top + grid.block, left..left + grid.block, ..]);
            scorer.score(&encoder.embed_image(block)?)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSemanticMap::stitch(grid.rows, grid.cols, scores)
}

/// Full semantic pass over a clip: upscale small frames, plan the grid,
/// score, pool and stack.
pub fn extract_video_semantics(
    frames: &FrameSequence,
    grid: GridSpec,
    encoder: &EncoderHandle,
    scorer: &SemanticScorer,
) -> Result<VideoSemanticMap<f32>> {
    let pooled = frames
        .frames
        .par_iter()
        .map(|f| {
            let f = ensure_min_side(f);
            let (h, w, _) = f.dim();
            let plan = plan_block_grid(h, w, grid.rows, grid.cols)?;
            Ok(pool_frame(&extract_frame_semantics(&f, &plan, encoder, scorer)?))
        })
        .collect::<Result<Vec<_>>>()?;
    stack_video(&pooled)
}

/// Per-channel temporal MLP: each row of the resampled `[2r, t_fix]` map
/// goes through `fc2(GELU(fc1(·)))` with weights shared across channels,
/// giving one value per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMlp<T> {
    pub mlp: Mlp2<T>,
}

#[derive(Debug, Clone)]
pub struct TemporalTrace<T> {
    input: Array2<T>,
    inner: Mlp2Trace<T>,
}

impl<T: Scalar> TemporalMlp<T> {
    pub fn init<R: Rng + ?Sized>(t_fix: usize, hidden: usize, rng: &mut R) -> Self {
        TemporalMlp {
            mlp: Mlp2::init(t_fix, hidden, 1, rng),
        }
    }

    pub fn zeros(t_fix: usize, hidden: usize) -> Self {
        TemporalMlp {
            mlp: Mlp2::zeros(t_fix, hidden, 1),
        }
    }

    pub fn t_fix(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn zeros_like(&self) -> Self {
        TemporalMlp {
            mlp: self.mlp.zeros_like(),
        }
    }

    pub fn forward(&self, video: &VideoSemanticMap<T>) -> Result<Array1<T>> {
        Ok(self.forward_traced(video)?.0)
    }

    pub fn forward_traced(&self, video: &VideoSemanticMap<T>) -> Result<(Array1<T>, TemporalTrace<T>)> {
        let input = resample_time(video.values.view(), self.t_fix());
        if input.ncols() != self.mlp.input_dim() {
            return Err(Error::Shape(format!(
                "temporal MLP expects {} columns, got {}",
                self.mlp.input_dim(),
                input.ncols()
            )));
        }
        let (out, inner) = self.mlp.forward_rows_traced(input.view());
        Ok((out.column(0).to_owned(), TemporalTrace { input, inner }))
    }

    /// Accumulates parameter gradients for `∂L/∂F_s`.
    pub fn backward(&self, trace: &TemporalTrace<T>, grad_out: &Array1<T>, grads: &mut Self) {
        let g = grad_out.view().insert_axis(Axis(1));
        self.mlp.backward_rows(trace.input.view(), &trace.inner, g, &mut grads.mlp);
    }
}

impl<T: Scalar> Parameters<T> for TemporalMlp<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.mlp.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.mlp.visit_mut(prefix, f);
    }
}
