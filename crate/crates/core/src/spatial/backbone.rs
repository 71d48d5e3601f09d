use std::path::Path;

use ndarray::{s, Array2, Array4, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::FragmentClip;
use crate::config::{BackboneKind, SpatialConfig};
use crate::dataset_io::read_cache;
use crate::nn::{Mlp2, Parameters};
use crate::{Error, Result, Scalar};

/// Fixed average-pooling factor applied before patch embedding.
pub const POOL: usize = 4;
/// Frames per temporal patch.
pub const PATCH_FRAMES: usize = 2;
/// Spatial stride of the backbone in input pixels.
pub const BACKBONE_STRIDE: usize = 32;
const CELL: usize = BACKBONE_STRIDE / POOL;
const PATCH_LEN: usize = PATCH_FRAMES * CELL * CELL * 3;

/// Parameter-free encoding of a fragment clip: one row per output voxel
/// `(t′, y′, x′)` in row-major order. Cheap to cache across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedClip<T> {
    pub rows: Array2<T>,
    /// `[T′, H′, W′]`.
    pub dims: [usize; 3],
}

/// Backbone feature map stored voxel-major: `rows[voxel, channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput<T> {
    pub rows: Array2<T>,
    pub dims: [usize; 3],
}

impl<T: Scalar> BackboneOutput<T> {
    pub fn channels(&self) -> usize {
        self.rows.ncols()
    }

    /// `[C, T′, H′, W′]` view of the map.
    pub fn to_array4(&self) -> Array4<T> {
        let [t, h, w] = self.dims;
        let c = self.channels();
        Array4::from_shape_fn((c, t, h, w), |(ci, ti, yi, xi)| self.rows[[(ti * h + yi) * w + xi, ci]])
    }
}

/// Spatio-temporal feature extractor over fragment clips. Implementations
/// map a [`PreparedClip`] to `[voxels, C]` features and, when trainable,
/// accumulate parameter gradients in [`Parameters::visit`] order.
pub trait Backbone<T: Scalar>: Parameters<T> + Send + Sync {
    fn name(&self) -> &'static str;

    fn out_channels(&self) -> usize;

    fn prepare(&self, clip: &FragmentClip) -> Result<PreparedClip<T>> {
        prepare_patches(clip)
    }

    fn forward(&self, input: &PreparedClip<T>) -> Result<BackboneOutput<T>>;

    fn trainable(&self) -> bool {
        false
    }

    /// `grad_out` is `∂L/∂rows`; `grads` is a flat buffer of
    /// [`Parameters::num_params`] entries.
    fn backward(&self, _input: &PreparedClip<T>, _grad_out: ArrayView2<T>, _grads: &mut [T]) -> Result<()> {
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn Backbone<T>>;
}

impl<T: Scalar> Clone for Box<dyn Backbone<T>> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Average-pool by [`POOL`], then cut `PATCH_FRAMES × 8 × 8` patches. An odd
/// trailing frame is paired with itself.
pub fn prepare_patches<T: Scalar>(clip: &FragmentClip) -> Result<PreparedClip<T>> {
    let (frames, h, w, c) = clip.dim();
    if c != 3 || frames == 0 || h % BACKBONE_STRIDE != 0 || w % BACKBONE_STRIDE != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "fragment clip {:?} must be [F>0, 32k, 32k, 3]",
            clip.dim()
        )));
    }
    let (ph, pw) = (h / POOL, w / POOL);
    let inv = 1.0 / (POOL * POOL) as f64;
    let mut pooled = Array4::<f64>::zeros((frames, ph, pw, 3));
    for ((f, y, x, ch), v) in clip.indexed_iter() {
        pooled[[f, y / POOL, x / POOL, ch]] += *v as f64 * inv;
    }
    let dims = [frames.div_ceil(PATCH_FRAMES), h / BACKBONE_STRIDE, w / BACKBONE_STRIDE];
    let voxels = dims.iter().product();
    let mut rows = Array2::<T>::zeros((voxels, PATCH_LEN));
    for tp in 0..dims[0] {
        for gy in 0..dims[1] {
            for gx in 0..dims[2] {
                let mut row = rows.row_mut((tp * dims[1] + gy) * dims[2] + gx);
                let mut k = 0;
                for dt in 0..PATCH_FRAMES {
                    let f = (tp * PATCH_FRAMES + dt).min(frames - 1);
                    let block = pooled.slice(s![f, gy * CELL..(gy + 1) * CELL, gx * CELL..(gx + 1) * CELL, ..]);
                    for v in block.iter() {
                        row[k] = T::of(*v);
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(PreparedClip { rows, dims })
}

/// Frozen, seeded random projection of each patch to `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct StubBackbone<T> {
    projection: Array2<T>,
}

impl<T: Scalar> StubBackbone<T> {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (PATCH_LEN as f64).sqrt()).expect("valid std");
        let projection = Array2::from_shape_simple_fn((channels, PATCH_LEN), || T::of(normal.sample(&mut rng)));
        StubBackbone { projection }
    }
}

impl<T: Scalar> Parameters<T> for StubBackbone<T> {
    fn visit(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &[usize], &[T])) {}
    fn visit_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut [T])) {}
}

impl<T: Scalar> Backbone<T> for StubBackbone<T> {
    fn name(&self) -> &'static str {
        "stub"
    }

    fn out_channels(&self) -> usize {
        self.projection.nrows()
    }

    fn forward(&self, input: &PreparedClip<T>) -> Result<BackboneOutput<T>> {
        check_input(input)?;
        Ok(BackboneOutput {
            rows: input.rows.dot(&self.projection.t()),
            dims: input.dims,
        })
    }

    fn box_clone(&self) -> Box<dyn Backbone<T>> {
        Box::new(self.clone())
    }
}

/// Trainable patch-embedding network: `fc2(GELU(fc1(patch)))` per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyBackbone<T> {
    pub mlp: Mlp2<T>,
}

impl<T: Scalar> TinyBackbone<T> {
    pub fn init(hidden: usize, channels: usize, seed: u64) -> Self {
        TinyBackbone {
            mlp: Mlp2::init(PATCH_LEN, hidden, channels, &mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn from_mlp(mlp: Mlp2<T>) -> Result<Self> {
        if mlp.input_dim() != PATCH_LEN {
            return Err(Error::Shape(format!(
                "backbone input width {} != patch length {PATCH_LEN}",
                mlp.input_dim()
            )));
        }
        Ok(TinyBackbone { mlp })
    }

    /// Load `backbone.fc{1,2}.{weight,bias}.clfc` tensors from a directory,
    /// e.g. a checkpoint written by an earlier run.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<(Vec<usize>, Vec<f32>)> {
            let c = read_cache(dir.join(format!("backbone.{name}.clfc")))?;
            Ok((c.shape, c.data))
        };
        let matrix = |name: &str| -> Result<Array2<T>> {
            let (shape, data) = read(name)?;
            if shape.len() != 2 {
                return Err(Error::Shape(format!("backbone.{name} has shape {shape:?}")));
            }
            Ok(Array2::from_shape_vec((shape[0], shape[1]), data.into_iter().map(|v| T::of(v as f64)).collect())
                .expect("cache shape checked"))
        };
        let vector = |name: &str| -> Result<ndarray::Array1<T>> {
            let (shape, data) = read(name)?;
            if shape.len() != 1 {
                return Err(Error::Shape(format!("backbone.{name} has shape {shape:?}")));
            }
            Ok(data.into_iter().map(|v| T::of(v as f64)).collect())
        };
        let fc1 = crate::nn::Linear { weight: matrix("fc1.weight")?, bias: vector("fc1.bias")? };
        let fc2 = crate::nn::Linear { weight: matrix("fc2.weight")?, bias: vector("fc2.bias")? };
        if fc1.bias.len() != fc1.output_dim() || fc2.input_dim() != fc1.output_dim() || fc2.bias.len() != fc2.output_dim() {
            return Err(Error::Shape("backbone weights are not layer-compatible".into()));
        }
        Self::from_mlp(Mlp2 { fc1, fc2 })
    }
}

impl<T: Scalar> Parameters<T> for TinyBackbone<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.mlp.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.mlp.visit_mut(prefix, f);
    }
}

fn check_input<T: Scalar>(input: &PreparedClip<T>) -> Result<()> {
    let voxels: usize = input.dims.iter().product();
    if input.rows.dim() != (voxels, PATCH_LEN) {
        return Err(Error::Shape(format!(
            "prepared clip rows {:?} do not match dims {:?}",
            input.rows.dim(),
            input.dims
        )));
    }
    Ok(())
}

impl<T: Scalar> Backbone<T> for TinyBackbone<T> {
    fn name(&self) -> &'static str {
        "tiny"
    }

    fn out_channels(&self) -> usize {
        self.mlp.output_dim()
    }

    fn forward(&self, input: &PreparedClip<T>) -> Result<BackboneOutput<T>> {
        check_input(input)?;
        Ok(BackboneOutput {
            rows: self.mlp.forward_rows(input.rows.view()),
            dims: input.dims,
        })
    }

    fn trainable(&self) -> bool {
        true
    }

    fn backward(&self, input: &PreparedClip<T>, grad_out: ArrayView2<T>, grads: &mut [T]) -> Result<()> {
        if grads.len() != self.num_params() {
            return Err(Error::Shape("backbone gradient buffer has the wrong size".into()));
        }
        let (_, trace) = self.mlp.forward_rows_traced(input.rows.view());
        let mut g = self.mlp.zeros_like();
        self.mlp.backward_rows(input.rows.view(), &trace, grad_out, &mut g);
        let mut offset = 0;
        g.visit("", &mut |_, _, v| {
            for (dst, src) in grads[offset..offset + v.len()].iter_mut().zip(v) {
                *dst += *src;
            }
            offset += v.len();
        });
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn Backbone<T>> {
        Box::new(self.clone())
    }
}

pub fn build_backbone<T: Scalar>(cfg: &SpatialConfig, seed: u64) -> Result<Box<dyn Backbone<T>>> {
    Ok(match cfg.backbone {
        BackboneKind::Stub => Box::new(StubBackbone::new(cfg.channels, seed)),
        BackboneKind::Tiny => Box::new(TinyBackbone::init(cfg.tiny_hidden, cfg.channels, seed)),
        BackboneKind::External => {
            let dir = cfg
                .weights_path
                .as_ref()
                .ok_or_else(|| Error::Config("spatial.weights_path is required for external".into()))?;
            let b = TinyBackbone::<T>::load(dir)?;
            if b.out_channels() != cfg.channels {
                return Err(Error::Config(format!(
                    "external backbone has {} channels, spatial.channels = {}",
                    b.out_channels(),
                    cfg.channels
                )));
            }
            Box::new(b)
        }
    })
}

/// Run a backbone on a fragment clip and check its output contract.
pub fn backbone_features<T: Scalar>(clip: &FragmentClip, backbone: &dyn Backbone<T>) -> Result<BackboneOutput<T>> {
    let input = backbone.prepare(clip)?;
    let out = backbone.forward(&input)?;
    let voxels: usize = input.dims.iter().product();
    if out.rows.dim() != (voxels, backbone.out_channels()) || out.dims != input.dims {
        return Err(Error::Shape(format!(
            "backbone `{}` returned {:?} for dims {:?}, expected [{voxels}, {}]",
            backbone.name(),
            out.rows.dim(),
            input.dims,
            backbone.out_channels()
        )));
    }
    if out.rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("backbone `{}` produced non-finite values", backbone.name())));
    }
    Ok(out)
}
