use ndarray::{Array1, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::nn::{join, Mlp2, Mlp2Trace, Parameters};
use crate::sfe::{TemporalMlp, TemporalTrace, VideoSemanticMap};
use crate::spatial::{build_backbone, Backbone, ConvHead, ConvHeadTrace, PreparedClip, BACKBONE_STRIDE, PATCH_FRAMES};
use crate::{Error, Result, Scalar};

/// Name prefix of parameters trained at the backbone learning rate.
pub const BACKBONE_PREFIX: &str = "spatial.backbone";

/// `F_v = F_s ‖ F_f`. Either side may be empty when its branch is disabled.
pub fn fuse<T: Scalar>(semantic: &[T], spatial: &[T]) -> Array1<T> {
    semantic.iter().chain(spatial).copied().collect()
}

/// `FC4(GELU(FC3(F_v)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead<T> {
    pub mlp: Mlp2<T>,
}

#[derive(Debug, Clone)]
pub struct RegressionTrace<T> {
    input: Array1<T>,
    inner: Mlp2Trace<T>,
}

impl<T: Scalar> RegressionHead<T> {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        RegressionHead { mlp: Mlp2::init(input, hidden, 1, rng) }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        RegressionHead { mlp: Mlp2::zeros(input, hidden, 1) }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn zeros_like(&self) -> Self {
        RegressionHead { mlp: self.mlp.zeros_like() }
    }

    pub fn regress(&self, fused: ArrayView1<T>) -> Result<T> {
        Ok(self.regress_traced(fused)?.0)
    }

    pub fn regress_traced(&self, fused: ArrayView1<T>) -> Result<(T, RegressionTrace<T>)> {
        if fused.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "regression head expects {} features, got {}",
                self.input_dim(),
                fused.len()
            )));
        }
        let input = fused.to_owned();
        let (out, inner) = self.mlp.forward_rows_traced(input.view().insert_axis(Axis(0)));
        Ok((out[[0, 0]], RegressionTrace { input, inner }))
    }

    /// Accumulates parameter gradients; returns `∂L/∂F_v`.
    pub fn backward(&self, trace: &RegressionTrace<T>, grad: T, grads: &mut Self) -> Array1<T> {
        let g = ndarray::arr2(&[[grad]]);
        let gx = self
            .mlp
            .backward_rows(trace.input.view().insert_axis(Axis(0)), &trace.inner, g.view(), &mut grads.mlp);
        gx.index_axis_move(Axis(0), 0)
    }
}

impl<T: Scalar> Parameters<T> for RegressionHead<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.mlp.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.mlp.visit_mut(prefix, f);
    }
}

/// Inputs of one video, already extracted.
#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    pub id: String,
    /// `[2r, T]` semantic map, when the semantic branch is on.
    pub semantic: Option<VideoSemanticMap<T>>,
    /// Prepared fragment clip, when the spatial branch is on.
    pub fragments: Option<PreparedClip<T>>,
    pub mos: f64,
}

pub struct SpatialBranch<T: Scalar> {
    pub backbone: Box<dyn Backbone<T>>,
    pub head: ConvHead<T>,
    /// `[T′, H′, W′]` of the backbone map; fixes `|F_f|`.
    pub dims: [usize; 3],
}

impl<T: Scalar> Clone for SpatialBranch<T> {
    fn clone(&self) -> Self {
        SpatialBranch { backbone: self.backbone.clone(), head: self.head.clone(), dims: self.dims }
    }
}

impl<T: Scalar> SpatialBranch<T> {
    pub fn feature_len(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Semantic branch (temporal MLP), spatial branch (backbone + conv head)
/// and regression head. Scores are produced in normalized MOS units;
/// [`ClifModel::to_mos`] maps them back.
#[derive(Clone)]
pub struct ClifModel<T: Scalar> {
    pub temporal: Option<TemporalMlp<T>>,
    /// `2r` expected from the semantic map.
    pub semantic_channels: usize,
    pub spatial: Option<SpatialBranch<T>>,
    pub head: RegressionHead<T>,
    /// Min and max MOS of the training set.
    pub mos_range: (f64, f64),
    /// Affine map `(slope, intercept)` from raw scores to normalized MOS,
    /// fitted after training. The losses fix order and linearity but not
    /// scale, so without it predictions are not in MOS units.
    pub calibration: (f64, f64),
}

impl<T: Scalar> std::fmt::Debug for ClifModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClifModel")
            .field("semantic_channels", &self.semantic_channels)
            .field("spatial_dims", &self.spatial.as_ref().map(|s| s.dims))
            .field("backbone", &self.spatial.as_ref().map(|s| s.backbone.name()))
            .field("params", &self.num_params())
            .field("mos_range", &self.mos_range)
            .field("calibration", &self.calibration)
            .finish()
    }
}

/// Gradients laid out like the model.
#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub temporal: Option<TemporalMlp<T>>,
    pub conv: Option<ConvHead<T>>,
    pub backbone: Vec<T>,
    pub head: RegressionHead<T>,
}

pub struct ForwardTrace<T> {
    temporal: Option<(usize, TemporalTrace<T>)>,
    conv: Option<ConvHeadTrace<T>>,
    head: RegressionTrace<T>,
}

impl<T: Scalar> ClifModel<T> {
    /// Assemble a model; `semantic_channels` is `2r` and ignored when the
    /// temporal MLP is absent.
    pub fn new(
        temporal: Option<TemporalMlp<T>>,
        semantic_channels: usize,
        spatial: Option<SpatialBranch<T>>,
        head: RegressionHead<T>,
    ) -> Result<Self> {
        if temporal.is_none() && spatial.is_none() {
            return Err(Error::Invalid("model needs at least one branch".into()));
        }
        let semantic_channels = if temporal.is_some() { semantic_channels } else { 0 };
        let spatial_len = spatial.as_ref().map_or(0, |s| s.feature_len());
        if let Some(s) = &spatial {
            if s.head.channels() != s.backbone.out_channels() {
                return Err(Error::Shape(format!(
                    "conv head takes {} channels, backbone gives {}",
                    s.head.channels(),
                    s.backbone.out_channels()
                )));
            }
        }
        if head.input_dim() != semantic_channels + spatial_len {
            return Err(Error::Shape(format!(
                "regression head takes {} features, branches give {} + {}",
                head.input_dim(),
                semantic_channels,
                spatial_len
            )));
        }
        Ok(ClifModel { temporal, semantic_channels, spatial, head, mos_range: (0.0, 1.0), calibration: (1.0, 0.0) })
    }

    /// Build a freshly initialized model for `cfg`; `semantic_channels` is
    /// `2r` for the configured prompt bank.
    pub fn from_config(cfg: &RunConfig, semantic_channels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let temporal = cfg.sfe.enabled.then(|| TemporalMlp::init(cfg.sfe.t_fix, cfg.sfe.hidden, &mut rng));
        let spatial = if cfg.spatial.enabled {
            let side = cfg.spatial.grid_f * cfg.spatial.patch / BACKBONE_STRIDE;
            let dims = [cfg.spatial.frames.div_ceil(PATCH_FRAMES), side, side];
            let backbone = build_backbone(&cfg.spatial, rng.gen())?;
            let head = ConvHead::init(backbone.out_channels(), &mut rng);
            Some(SpatialBranch { backbone, head, dims })
        } else {
            None
        };
        let sem = if cfg.sfe.enabled { semantic_channels } else { 0 };
        let len = sem + spatial.as_ref().map_or(0, |s| s.feature_len());
        let head = RegressionHead::init(len, cfg.train.head_hidden, &mut rng);
        Self::new(temporal, semantic_channels, spatial, head)
    }

    pub fn fused_len(&self) -> usize {
        self.head.input_dim()
    }

    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            temporal: self.temporal.as_ref().map(|t| t.zeros_like()),
            conv: self.spatial.as_ref().map(|s| s.head.zeros_like()),
            backbone: vec![T::zero(); self.spatial.as_ref().map_or(0, |s| s.backbone.num_params())],
            head: self.head.zeros_like(),
        }
    }

    pub fn normalize_mos(&self, mos: f64) -> f64 {
        let (lo, hi) = self.mos_range;
        (mos - lo) / if hi > lo { hi - lo } else { 1.0 }
    }

    /// Raw score to MOS units through the calibration and range.
    pub fn to_mos(&self, score: f64) -> f64 {
        let (lo, hi) = self.mos_range;
        let (a, b) = self.calibration;
        lo + (a * score + b) * if hi > lo { hi - lo } else { 1.0 }
    }

    pub fn forward(&self, sample: &TrainSample<T>) -> Result<T> {
        Ok(self.forward_traced(sample)?.0)
    }

    /// Prediction in MOS units.
    pub fn predict(&self, sample: &TrainSample<T>) -> Result<f64> {
        Ok(self.to_mos(self.forward(sample)?.as_f64()))
    }

    pub fn forward_traced(&self, sample: &TrainSample<T>) -> Result<(T, ForwardTrace<T>)> {
        let mut fs = Array1::zeros(0);
        let mut temporal = None;
        if let Some(t) = &self.temporal {
            let map = sample
                .semantic
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("sample `{}` has no semantic features", sample.id)))?;
            if map.channels() != self.semantic_channels {
                return Err(Error::Shape(format!(
                    "sample `{}` has {} semantic channels, model expects {}",
                    sample.id,
                    map.channels(),
                    self.semantic_channels
                )));
            }
            let (out, trace) = t.forward_traced(map)?;
            temporal = Some((out.len(), trace));
            fs = out;
        }
        let mut ff = Array1::zeros(0);
        let mut conv = None;
        if let Some(s) = &self.spatial {
            let clip = sample
                .fragments
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("sample `{}` has no fragment clip", sample.id)))?;
            if clip.dims != s.dims {
                return Err(Error::Shape(format!(
                    "sample `{}` fragment dims {:?}, model expects {:?}",
                    sample.id, clip.dims, s.dims
                )));
            }
            let features = s.backbone.forward(clip)?;
            let (out, trace) = s.head.forward_traced(&features)?;
            conv = Some(trace);
            ff = out;
        }
        let fused = fuse(fs.as_slice().expect("contiguous"), ff.as_slice().expect("contiguous"));
        let (score, head) = self.head.regress_traced(fused.view())?;
        Ok((score, ForwardTrace { temporal, conv, head }))
    }

    /// Accumulate `grad · ∂score/∂θ` into `grads`.
    pub fn backward(&self, sample: &TrainSample<T>, trace: &ForwardTrace<T>, grad: T, grads: &mut ModelGrads<T>) -> Result<()> {
        let g_fused = self.head.backward(&trace.head, grad, &mut grads.head);
        let split = trace.temporal.as_ref().map_or(0, |(n, _)| *n);
        if let (Some(t), Some((_, tr)), Some(g)) = (&self.temporal, &trace.temporal, grads.temporal.as_mut()) {
            t.backward(tr, &g_fused.slice(ndarray::s![..split]).to_owned(), g);
        }
        if let (Some(s), Some(tr), Some(g)) = (&self.spatial, &trace.conv, grads.conv.as_mut()) {
            let g_rows = s.head.backward(tr, &g_fused.slice(ndarray::s![split..]).to_owned(), g);
            if s.backbone.trainable() {
                let clip = sample.fragments.as_ref().expect("checked in forward");
                s.backbone.backward(clip, g_rows.view(), &mut grads.backbone)?;
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Parameters<T> for ClifModel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        if let Some(t) = &self.temporal {
            t.visit(&join(prefix, "temporal"), f);
        }
        if let Some(s) = &self.spatial {
            s.backbone.visit(&join(prefix, BACKBONE_PREFIX), f);
            s.head.visit(&join(prefix, "spatial.head"), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        if let Some(t) = &mut self.temporal {
            t.visit_mut(&join(prefix, "temporal"), f);
        }
        if let Some(s) = &mut self.spatial {
            s.backbone.visit_mut(&join(prefix, BACKBONE_PREFIX), f);
            s.head.visit_mut(&join(prefix, "spatial.head"), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl<T: Scalar> ModelGrads<T> {
    /// Flatten in the model's parameter visit order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        let mut push = |_: &str, _: &[usize], v: &[T]| out.extend_from_slice(v);
        if let Some(t) = &self.temporal {
            t.visit("", &mut push);
        }
        if self.conv.is_some() {
            push("", &[], &self.backbone);
        }
        if let Some(c) = &self.conv {
            c.visit("", &mut push);
        }
        self.head.visit("", &mut push);
        out
    }

    pub fn accumulate(&mut self, other: &Self) {
        if let (Some(a), Some(b)) = (self.temporal.as_mut(), other.temporal.as_ref()) {
            a.mlp.accumulate(&b.mlp);
        }
        if let (Some(a), Some(b)) = (self.conv.as_mut(), other.conv.as_ref()) {
            a.mlp.accumulate(&b.mlp);
        }
        for (a, b) in self.backbone.iter_mut().zip(&other.backbone) {
            *a += *b;
        }
        self.head.mlp.accumulate(&other.head.mlp);
    }
}
