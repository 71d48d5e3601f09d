use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::BackboneOutput;
use crate::nn::{Mlp2, Mlp2Trace, Parameters};
use crate::{Error, Result, Scalar};

/// Flattened single-channel map, one value per backbone voxel.
pub type SpatialFeatures<T> = Array1<T>;

/// Two pointwise (1×1×1) convolutions `C → C/2 → 1` with GELU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvHead<T> {
    pub mlp: Mlp2<T>,
}

#[derive(Debug, Clone)]
pub struct ConvHeadTrace<T> {
    input: Array2<T>,
    inner: Mlp2Trace<T>,
}

impl<T: Scalar> ConvHead<T> {
    pub fn init<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        ConvHead {
            mlp: Mlp2::init(channels, (channels / 2).max(1), 1, rng),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        ConvHead {
            mlp: Mlp2::zeros(channels, (channels / 2).max(1), 1),
        }
    }

    pub fn channels(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn zeros_like(&self) -> Self {
        ConvHead {
            mlp: self.mlp.zeros_like(),
        }
    }

    pub fn forward(&self, features: &BackboneOutput<T>) -> Result<SpatialFeatures<T>> {
        Ok(self.forward_traced(features)?.0)
    }

    pub fn forward_traced(&self, features: &BackboneOutput<T>) -> Result<(SpatialFeatures<T>, ConvHeadTrace<T>)> {
        if features.channels() != self.channels() {
            return Err(Error::Shape(format!(
                "conv head expects {} channels, backbone gave {}",
                self.channels(),
                features.channels()
            )));
        }
        let (out, inner) = self.mlp.forward_rows_traced(features.rows.view());
        let trace = ConvHeadTrace {
            input: features.rows.clone(),
            inner,
        };
        Ok((flatten(out), trace))
    }

    /// Accumulates parameter gradients and returns `∂L/∂rows` for the backbone.
    pub fn backward(&self, trace: &ConvHeadTrace<T>, grad_out: &Array1<T>, grads: &mut Self) -> Array2<T> {
        let g = grad_out.view().insert_axis(Axis(1));
        self.mlp.backward_rows(trace.input.view(), &trace.inner, g, &mut grads.mlp)
    }
}

impl<T: Scalar> Parameters<T> for ConvHead<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.mlp.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.mlp.visit_mut(prefix, f);
    }
}

/// Row-major flatten of a `[voxels, 1]` map (voxels already ordered
/// `t′, y′, x′`).
pub fn flatten<T: Scalar>(map: Array2<T>) -> SpatialFeatures<T> {
    map.into_iter().collect()
}
