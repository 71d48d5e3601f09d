//! Dense layers with hand-written backward passes.
//!
//! Every trainable block in the model is a two-layer perceptron applied
//! row-wise: the temporal MLP runs over semantic channels, the 1×1×1
//! convolution head runs over voxels, and the regression head runs over a
//! single fused vector. [`Mlp2`] covers all three.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::Scalar;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x·Φ(x)`.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let v = x.as_f64();
    T::of(0.5 * v * (1.0 + libm::erf(v / SQRT_2)))
}

/// `d/dx GELU(x) = Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let v = x.as_f64();
    let cdf = 0.5 * (1.0 + libm::erf(v / SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * v * v).exp();
    T::of(cdf + v * pdf)
}

/// Named, shaped access to trainable tensors. Visit order is stable and is
/// what optimizers and checkpoints key on.
pub trait Parameters<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `y = W·x + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform fan-in init, `U(−1/√in, 1/√in)` for weights and bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut draw = || T::of(rng.gen_range(-bound..=bound));
        let weight = Array2::from_shape_simple_fn((output, input), &mut draw);
        let bias = Array1::from_shape_simple_fn(output, &mut draw);
        Linear { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }

    /// Rows of `x` are independent inputs: returns `x·Wᵀ + b`.
    pub fn forward_rows(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    pub fn forward(&self, x: ArrayView1<T>) -> Array1<T> {
        self.weight.dot(&x) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward_rows(&self, x: ArrayView2<T>, grad_out: ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        grad.weight += &grad_out.t().dot(&x);
        grad.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight)
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        f(&join(prefix, "weight"), self.weight.shape(), self.weight.as_slice().expect("standard layout"));
        f(&join(prefix, "bias"), self.bias.shape(), self.bias.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(&join(prefix, "weight"), self.weight.as_slice_mut().expect("standard layout"));
        f(&join(prefix, "bias"), self.bias.as_slice_mut().expect("standard layout"));
    }
}

/// `fc2(GELU(fc1(x)))`, applied to each row of its input.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// Pre-activation of the hidden layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Mlp2Trace<T> {
    pub hidden_pre: Array2<T>,
}

impl<T: Scalar> Mlp2<T> {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp2 {
            fc1: Linear::zeros(input, hidden),
            fc2: Linear::zeros(hidden, output),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let fc1 = Linear::init(input, hidden, rng);
        let fc2 = Linear::init(hidden, output, rng);
        Mlp2 { fc1, fc2 }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc1.output_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.fc2.output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Mlp2 {
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    pub fn forward_rows(&self, x: ArrayView2<T>) -> Array2<T> {
        self.forward_rows_traced(x).0
    }

    pub fn forward_rows_traced(&self, x: ArrayView2<T>) -> (Array2<T>, Mlp2Trace<T>) {
        let hidden_pre = self.fc1.forward_rows(x);
        let hidden = hidden_pre.mapv(gelu);
        let out = self.fc2.forward_rows(hidden.view());
        (out, Mlp2Trace { hidden_pre })
    }

    /// Accumulates into `grads`; returns `∂L/∂x`.
    pub fn backward_rows(
        &self,
        x: ArrayView2<T>,
        trace: &Mlp2Trace<T>,
        grad_out: ArrayView2<T>,
        grads: &mut Self,
    ) -> Array2<T> {
        let hidden = trace.hidden_pre.mapv(gelu);
        let mut grad_hidden = self.fc2.backward_rows(hidden.view(), grad_out, &mut grads.fc2);
        Zip::from(&mut grad_hidden)
            .and(&trace.hidden_pre)
            .for_each(|g, &pre| *g *= gelu_grad(pre));
        self.fc1.backward_rows(x, grad_hidden.view(), &mut grads.fc1)
    }

    /// Adds `other` into `self`, tensor by tensor.
    pub fn accumulate(&mut self, other: &Self) {
        self.fc1.weight += &other.fc1.weight;
        self.fc1.bias += &other.fc1.bias;
        self.fc2.weight += &other.fc2.weight;
        self.fc2.bias += &other.fc2.bias;
    }
}

impl<T: Scalar> Parameters<T> for Mlp2<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gelu_reference_values() {
        // x·Φ(x) at a few points, Φ from the standard normal table
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gelu(-1.0f64) + 0.158_655_253_931_457_05).abs() < 1e-12);
        assert!((gelu_grad(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.3, 2.2] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn linear_rows() {
        let l = Linear {
            weight: array![[1.0, 2.0], [0.0, -1.0]],
            bias: array![0.5, 0.0],
        };
        let y = l.forward_rows(array![[1.0, 1.0], [2.0, 0.0]].view());
        assert_eq!(y, array![[3.5, -1.0], [2.5, 0.0]]);
        assert_eq!(l.forward(array![1.0, 1.0].view()), array![3.5, -1.0]);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a: Mlp2<f32> = Mlp2::init(16, 8, 1, &mut ChaCha8Rng::seed_from_u64(3));
        let b: Mlp2<f32> = Mlp2::init(16, 8, 1, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.fc1.weight.iter().all(|w| w.abs() <= 0.25));
        let mut names = Vec::new();
        a.visit("head", &mut |n, s, _| names.push(format!("{n}{s:?}")));
        assert_eq!(
            names,
            ["head.fc1.weight[8, 16]", "head.fc1.bias[8]", "head.fc2.weight[1, 8]", "head.fc2.bias[1]"]
        );
        assert_eq!(a.num_params(), 16 * 8 + 8 + 8 + 1);
    }
}
