use crate::nn::Parameters;
use crate::Scalar;

/// AdamW with decoupled weight decay. Each parameter tensor gets the learning
/// rate of its group, chosen by name.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `grads` is flat in the visit order of `params`;
    /// `lr_for(name)` picks each tensor's learning rate.
    pub fn step<T: Scalar, P: Parameters<T> + ?Sized>(&mut self, params: &mut P, grads: &[T], lr_for: &dyn Fn(&str) -> f64) {
        assert_eq!(grads.len(), self.m.len(), "gradient length does not match optimizer state");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut offset = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        params.visit_mut("", &mut |name, values| {
            let lr = lr_for(name);
            for (k, p) in values.iter_mut().enumerate() {
                let i = offset + k;
                let g = grads[i].as_f64();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                if lr == 0.0 {
                    continue;
                }
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                let decayed = p.as_f64() * (1.0 - lr * wd);
                *p = T::of(decayed - lr * update);
            }
            offset += values.len();
        });
    }
}
