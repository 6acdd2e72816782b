use crate::autodiff::ParameterStore;
use crate::tensor::Matrix;

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParameterStore, learning_rate: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Matrix::zeros(p.tensor.value.rows(), p.tensor.value.cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParameterStore) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((param, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !param.tensor.requires_grad {
                continue;
            }
            let grad = param.tensor.grad.as_slice();
            let value = param.tensor.value.as_mut_slice();
            for (((x, &g), m), v) in value
                .iter_mut()
                .zip(grad)
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *x -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}
