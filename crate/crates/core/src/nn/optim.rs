use crate::error::NnError;
use crate::nn::tensor::ParamSet;

/// Adaptive-moment optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub const DEFAULT_LR: f32 = 1e-3;

    pub fn new(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.98, eps: 1e-9, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Forgets both moment estimates and the step count; the learning
    /// rate and betas are kept.
    pub fn reset_moments(&mut self) {
        self.step = 0;
        self.first.clear();
        self.second.clear();
    }

    /// Applies one update in parameter order and clears every gradient.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), NnError> {
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(NnError::MissingGrad(name.to_owned()));
        }
        if self.first.len() != params.len() {
            self.first = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, (_, tensor)) in params.iter_mut().enumerate() {
            let grad = tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, x) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
            tensor.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::params_from;
    use crate::nn::tensor::Tensor;

    #[test]
    fn missing_grad_is_an_error() {
        let mut p = params_from(vec![("x", Tensor::scalar(1.0))]);
        assert!(matches!(OptimizerState::new(0.1).step(&mut p), Err(NnError::MissingGrad(n)) if n == "x"));
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut p = params_from(vec![("x", Tensor::full(&[3], 0.7))]);
        let before = p.clone();
        let mut opt = OptimizerState::new(0.1);
        for _ in 0..3 {
            p.tensor_mut(0).set_grad(vec![0.0; 3]);
            opt.step(&mut p).unwrap();
        }
        assert!(p.bitwise_eq(&before));
        assert!(p.tensor(0).grad().is_none());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = params_from(vec![("x", Tensor::scalar(2.0))]);
        p.tensor_mut(0).set_grad(vec![0.37]);
        let mut opt = OptimizerState::new(0.05);
        opt.step(&mut p).unwrap();
        assert!((p.tensor(0).data()[0] - 1.95).abs() < 1e-6);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        // Reference trace: hand-rolled Adam on f(x) = x^2 in f64.
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.98 * v + 0.02 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.98f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-9);
            reference.push(x);
        }
        let mut p = params_from(vec![("x", Tensor::scalar(1.0))]);
        let mut opt = OptimizerState::new(0.1);
        let mut prev = 1.0f32;
        for want in reference {
            let x = p.tensor(0).data()[0];
            p.tensor_mut(0).set_grad(vec![2.0 * x]);
            opt.step(&mut p).unwrap();
            let now = p.tensor(0).data()[0];
            assert!(now.abs() < prev.abs());
            assert!((now as f64 - want).abs() < 1e-5, "{now} vs {want}");
            prev = now;
        }
    }
}
