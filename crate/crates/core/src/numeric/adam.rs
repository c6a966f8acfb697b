use std::collections::BTreeMap;

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates and optional decoupled weight
/// decay. Moment buffers are keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    step: u32,
    first: BTreeMap<String, Vec<f32>>,
    second: BTreeMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self::with_params(lr, 0.9, 0.999, 1e-8, 0.0)
    }

    pub fn with_params(lr: f32, beta1: f32, beta2: f32, eps: f32, weight_decay: f32) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Applies one update to every trainable parameter and clears its grad.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.iter().all(|(_, t)| !t.requires_grad()) {
            return Err(Error::Usage("no trainable parameters (store is frozen)".into()));
        }
        if let Some((name, _)) = params
            .iter()
            .find(|(_, t)| t.requires_grad() && t.grad().is_none())
        {
            return Err(Error::Usage(format!("parameter {name:?} has no gradient")));
        }
        self.step += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.step as i32);
        for (name, tensor) in params.iter_mut() {
            if !tensor.requires_grad() {
                continue;
            }
            let grad = tensor.grad().expect("checked above").to_vec();
            let n = grad.len();
            let m = self.first.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            for (((p, g), m), v) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m as f64 / bc1;
                let v_hat = *v as f64 / bc2;
                let mut update = self.lr as f64 * m_hat / (v_hat.sqrt() + self.eps as f64);
                if self.weight_decay != 0.0 {
                    update += (self.lr * self.weight_decay * *p) as f64;
                }
                *p -= update as f32;
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn store(value: f32, grad: f32) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.insert("p", Tensor::full(&[1], value)).unwrap();
        ps.get_mut("p").unwrap().accumulate_grad(&[grad]).unwrap();
        ps
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let mut ps = store(1.0, 1.0);
        Adam::new(0.1).step(&mut ps).unwrap();
        let p = ps.get("p").unwrap().data()[0];
        assert!((p - 0.9).abs() < 1e-6, "{p}");
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut ps = store(1.0, 0.0);
        Adam::new(0.1).step(&mut ps).unwrap();
        assert_eq!(ps.get("p").unwrap().data()[0], 1.0);
    }

    #[test]
    fn missing_gradient_is_usage_error() {
        let mut ps = ParamStore::new();
        ps.insert("p", Tensor::ones(&[1])).unwrap();
        assert!(matches!(Adam::new(0.1).step(&mut ps), Err(Error::Usage(_))));
    }
}
