use serde::{Deserialize, Serialize};

use super::tensor::{sc, Scalar, Tensor};
use super::{NnError, Param};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are held in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Applies one update. Refuses (without touching anything) if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut [(String, &mut Param<T>)]) -> Result<(), NnError> {
        if params.len() != self.m.len() {
            return Err(NnError::Shape(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((name, p), m) in params.iter().zip(&self.m) {
            if p.grad.shape() != m.shape() {
                return Err(NnError::Shape(format!(
                    "{name}: gradient {:?} vs moment {:?}",
                    p.grad.shape(),
                    m.shape()
                )));
            }
            if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(NnError::NonFinite(format!(
                    "gradient of {name}[{i}] is {:?} at step {}",
                    p.grad.data()[i],
                    self.step + 1
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1: T = sc(c.beta1);
        let b2: T = sc(c.beta2);
        let one = T::one();
        let corr1: T = sc(1.0 - c.beta1.powi(t));
        let corr2: T = sc(1.0 - c.beta2.powi(t));
        let lr: T = sc(c.lr);
        let eps: T = sc(c.eps);
        for (((_, p), m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((w, &g), mi), vi) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / corr1;
                let v_hat = *vi / corr2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
