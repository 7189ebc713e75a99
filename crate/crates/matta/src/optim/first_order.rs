//! First-order baselines: SGD, Adagrad, Adam.

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstOrderMethod {
    Sgd,
    Adagrad,
    Adam,
}

/// Per-parameter first-order optimizer state.
#[derive(Clone, Debug)]
pub struct FirstOrderState {
    pub method: FirstOrderMethod,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Adagrad sum of squared gradients.
    accum: Option<Tensor>,
    /// Adam moments.
    m: Option<Tensor>,
    v: Option<Tensor>,
    step: u64,
}

impl FirstOrderState {
    pub fn new(method: FirstOrderMethod, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        FirstOrderState {
            method,
            lr,
            beta1,
            beta2,
            epsilon,
            accum: None,
            m: None,
            v: None,
            step: 0,
        }
    }

    /// One update; returns the new parameter value.
    pub fn step(&mut self, param: &Tensor, grad: &Tensor) -> Result<Tensor> {
        if param.shape() != grad.shape() {
            return Err(Error::shape("first_order_step", param.shape(), grad.shape()));
        }
        self.step += 1;
        match self.method {
            FirstOrderMethod::Sgd => param.sub(&grad.scaled(self.lr)),
            FirstOrderMethod::Adagrad => {
                let acc = self
                    .accum
                    .get_or_insert_with(|| Tensor::zeros(param.rows(), param.cols()));
                acc.add_assign(&grad.hadamard(grad)?)?;
                let mut out = param.detached();
                for i in 0..out.len() {
                    let denom = (acc.data()[i] + self.epsilon).sqrt();
                    if denom > 0.0 {
                        out.data_mut()[i] -= self.lr * grad.data()[i] / denom;
                    }
                }
                Ok(out)
            }
            FirstOrderMethod::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let m = self
                    .m
                    .get_or_insert_with(|| Tensor::zeros(param.rows(), param.cols()));
                let v = self
                    .v
                    .get_or_insert_with(|| Tensor::zeros(param.rows(), param.cols()));
                let t = self.step as i32;
                let bc1 = 1.0 - b1.powi(t);
                let bc2 = 1.0 - b2.powi(t);
                let mut out = param.detached();
                for i in 0..out.len() {
                    let g = grad.data()[i];
                    m.data_mut()[i] = b1 * m.data()[i] + (1.0 - b1) * g;
                    v.data_mut()[i] = b2 * v.data()[i] + (1.0 - b2) * g * g;
                    let m_hat = m.data()[i] / bc1;
                    let v_hat = v.data()[i] / bc2;
                    out.data_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
                }
                Ok(out)
            }
        }
    }
}
