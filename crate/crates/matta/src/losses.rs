//! The three loss terms, their composite weighting, and the distillation
//! ramp-up curriculum.
//!
//! `soft_cross_entropy` serves both the student loss and the TA loss
//! (labels against log-probabilities). `distill_loss` feeds the student
//! the TA's probabilities through a mandatory internal stop-gradient, so
//! distillation never updates TA parameters.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};

/// Composite-loss weights (student, TA, distillation).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_s: f64,
    pub w_ta: f64,
    pub w_d: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_s < 0.0 || self.w_ta < 0.0 || self.w_d < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.w_s == 0.0 && self.w_ta == 0.0 && self.w_d == 0.0 {
            return Err(Error::Config("loss weights must not all be zero".into()));
        }
        Ok(())
    }
}

/// Linear ramp for the distillation weight: zero before `ramp_start_step`,
/// full target from `ramp_end_step` on.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curriculum {
    pub ramp_start_step: u64,
    pub ramp_end_step: u64,
}

impl Curriculum {
    pub fn validate(&self) -> Result<()> {
        if self.ramp_start_step > self.ramp_end_step {
            return Err(Error::Config(format!(
                "curriculum ramp_start_step {} exceeds ramp_end_step {}",
                self.ramp_start_step, self.ramp_end_step
            )));
        }
        Ok(())
    }
}

/// Effective distillation weight at `step`; monotone nondecreasing.
pub fn curriculum_weight(step: u64, c: &Curriculum, target: f64) -> f64 {
    if step < c.ramp_start_step {
        0.0
    } else if step >= c.ramp_end_step {
        target
    } else {
        let span = (c.ramp_end_step - c.ramp_start_step) as f64;
        target * (step - c.ramp_start_step) as f64 / span
    }
}

fn check_label_rows(y: &Tensor) -> Result<()> {
    for r in 0..y.rows() {
        let row = y.row(r);
        if row.iter().any(|&v| v < 0.0) {
            return Err(Error::Contract(format!(
                "label row {r} has negative entries"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "label row {r} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Mean over the batch of -sum_i y_i log softmax(logits)_i.
pub fn soft_cross_entropy(g: &mut Graph, logits: &Tensor, y: &Tensor) -> Result<Tensor> {
    if logits.shape() != y.shape() {
        return Err(Error::shape("soft_cross_entropy", logits.shape(), y.shape()));
    }
    if logits.rows() == 0 {
        return Err(Error::Contract("soft_cross_entropy on empty batch".into()));
    }
    check_label_rows(y)?;
    let log_p = g.log_softmax_rows(logits)?;
    let weighted = g.mul(y, &log_p)?;
    let total = g.sum(&weighted)?;
    g.scale(&total, -1.0 / logits.rows() as f64)
}

/// Mean over the batch of -sum_i softmax(stop_gradient(logits_ta))_i
/// log softmax(logits_s)_i. The stop-gradient is internal and mandatory.
pub fn distill_loss(g: &mut Graph, logits_s: &Tensor, logits_ta: &Tensor) -> Result<Tensor> {
    if logits_s.shape() != logits_ta.shape() {
        return Err(Error::shape(
            "distill_loss",
            logits_s.shape(),
            logits_ta.shape(),
        ));
    }
    if logits_s.rows() == 0 {
        return Err(Error::Contract("distill_loss on empty batch".into()));
    }
    let frozen = g.stop_gradient(logits_ta)?;
    let p_ta = {
        let log_p_ta = g.log_softmax_rows(&frozen)?;
        g.exp(&log_p_ta)?
    };
    let log_p_s = g.log_softmax_rows(logits_s)?;
    let weighted = g.mul(&p_ta, &log_p_s)?;
    let total = g.sum(&weighted)?;
    g.scale(&total, -1.0 / logits_s.rows() as f64)
}

/// w_s * l_s + w_ta * l_ta + w_d * l_d over scalar (1x1) loss nodes.
pub fn composite_loss(
    g: &mut Graph,
    w: &LossWeights,
    l_s: &Tensor,
    l_ta: &Tensor,
    l_d: &Tensor,
) -> Result<Tensor> {
    let a = g.scale(l_s, w.w_s)?;
    let b = g.scale(l_ta, w.w_ta)?;
    let c = g.scale(l_d, w.w_d)?;
    let ab = g.add(&a, &b)?;
    g.add(&ab, &c)
}
