//! Synthetic frozen-teacher tasks, streaming mini-batches, and evaluation
//! metrics (cross-entropy, accuracy, AUROC / AucLoss).
//!
//! Inputs follow a seeded mixture of isotropic Gaussians; labels come from
//! a frozen MLP teacher, either as its softened class probabilities or as
//! one-hot samples drawn from them (event-style labels). Every draw is
//! determined by (seed, config); training and evaluation use disjoint
//! streams derived from the same seed.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Rng, Tensor};
use crate::error::{Error, Result};

/// Stream ids carved out of a run seed.
pub mod streams {
    pub const TASK: u64 = 0x7A51;
    pub const INIT: u64 = 0x1217;
    pub const TRAIN: u64 = 0x7214;
    pub const EVAL: u64 = 0xE7A1;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// y rows are the teacher's softened probabilities.
    Soft,
    /// y rows are one-hot samples from those probabilities (clicks-style).
    HardEvent,
}

/// Frozen teacher + seeded input law.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub d_in: usize,
    pub classes: usize,
    pub temperature: f64,
    pub label_mode: LabelMode,
    w1: Tensor,
    w2: Tensor,
    component_means: Tensor,
    component_scales: Vec<f64>,
    component_cumweights: Vec<f64>,
}

impl SyntheticTask {
    pub fn new(
        seed: u64,
        d_in: usize,
        classes: usize,
        teacher_hidden: usize,
        components: usize,
        temperature: f64,
        label_mode: LabelMode,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("task needs classes >= 2, got {classes}")));
        }
        if temperature <= 0.0 {
            return Err(Error::Config("task temperature must be positive".into()));
        }
        if d_in == 0 || teacher_hidden == 0 || components == 0 {
            return Err(Error::Config(
                "task dims (d_in, teacher_hidden, components) must be >= 1".into(),
            ));
        }
        let mut rng = Rng::stream(seed, streams::TASK);
        let component_means = Tensor::randn(components, d_in, 1.5, &mut rng);
        let component_scales: Vec<f64> =
            (0..components).map(|_| 0.4 + 0.6 * rng.next_f64()).collect();
        let raw: Vec<f64> = (0..components).map(|_| 0.5 + rng.next_f64()).collect();
        let total: f64 = raw.iter().sum();
        let mut acc = 0.0;
        let component_cumweights = raw
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        // Teacher gain of 2 keeps its soft labels confidently off-uniform so
        // the Bayes cross-entropy sits well below ln(classes).
        let w1 = Tensor::randn(d_in, teacher_hidden, 2.0 / (d_in as f64).sqrt(), &mut rng);
        let w2 = Tensor::randn(
            teacher_hidden,
            classes,
            2.0 / (teacher_hidden as f64).sqrt(),
            &mut rng,
        );
        Ok(SyntheticTask {
            d_in,
            classes,
            temperature,
            label_mode,
            w1,
            w2,
            component_means,
            component_scales,
            component_cumweights,
        })
    }

    /// Teacher logits for a batch (frozen tanh MLP).
    pub fn teacher_logits(&self, x: &Tensor) -> Result<Tensor> {
        let hidden = x.matmul(&self.w1)?.map(f64::tanh);
        hidden.matmul(&self.w2)
    }

    /// Teacher soft labels: softmax(logits / temperature).
    pub fn teacher_soft_labels(&self, x: &Tensor) -> Result<Tensor> {
        self.teacher_logits(x)?
            .scaled(1.0 / self.temperature)
            .softmax_rows()
    }

    fn sample_inputs(&self, rng: &mut Rng, batch: usize) -> Tensor {
        let mut x = Tensor::zeros(batch, self.d_in);
        for r in 0..batch {
            let u = rng.next_f64();
            let comp = self
                .component_cumweights
                .iter()
                .position(|&c| u < c)
                .unwrap_or(self.component_cumweights.len() - 1);
            let scale = self.component_scales[comp];
            for c in 0..self.d_in {
                let v = self.component_means.get(comp, c) + scale * rng.normal();
                x.set(r, c, v);
            }
        }
        x
    }

    /// One i.i.d. mini-batch; label rows always sum to 1.
    pub fn sample_batch(&self, rng: &mut Rng, batch: usize) -> Result<(Tensor, Tensor)> {
        if batch == 0 {
            return Err(Error::Contract("sample_batch needs batch >= 1".into()));
        }
        let x = self.sample_inputs(rng, batch);
        let soft = self.teacher_soft_labels(&x)?;
        let y = match self.label_mode {
            LabelMode::Soft => soft,
            LabelMode::HardEvent => {
                let mut y = Tensor::zeros(batch, self.classes);
                for r in 0..batch {
                    let u = rng.next_f64();
                    let mut acc = 0.0;
                    let mut chosen = self.classes - 1;
                    for c in 0..self.classes {
                        acc += soft.get(r, c);
                        if u < acc {
                            chosen = c;
                            break;
                        }
                    }
                    y.set(r, chosen, 1.0);
                }
                y
            }
        };
        Ok((x, y))
    }
}

/// Evaluation summary; AUROC fields are present only for binary tasks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub cross_entropy: f64,
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub aucloss: Option<f64>,
}

/// AUROC by the Mann-Whitney rank-sum formulation with midrank tie
/// handling: P(score+ > score-) + P(tie)/2.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "auroc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric(format!(
            "AUROC undefined: {positives} positives, {negatives} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // rank sum over positives with midranks for ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0; // 1-based
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = positives as f64;
    let n_neg = negatives as f64;
    let u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

pub fn aucloss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(1.0 - auroc(scores, labels)?)
}

const EVAL_CHUNK: usize = 256;

/// Evaluates a logits function on a fixed held-out set drawn from the eval
/// stream of `seed`: cross-entropy against soft teacher labels, accuracy
/// against the teacher argmax, AUROC of the class-1 probability for binary
/// tasks.
pub fn evaluate(
    forward: impl Fn(&Tensor) -> Result<Tensor>,
    task: &SyntheticTask,
    n_eval: usize,
    seed: u64,
) -> Result<EvalMetrics> {
    if n_eval == 0 {
        return Err(Error::Contract("evaluate needs n_eval >= 1".into()));
    }
    let mut rng = Rng::stream(seed, streams::EVAL);
    let mut ce_sum = 0.0;
    let mut correct = 0usize;
    let mut scores = Vec::new();
    let mut labels = Vec::new();

    let mut remaining = n_eval;
    while remaining > 0 {
        let b = remaining.min(EVAL_CHUNK);
        remaining -= b;
        let x = task.sample_inputs(&mut rng, b);
        let soft = task.teacher_soft_labels(&x)?;
        let teacher_argmax = task.teacher_logits(&x)?.argmax_rows();
        let logits = forward(&x)?;
        if logits.shape() != (b, task.classes) {
            return Err(Error::shape("evaluate", logits.shape(), (b, task.classes)));
        }
        let log_p = logits.log_softmax_rows()?;
        for r in 0..b {
            for c in 0..task.classes {
                ce_sum -= soft.get(r, c) * log_p.get(r, c);
            }
        }
        let predicted = logits.argmax_rows();
        for r in 0..b {
            if predicted[r] == teacher_argmax[r] {
                correct += 1;
            }
        }
        if task.classes == 2 {
            for r in 0..b {
                scores.push(log_p.get(r, 1).exp());
                labels.push(teacher_argmax[r] == 1);
            }
        }
    }

    let (roc, loss) = if task.classes == 2 {
        let a = auroc(&scores, &labels)?;
        (Some(a), Some(1.0 - a))
    } else {
        (None, None)
    };
    Ok(EvalMetrics {
        cross_entropy: ce_sum / n_eval as f64,
        accuracy: correct as f64 / n_eval as f64,
        auroc: roc,
        aucloss: loss,
    })
}
