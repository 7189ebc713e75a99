//! Mix'n'match sub-model extraction from a trained nested model.
//!
//! Per block a sub-model takes the narrow (student) weights, the wide
//! (full nested) weights, or — for TA-exclusive blocks only — skips the
//! block, which the residual identity makes well-formed. The reserved
//! "student" and "ta" configurations reproduce the co-trained paths
//! exactly; wide-narrow-wide sweeps fill the size range between them.
//!
//! Wide blocks keep the down projection as its two row segments: the
//! nested forward adds the two partial products, and collapsing them into
//! a single stacked matrix would change the floating-point summation
//! grouping away from the co-trained path.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Tensor};
use crate::error::{Error, Result};
use crate::matlayers::{MatTAModel, ModelDims};

pub const STUDENT_LABEL: &str = "student";
pub const TA_LABEL: &str = "ta";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockChoice {
    /// The student slot of the nested pair.
    Narrow,
    /// The full nested pair at TA width.
    Wide,
    /// Remove the block entirely (TA-exclusive blocks only).
    Skip,
}

/// One sub-model choice: a width decision per block plus a label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub choices: Vec<BlockChoice>,
    pub label: String,
    /// Read the TA's private encoder/readout where they exist (only the
    /// reserved "ta" config, under fully-unshared training).
    #[serde(default)]
    pub use_ta_shared: bool,
}

impl ExtractConfig {
    /// All-narrow on shared blocks, skipping every exclusive block: the
    /// co-trained student.
    pub fn student(n_shared: usize, n_extra: usize) -> Self {
        let mut choices = vec![BlockChoice::Narrow; n_shared];
        choices.extend(std::iter::repeat(BlockChoice::Skip).take(n_extra));
        ExtractConfig {
            choices,
            label: STUDENT_LABEL.to_string(),
            use_ta_shared: false,
        }
    }

    /// All-wide including exclusive blocks: the co-trained TA.
    pub fn ta(n_total: usize) -> Self {
        ExtractConfig {
            choices: vec![BlockChoice::Wide; n_total],
            label: TA_LABEL.to_string(),
            use_ta_shared: true,
        }
    }
}

/// Wide-narrow-wide pattern: the bottom ceil(k/2) and top floor(k/2)
/// blocks wide, the middle narrow. Exclusive blocks follow their region's
/// width; nothing is skipped.
pub fn wide_narrow_wide_config(k: usize, n_total: usize) -> Result<ExtractConfig> {
    if k > n_total {
        return Err(Error::Contract(format!(
            "wide-narrow-wide k={k} exceeds block count {n_total}"
        )));
    }
    let bottom = k.div_ceil(2);
    let top = k / 2;
    let choices = (0..n_total)
        .map(|i| {
            if i < bottom || i >= n_total - top {
                BlockChoice::Wide
            } else {
                BlockChoice::Narrow
            }
        })
        .collect();
    Ok(ExtractConfig {
        choices,
        label: format!("wnw-k{k}"),
        use_ta_shared: false,
    })
}

/// One wide-narrow-wide config per k (ascending, unique), plus the
/// reserved "student" and "ta" configs.
pub fn enumerate_grid(n_shared: usize, n_extra: usize, ks: &[usize]) -> Result<Vec<ExtractConfig>> {
    let n_total = n_shared + n_extra;
    for pair in ks.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Contract(format!(
                "ks must be strictly ascending, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    let mut out = Vec::with_capacity(ks.len() + 2);
    for &k in ks {
        out.push(wide_narrow_wide_config(k, n_total)?);
    }
    out.push(ExtractConfig::student(n_shared, n_extra));
    out.push(ExtractConfig::ta(n_total));
    Ok(out)
}

/// A plain residual FFN block. `down_bottom`, when present, is the row
/// extension of the down projection, applied to the upper part of the
/// hidden activation and added to the `down_top` product — the same op
/// order as the nested forward.
#[derive(Clone, Debug)]
pub struct PlainBlock {
    pub up: Tensor,
    pub down_top: Tensor,
    pub down_bottom: Option<Tensor>,
    pub activation: Activation,
}

impl PlainBlock {
    pub fn hidden_width(&self) -> usize {
        self.up.cols()
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let u = x.matmul(&self.up)?;
        let a = u.map(|v| self.activation.apply(v));
        let h = match &self.down_bottom {
            Some(bottom) => {
                let (a0, a_extra) = a.split_cols(self.down_top.rows())?;
                a0.matmul(&self.down_top)?.add(&a_extra.matmul(bottom)?)?
            }
            None => a.matmul(&self.down_top)?,
        };
        x.add(&h)
    }
}

/// A servable standalone model: no nesting metadata, no TA head.
#[derive(Clone, Debug)]
pub struct StandaloneModel {
    pub label: String,
    pub encoder: Tensor,
    pub blocks: Vec<PlainBlock>,
    pub readout: Tensor,
}

impl StandaloneModel {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.matmul(&self.encoder)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        h.matmul(&self.readout)
    }

    pub fn param_count(&self) -> usize {
        self.encoder.len()
            + self.readout.len()
            + self
                .blocks
                .iter()
                .map(|b| {
                    b.up.len()
                        + b.down_top.len()
                        + b.down_bottom.as_ref().map_or(0, Tensor::len)
                })
                .sum::<usize>()
    }

    /// Block parameters only, excluding encoder and readout.
    pub fn param_count_nonembedding(&self) -> usize {
        self.param_count() - self.encoder.len() - self.readout.len()
    }
}

/// Copies the chosen weights out of a trained model into a standalone one.
pub fn materialize(model: &MatTAModel, cfg: &ExtractConfig) -> Result<StandaloneModel> {
    if cfg.choices.len() != model.blocks.len() {
        return Err(Error::Contract(format!(
            "extract config has {} choices for {} blocks",
            cfg.choices.len(),
            model.blocks.len()
        )));
    }
    let mut blocks = Vec::new();
    for (block, &choice) in model.blocks.iter().zip(&cfg.choices) {
        match choice {
            BlockChoice::Skip => {
                if !block.ta_exclusive {
                    return Err(Error::Contract(
                        "skip is only valid on TA-exclusive blocks".into(),
                    ));
                }
            }
            BlockChoice::Narrow => {
                blocks.push(PlainBlock {
                    up: block.up.w_s.detached(),
                    down_top: block.down.w_s.detached(),
                    down_bottom: None,
                    activation: block.activation,
                });
            }
            BlockChoice::Wide => {
                // up: row extension is empty, so [student slot | column
                // extension] is one matrix with identical per-entry dot
                // products; down: keep the two row segments separate.
                let up = block
                    .up
                    .ta_student_slot()
                    .concat_cols(&block.up.w_ta2)?;
                let down_bottom = (block.down.w_ta1.rows() > 0)
                    .then(|| block.down.w_ta1.detached());
                blocks.push(PlainBlock {
                    up,
                    down_top: block.down.ta_student_slot().detached(),
                    down_bottom,
                    activation: block.activation,
                });
            }
        }
    }
    let (encoder, readout) = if cfg.use_ta_shared {
        (
            model.encoder_ta.as_ref().unwrap_or(&model.encoder),
            model.readout_ta.as_ref().unwrap_or(&model.readout),
        )
    } else {
        (&model.encoder, &model.readout)
    };
    Ok(StandaloneModel {
        label: cfg.label.clone(),
        encoder: encoder.detached(),
        blocks,
        readout: readout.detached(),
    })
}

/// Closed-form parameter count of a config against model dims; matches
/// tensor enumeration of the materialized model.
pub fn extracted_param_count(cfg: &ExtractConfig, dims: &ModelDims) -> usize {
    let mut count = dims.d_in * dims.d + dims.d * dims.c;
    for &choice in &cfg.choices {
        count += match choice {
            BlockChoice::Narrow => 2 * dims.d * dims.h_s,
            BlockChoice::Wide => 2 * dims.d * dims.h_ta,
            BlockChoice::Skip => 0,
        };
    }
    count
}
