//! Nested (matryoshka) layers and model assembly.
//!
//! A [`NestedDense`] holds the weight triple (w_s, w_ta1, w_ta2): the
//! student matrix sits in the top-left corner of the conceptual combined
//! TA matrix, w_ta1 extends its rows, w_ta2 extends its columns. The
//! student parameter set is a strict subset of the TA set whenever the TA
//! is genuinely wider or deeper.
//!
//! Depth nesting is realized as trailing blocks marked `ta_exclusive`: the
//! student path skips them entirely via the residual identity, and never
//! reads or writes their activations.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Graph, Rng, Tensor};
use crate::error::{Error, Result};

/// Which of the two parameter sets to count or name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Student,
    Ta,
}

/// Parameter-sharing mode between the student and the TA.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sharing {
    /// TA reads the very same student-block storage (the default recipe).
    Shared,
    /// Each nested dense carries its own copy of the student-shaped block;
    /// encoder and readout stay shared.
    UnsharedBlocks,
    /// Additionally gives the TA its own encoder and readout.
    FullyUnshared,
}

/// One nested dense layer: student m_s->n_s inside TA m_ta->n_ta.
#[derive(Clone, Debug)]
pub struct NestedDense {
    pub m_s: usize,
    pub m_ta: usize,
    pub n_s: usize,
    pub n_ta: usize,
    pub w_s: Tensor,
    pub w_ta1: Tensor,
    pub w_ta2: Tensor,
    pub shared: bool,
    /// TA-side copy of the student block; present only when `shared` is
    /// false. Starts identical to `w_s` and drifts independently.
    pub w_s_ta_copy: Option<Tensor>,
}

impl NestedDense {
    pub fn new(
        m_s: usize,
        m_ta: usize,
        n_s: usize,
        n_ta: usize,
        shared: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if m_s == 0 || n_s == 0 || m_s > m_ta || n_s > n_ta {
            return Err(Error::Contract(format!(
                "nested dense dims must satisfy 1 <= m_s <= m_ta and 1 <= n_s <= n_ta, \
                 got m_s={m_s} m_ta={m_ta} n_s={n_s} n_ta={n_ta}"
            )));
        }
        let w_s = Tensor::randn(m_s, n_s, 1.0 / (m_s as f64).sqrt(), rng);
        let extra_rows = m_ta - m_s;
        let w_ta1 = if extra_rows == 0 {
            Tensor::zeros(0, n_s)
        } else {
            Tensor::randn(extra_rows, n_s, 1.0 / (extra_rows as f64).sqrt(), rng)
        };
        let w_ta2 = Tensor::randn(m_ta, n_ta - n_s, 1.0 / (m_ta as f64).sqrt(), rng);
        let w_s_ta_copy = (!shared).then(|| w_s.clone());
        Ok(NestedDense {
            m_s,
            m_ta,
            n_s,
            n_ta,
            w_s,
            w_ta1,
            w_ta2,
            shared,
            w_s_ta_copy,
        })
    }

    /// The matrix the TA path multiplies in the student-shaped slot.
    pub fn ta_student_slot(&self) -> &Tensor {
        self.w_s_ta_copy.as_ref().unwrap_or(&self.w_s)
    }

    pub fn forward_student(&self, g: &mut Graph, i_s: &Tensor) -> Result<Tensor> {
        if i_s.cols() != self.m_s {
            return Err(Error::shape("nested_dense_forward (student)", i_s.shape(), (self.m_s, self.n_s)));
        }
        g.matmul(i_s, &self.w_s)
    }

    /// TA dataflow: split the input at m_s, combine the student-slot and
    /// row-extension products, append the column-extension product.
    pub fn forward_ta(&self, g: &mut Graph, i_ta: &Tensor) -> Result<Tensor> {
        if i_ta.cols() != self.m_ta {
            return Err(Error::shape("nested_dense_forward (ta)", i_ta.shape(), (self.m_ta, self.n_ta)));
        }
        let (i0, i_extra) = g.split_cols(i_ta, self.m_s)?;
        let o_0 = g.matmul(&i0, self.ta_student_slot())?;
        let o_extra = g.matmul(&i_extra, &self.w_ta1)?;
        let o_1 = g.add(&o_0, &o_extra)?;
        let o_2 = g.matmul(i_ta, &self.w_ta2)?;
        g.concat_cols(&o_1, &o_2)
    }

    /// Both paths at once; the student output never depends on TA-only
    /// weights. Pass the same tensor twice for the single-input case.
    pub fn forward(&self, g: &mut Graph, i_s: &Tensor, i_ta: &Tensor) -> Result<(Tensor, Tensor)> {
        let o_s = self.forward_student(g, i_s)?;
        let o_ta = self.forward_ta(g, i_ta)?;
        Ok((o_s, o_ta))
    }

    fn bind(&self, g: &mut Graph) -> NestedDense {
        NestedDense {
            w_s: g.leaf(&self.w_s),
            w_ta1: g.leaf(&self.w_ta1),
            w_ta2: g.leaf(&self.w_ta2),
            w_s_ta_copy: self.w_s_ta_copy.as_ref().map(|t| g.leaf(t)),
            ..self.clone()
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w_s"), &self.w_s));
        out.push((format!("{prefix}.w_ta1"), &self.w_ta1));
        out.push((format!("{prefix}.w_ta2"), &self.w_ta2));
        if let Some(copy) = &self.w_s_ta_copy {
            out.push((format!("{prefix}.w_s_ta_copy"), copy));
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w_s"), &mut self.w_s));
        out.push((format!("{prefix}.w_ta1"), &mut self.w_ta1));
        out.push((format!("{prefix}.w_ta2"), &mut self.w_ta2));
        if let Some(copy) = &mut self.w_s_ta_copy {
            out.push((format!("{prefix}.w_s_ta_copy"), copy));
        }
    }
}

/// Residual FFN block with nested hidden width h_s inside h_ta.
///
/// `up` maps d -> hidden (row extension empty), `down` maps hidden -> d
/// (column extension empty) — the two opposite degenerate branches of the
/// nested dense.
#[derive(Clone, Debug)]
pub struct NestedBlock {
    pub up: NestedDense,
    pub down: NestedDense,
    pub activation: Activation,
    pub ta_exclusive: bool,
}

impl NestedBlock {
    pub fn new(
        d: usize,
        h_s: usize,
        h_ta: usize,
        activation: Activation,
        ta_exclusive: bool,
        shared: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        // Exclusive blocks live entirely on the TA side; a separate TA copy
        // of the student slot would never be exercised.
        let shared = shared || ta_exclusive;
        let up = NestedDense::new(d, d, h_s, h_ta, shared, rng)?;
        let down = NestedDense::new(h_s, h_ta, d, d, shared, rng)?;
        Ok(NestedBlock {
            up,
            down,
            activation,
            ta_exclusive,
        })
    }

    pub fn d(&self) -> usize {
        self.up.m_s
    }

    fn forward_student(&self, g: &mut Graph, x_s: &Tensor) -> Result<Tensor> {
        let u = self.up.forward_student(g, x_s)?;
        let a = g.activation(&u, self.activation)?;
        let h = self.down.forward_student(g, &a)?;
        g.add(x_s, &h)
    }

    fn forward_ta(&self, g: &mut Graph, x_ta: &Tensor) -> Result<Tensor> {
        let u = self.up.forward_ta(g, x_ta)?;
        let a = g.activation(&u, self.activation)?;
        let h = self.down.forward_ta(g, &a)?;
        g.add(x_ta, &h)
    }

    /// Residual forward on both paths. A TA-exclusive block returns the
    /// student activation untouched.
    pub fn forward(&self, g: &mut Graph, x_s: &Tensor, x_ta: &Tensor) -> Result<(Tensor, Tensor)> {
        let y_ta = self.forward_ta(g, x_ta)?;
        let y_s = if self.ta_exclusive {
            x_s.clone()
        } else {
            self.forward_student(g, x_s)?
        };
        Ok((y_s, y_ta))
    }

    fn bind(&self, g: &mut Graph) -> NestedBlock {
        NestedBlock {
            up: self.up.bind(g),
            down: self.down.bind(g),
            activation: self.activation,
            ta_exclusive: self.ta_exclusive,
        }
    }
}

/// Model geometry; hidden width is constant across blocks so sub-models can
/// mix narrow and wide choices freely.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub d_in: usize,
    pub d: usize,
    pub h_s: usize,
    pub h_ta: usize,
    pub n_shared: usize,
    pub n_extra: usize,
    pub c: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d == 0 || self.h_s == 0 || self.c < 2 {
            return Err(Error::Config(
                "model dims require d_in, d, h_s >= 1 and c >= 2".into(),
            ));
        }
        if self.h_s > self.h_ta {
            return Err(Error::Config(format!(
                "h_s {} must not exceed h_ta {}",
                self.h_s, self.h_ta
            )));
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.n_shared + self.n_extra
    }
}

/// Encoder + nested residual blocks (trailing ones TA-exclusive) + readout.
#[derive(Clone, Debug)]
pub struct MatTAModel {
    pub dims: ModelDims,
    pub sharing: Sharing,
    pub activation: Activation,
    pub encoder: Tensor,
    /// TA's own encoder, present only under `Sharing::FullyUnshared`.
    pub encoder_ta: Option<Tensor>,
    pub blocks: Vec<NestedBlock>,
    pub readout: Tensor,
    pub readout_ta: Option<Tensor>,
}

impl MatTAModel {
    pub fn new(dims: ModelDims, sharing: Sharing, activation: Activation, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let encoder = Tensor::randn(dims.d_in, dims.d, 1.0 / (dims.d_in as f64).sqrt(), rng);
        let block_shared = matches!(sharing, Sharing::Shared);
        let mut blocks = Vec::with_capacity(dims.n_blocks());
        for i in 0..dims.n_blocks() {
            let exclusive = i >= dims.n_shared;
            blocks.push(NestedBlock::new(
                dims.d, dims.h_s, dims.h_ta, activation, exclusive, block_shared, rng,
            )?);
        }
        let readout = Tensor::randn(dims.d, dims.c, 1.0 / (dims.d as f64).sqrt(), rng);
        let (encoder_ta, readout_ta) = if matches!(sharing, Sharing::FullyUnshared) {
            (Some(encoder.clone()), Some(readout.clone()))
        } else {
            (None, None)
        };
        Ok(MatTAModel {
            dims,
            sharing,
            activation,
            encoder,
            encoder_ta,
            blocks,
            readout,
            readout_ta,
        })
    }

    /// Registers every parameter as a graph leaf; shared storage is bound
    /// once, so gradients from both paths accumulate into a single node.
    pub fn bind(&self, g: &mut Graph) -> MatTAModel {
        MatTAModel {
            encoder: g.leaf(&self.encoder),
            encoder_ta: self.encoder_ta.as_ref().map(|t| g.leaf(t)),
            blocks: self.blocks.iter().map(|b| b.bind(g)).collect(),
            readout: g.leaf(&self.readout),
            readout_ta: self.readout_ta.as_ref().map(|t| g.leaf(t)),
            ..self.clone()
        }
    }

    /// Both logit heads for a batch. Softmax of each gives the two
    /// prediction distributions.
    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<(Tensor, Tensor)> {
        if x.cols() != self.dims.d_in {
            return Err(Error::shape("model_forward", x.shape(), (x.rows(), self.dims.d_in)));
        }
        let e_s = g.matmul(x, &self.encoder)?;
        let e_ta = match &self.encoder_ta {
            Some(enc) => g.matmul(x, enc)?,
            None => e_s.clone(),
        };
        let (mut x_s, mut x_ta) = (e_s, e_ta);
        for block in &self.blocks {
            (x_s, x_ta) = block.forward(g, &x_s, &x_ta)?;
        }
        let logits_s = g.matmul(&x_s, &self.readout)?;
        let logits_ta = match &self.readout_ta {
            Some(r) => g.matmul(&x_ta, r)?,
            None => g.matmul(&x_ta, &self.readout)?,
        };
        Ok((logits_s, logits_ta))
    }

    /// Value-only forward on a throwaway graph: identical arithmetic to the
    /// recorded path, nothing retained.
    pub fn forward_values(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let xt = g.leaf(x);
        let (ls, lta) = bound.forward(&mut g, &xt)?;
        Ok((ls.detached(), lta.detached()))
    }

    /// Every tensor with its canonical name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        out.push(("encoder".to_string(), &self.encoder));
        if let Some(t) = &self.encoder_ta {
            out.push(("encoder_ta".to_string(), t));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.up.visit(&format!("blocks.{i}.up"), &mut out);
            b.down.visit(&format!("blocks.{i}.down"), &mut out);
        }
        out.push(("readout".to_string(), &self.readout));
        if let Some(t) = &self.readout_ta {
            out.push(("readout_ta".to_string(), t));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        out.push(("encoder".to_string(), &mut self.encoder));
        if let Some(t) = &mut self.encoder_ta {
            out.push(("encoder_ta".to_string(), t));
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.up.visit_mut(&format!("blocks.{i}.up"), &mut out);
            b.down.visit_mut(&format!("blocks.{i}.down"), &mut out);
        }
        out.push(("readout".to_string(), &mut self.readout));
        if let Some(t) = &mut self.readout_ta {
            out.push(("readout_ta".to_string(), t));
        }
        out
    }

    /// Names of the student parameter set: encoder, readout, and the
    /// student slot of every non-exclusive block.
    pub fn student_tensor_names(&self) -> Vec<String> {
        let mut names = vec!["encoder".to_string()];
        for (i, b) in self.blocks.iter().enumerate() {
            if !b.ta_exclusive {
                names.push(format!("blocks.{i}.up.w_s"));
                names.push(format!("blocks.{i}.down.w_s"));
            }
        }
        names.push("readout".to_string());
        names
    }

    /// Names of tensors only the TA path reads (the complement of the
    /// student set).
    pub fn ta_only_tensor_names(&self) -> Vec<String> {
        let student: std::collections::HashSet<String> =
            self.student_tensor_names().into_iter().collect();
        self.named_tensors()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| !student.contains(n))
            .collect()
    }

    pub fn param_count(&self, which: Which) -> usize {
        match which {
            Which::Student => {
                let names: std::collections::HashSet<String> =
                    self.student_tensor_names().into_iter().collect();
                self.named_tensors()
                    .iter()
                    .filter(|(n, _)| names.contains(n))
                    .map(|(_, t)| t.len())
                    .sum()
            }
            Which::Ta => self.named_tensors().iter().map(|(_, t)| t.len()).sum(),
        }
    }
}

/// Lays the weight triple out as the combined TA matrix: the student slot
/// in the top-left, row extension below it, column extension on the right.
pub fn assemble_joint(ws: &Tensor, wta1: &Tensor, wta2: &Tensor) -> Result<Tensor> {
    let (m_s, n_s) = ws.shape();
    let m_ta = m_s + wta1.rows();
    let n_ta = n_s + wta2.cols();
    if wta1.cols() != n_s || wta2.rows() != m_ta {
        return Err(Error::Contract(format!(
            "assemble_joint: inconsistent shapes {:?} {:?} {:?}",
            ws.shape(),
            wta1.shape(),
            wta2.shape()
        )));
    }
    let mut out = Tensor::zeros(m_ta, n_ta);
    for r in 0..m_ta {
        for c in 0..n_s {
            let v = if r < m_s {
                ws.get(r, c)
            } else {
                wta1.get(r - m_s, c)
            };
            out.set(r, c, v);
        }
        for c in n_s..n_ta {
            out.set(r, c, wta2.get(r, c - n_s));
        }
    }
    Ok(out)
}

/// Inverse of [`assemble_joint`].
pub fn split_joint(joint: &Tensor, m_s: usize, n_s: usize) -> Result<(Tensor, Tensor, Tensor)> {
    let (m_ta, n_ta) = joint.shape();
    if m_s > m_ta || n_s > n_ta {
        return Err(Error::Contract(format!(
            "split_joint: corner {m_s}x{n_s} exceeds {m_ta}x{n_ta}"
        )));
    }
    let mut ws = Tensor::zeros(m_s, n_s);
    let mut wta1 = Tensor::zeros(m_ta - m_s, n_s);
    let mut wta2 = Tensor::zeros(m_ta, n_ta - n_s);
    for r in 0..m_ta {
        for c in 0..n_s {
            if r < m_s {
                ws.set(r, c, joint.get(r, c));
            } else {
                wta1.set(r - m_s, c, joint.get(r, c));
            }
        }
        for c in n_s..n_ta {
            wta2.set(r, c - n_s, joint.get(r, c));
        }
    }
    Ok((ws, wta1, wta2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> Rng {
        Rng::new(seed)
    }

    #[test]
    fn nested_dense_shapes_match_the_initialization_rule() {
        let d = NestedDense::new(3, 5, 2, 4, true, &mut rng(1)).unwrap();
        assert_eq!(d.w_s.shape(), (3, 2));
        assert_eq!(d.w_ta1.shape(), (2, 2));
        assert_eq!(d.w_ta2.shape(), (5, 2));
        assert!(d.w_s_ta_copy.is_none());
    }

    #[test]
    fn degenerate_nesting_gives_empty_row_extension() {
        let d = NestedDense::new(4, 4, 2, 6, true, &mut rng(2)).unwrap();
        assert_eq!(d.w_ta1.shape(), (0, 2));
        assert_eq!(d.w_ta2.shape(), (4, 4));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = NestedDense::new(3, 5, 2, 4, false, &mut rng(7)).unwrap();
        let b = NestedDense::new(3, 5, 2, 4, false, &mut rng(7)).unwrap();
        assert_eq!(a.w_s.data(), b.w_s.data());
        assert_eq!(a.w_ta1.data(), b.w_ta1.data());
        assert_eq!(a.w_ta2.data(), b.w_ta2.data());
        assert_eq!(
            a.w_s_ta_copy.unwrap().data(),
            b.w_s.data(),
            "copy starts identical to w_s"
        );
    }

    #[test]
    fn invalid_ordering_rejected() {
        assert!(NestedDense::new(5, 3, 2, 4, true, &mut rng(1)).is_err());
        assert!(NestedDense::new(0, 3, 2, 4, true, &mut rng(1)).is_err());
    }

    #[test]
    fn forward_matches_hand_arithmetic() {
        let mut d = NestedDense::new(1, 2, 1, 2, true, &mut rng(3)).unwrap();
        d.w_s = Tensor::from_rows(&[[2.0]]).unwrap();
        d.w_ta1 = Tensor::from_rows(&[[3.0]]).unwrap();
        d.w_ta2 = Tensor::from_rows(&[[1.0], [1.0]]).unwrap();
        let mut g = Graph::new();
        let bound = d.bind(&mut g);
        let i_s = g.leaf(&Tensor::from_rows(&[[5.0]]).unwrap());
        let i_ta = g.leaf(&Tensor::from_rows(&[[5.0, 7.0]]).unwrap());
        let (o_s, o_ta) = bound.forward(&mut g, &i_s, &i_ta).unwrap();
        assert_eq!(o_s.data(), &[10.0]);
        assert_eq!(o_ta.data(), &[31.0, 12.0]);
    }

    #[test]
    fn zeroed_extension_reduces_ta_to_student_path() {
        // With n_ta == n_s and the row extension zeroed, the TA output
        // equals the student output exactly.
        let mut d = NestedDense::new(3, 5, 4, 4, true, &mut rng(4)).unwrap();
        d.w_ta1 = Tensor::zeros(2, 4);
        let mut g = Graph::new();
        let bound = d.bind(&mut g);
        let x = Tensor::randn(6, 3, 1.0, &mut rng(5));
        let pad = Tensor::randn(6, 2, 1.0, &mut rng(6));
        let i_s = g.leaf(&x);
        let i_ta = g.leaf(&x.concat_cols(&pad).unwrap());
        let (o_s, o_ta) = bound.forward(&mut g, &i_s, &i_ta).unwrap();
        assert_eq!(o_s.data(), o_ta.data());
    }

    #[test]
    fn student_output_contained_in_plain_dense_oracle() {
        // Independent plain-dense oracle: a bare matmul against a copy of w_s.
        let mut r = rng(11);
        for trial in 0..40 {
            let m_s = 1 + (trial % 4);
            let m_ta = m_s + (trial % 3);
            let n_s = 1 + (trial % 5);
            let n_ta = n_s + (trial * 7 % 4);
            let d = NestedDense::new(m_s, m_ta, n_s, n_ta, trial % 2 == 0, &mut r).unwrap();
            let x = Tensor::randn(3, m_s, 1.0, &mut r);
            let mut g = Graph::new();
            let bound = d.bind(&mut g);
            let i_s = g.leaf(&x);
            let o_s = bound.forward_student(&mut g, &i_s).unwrap();
            let oracle = x.matmul(&d.w_s).unwrap();
            assert_eq!(o_s.data(), oracle.data(), "trial {trial}");
        }
    }

    #[test]
    fn residual_block_with_zero_weights_is_identity() {
        let mut block = NestedBlock::new(4, 3, 5, Activation::Tanh, false, true, &mut rng(8)).unwrap();
        block.up.w_s = Tensor::zeros(4, 3);
        block.up.w_ta1 = Tensor::zeros(0, 3);
        block.up.w_ta2 = Tensor::zeros(4, 2);
        block.down.w_s = Tensor::zeros(3, 4);
        block.down.w_ta1 = Tensor::zeros(2, 4);
        block.down.w_ta2 = Tensor::zeros(5, 0);
        let mut g = Graph::new();
        let bound = block.bind(&mut g);
        let xs = g.leaf(&Tensor::randn(2, 4, 1.0, &mut rng(9)));
        let xta = g.leaf(&Tensor::randn(2, 4, 1.0, &mut rng(10)));
        let (ys, yta) = bound.forward(&mut g, &xs, &xta).unwrap();
        assert_eq!(ys.data(), xs.data());
        assert_eq!(yta.data(), xta.data());
    }

    #[test]
    fn exclusive_block_passes_student_through_bitwise() {
        let block = NestedBlock::new(4, 3, 5, Activation::GeluTanh, true, true, &mut rng(12)).unwrap();
        let mut g = Graph::new();
        let bound = block.bind(&mut g);
        let xs_val = Tensor::randn(2, 4, 1.0, &mut rng(13));
        let xs = g.leaf(&xs_val);
        let xta = g.leaf(&Tensor::randn(2, 4, 1.0, &mut rng(14)));
        let (ys, yta) = bound.forward(&mut g, &xs, &xta).unwrap();
        assert_eq!(ys.data(), xs_val.data());
        assert_ne!(yta.data(), xs_val.data());
    }

    #[test]
    fn equal_widths_shared_paths_coincide() {
        // h_ta == h_s, shared: feeding both paths the same input makes the
        // TA output equal the student output.
        let mut r = rng(15);
        for _ in 0..20 {
            let block = NestedBlock::new(4, 6, 6, Activation::Tanh, false, true, &mut r).unwrap();
            let x = Tensor::randn(3, 4, 1.0, &mut r);
            let mut g = Graph::new();
            let bound = block.bind(&mut g);
            let xs = g.leaf(&x);
            let (ys, yta) = bound.forward(&mut g, &xs, &xs).unwrap();
            for i in 0..ys.len() {
                assert!((ys.data()[i] - yta.data()[i]).abs() == 0.0);
            }
        }
    }

    fn toy_dims() -> ModelDims {
        ModelDims { d_in: 4, d: 4, h_s: 8, h_ta: 16, n_shared: 2, n_extra: 1, c: 3 }
    }

    #[test]
    fn param_counts_match_hand_count() {
        let model =
            MatTAModel::new(toy_dims(), Sharing::Shared, Activation::Tanh, &mut rng(16)).unwrap();
        // student: 4*4 + 2*(4*8 + 8*4) + 4*3 = 156
        assert_eq!(model.param_count(Which::Student), 156);
        // ta adds 2 shared-block extensions (128) and one exclusive block (128)
        assert_eq!(model.param_count(Which::Ta), 412);
    }

    #[test]
    fn equal_dims_make_counts_equal() {
        let dims = ModelDims { d_in: 4, d: 4, h_s: 8, h_ta: 8, n_shared: 2, n_extra: 0, c: 3 };
        let model = MatTAModel::new(dims, Sharing::Shared, Activation::Tanh, &mut rng(17)).unwrap();
        assert_eq!(model.param_count(Which::Student), model.param_count(Which::Ta));
    }

    #[test]
    fn unshared_blocks_add_one_copy_per_nested_dense() {
        let shared =
            MatTAModel::new(toy_dims(), Sharing::Shared, Activation::Tanh, &mut rng(18)).unwrap();
        let unshared =
            MatTAModel::new(toy_dims(), Sharing::UnsharedBlocks, Activation::Tanh, &mut rng(18))
                .unwrap();
        // copies only on the non-exclusive blocks: 2 blocks * (4*8 + 8*4)
        assert_eq!(
            unshared.param_count(Which::Ta),
            shared.param_count(Which::Ta) + 2 * (4 * 8 + 8 * 4)
        );
        assert_eq!(unshared.param_count(Which::Student), shared.param_count(Which::Student));
    }

    #[test]
    fn theta_is_strict_subset_of_phi() {
        let model =
            MatTAModel::new(toy_dims(), Sharing::Shared, Activation::Tanh, &mut rng(19)).unwrap();
        let student = model.student_tensor_names();
        let ta_only = model.ta_only_tensor_names();
        assert!(!ta_only.is_empty());
        for n in &student {
            assert!(!ta_only.contains(n));
        }
        assert_eq!(student.len() + ta_only.len(), model.named_tensors().len());
    }

    #[test]
    fn zero_blocks_model_is_encoder_readout_chain() {
        let dims = ModelDims { d_in: 3, d: 4, h_s: 1, h_ta: 1, n_shared: 0, n_extra: 0, c: 2 };
        let model = MatTAModel::new(dims, Sharing::Shared, Activation::Tanh, &mut rng(20)).unwrap();
        let x = Tensor::randn(5, 3, 1.0, &mut rng(21));
        let (ls, lta) = model.forward_values(&x).unwrap();
        let direct = x.matmul(&model.encoder).unwrap().matmul(&model.readout).unwrap();
        assert_eq!(ls.data(), direct.data());
        assert_eq!(lta.data(), direct.data());
    }

    #[test]
    fn equal_widths_no_extra_means_identical_heads() {
        let dims = ModelDims { d_in: 4, d: 4, h_s: 6, h_ta: 6, n_shared: 2, n_extra: 0, c: 2 };
        let model = MatTAModel::new(dims, Sharing::Shared, Activation::GeluTanh, &mut rng(22)).unwrap();
        let x = Tensor::randn(8, 4, 1.0, &mut rng(23));
        let (ls, lta) = model.forward_values(&x).unwrap();
        for i in 0..ls.len() {
            assert_eq!(ls.data()[i], lta.data()[i]);
        }
    }

    #[test]
    fn joint_assembly_round_trips() {
        let mut r = rng(24);
        let d = NestedDense::new(3, 5, 2, 6, true, &mut r).unwrap();
        let joint = assemble_joint(&d.w_s, &d.w_ta1, &d.w_ta2).unwrap();
        assert_eq!(joint.shape(), (5, 6));
        let (ws, wta1, wta2) = split_joint(&joint, 3, 2).unwrap();
        assert_eq!(ws.data(), d.w_s.data());
        assert_eq!(wta1.data(), d.w_ta1.data());
        assert_eq!(wta2.data(), d.w_ta2.data());
    }

    #[test]
    fn fully_unshared_has_private_encoder_and_readout() {
        let model =
            MatTAModel::new(toy_dims(), Sharing::FullyUnshared, Activation::Tanh, &mut rng(25))
                .unwrap();
        assert!(model.encoder_ta.is_some());
        assert!(model.readout_ta.is_some());
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"encoder_ta".to_string()));
        assert!(model.ta_only_tensor_names().contains(&"readout_ta".to_string()));
    }
}
