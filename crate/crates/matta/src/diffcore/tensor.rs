//! Dense row-major 2-D tensors of f64.
//!
//! All value-level kernels live here; the tape in [`super::graph`] records
//! these same kernels, so a value computed with or without a graph is
//! bitwise identical. Empty tensors (0 rows or 0 columns) are first-class
//! and flow through every kernel.

use super::graph::NodeId;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    node: Option<NodeId>,
}

impl Tensor {
    /// Builds a tensor from row-major data. Rejects length mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "tensor data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value {bad} in {rows}x{cols} tensor"
            )));
        }
        Ok(Tensor {
            rows,
            cols,
            data,
            node: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            node: None,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
            node: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(1, 1, vec![value])
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.as_ref().len() != c {
                return Err(Error::Contract("ragged row lengths".into()));
            }
            data.extend_from_slice(row.as_ref());
        }
        Tensor::new(r, c, data)
    }

    /// Entries drawn i.i.d. normal(0, sigma).
    pub fn randn(rows: usize, cols: usize, sigma: f64, rng: &mut super::Rng) -> Self {
        let data = (0..rows * cols).map(|_| sigma * rng.normal()).collect();
        Tensor {
            rows,
            cols,
            data,
            node: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The scalar held by a 1x1 tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "item() on {}x{} tensor",
                self.rows, self.cols
            )));
        }
        Ok(self.data[0])
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, id: NodeId) -> Self {
        self.node = Some(id);
        self
    }

    /// A copy with no graph handle.
    pub fn detached(&self) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.clone(),
            node: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    // ---- value kernels -------------------------------------------------

    /// Matrix product. Accumulation for each output entry runs over k in
    /// increasing order, so any decomposition of the same dot products
    /// reproduces these bits exactly.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        let t = Tensor {
            rows: m,
            cols: n,
            data: out,
            node: None,
        };
        debug_assert!(t.all_finite(), "matmul produced non-finite values");
        Ok(t)
    }

    pub fn transposed(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data: out,
            node: None,
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
            node: None,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
            node: None,
        })
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "hadamard")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
            node: None,
        })
    }

    pub fn scaled(&self, factor: f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
            node: None,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
            node: None,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Column split at m: ([:, :m], [:, m:]). Either side may be empty.
    pub fn split_cols(&self, m: usize) -> Result<(Tensor, Tensor)> {
        if m > self.cols {
            return Err(Error::Contract(format!(
                "split_cols at {m} out of bounds for {}x{}",
                self.rows, self.cols
            )));
        }
        let right_cols = self.cols - m;
        let mut left = Vec::with_capacity(self.rows * m);
        let mut right = Vec::with_capacity(self.rows * right_cols);
        for r in 0..self.rows {
            let row = self.row(r);
            left.extend_from_slice(&row[..m]);
            right.extend_from_slice(&row[m..]);
        }
        Ok((
            Tensor {
                rows: self.rows,
                cols: m,
                data: left,
                node: None,
            },
            Tensor {
                rows: self.rows,
                cols: right_cols,
                data: right,
                node: None,
            },
        ))
    }

    pub fn concat_cols(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(Error::shape("concat_cols", self.shape(), other.shape()));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Tensor {
            rows: self.rows,
            cols,
            data,
            node: None,
        })
    }

    /// Row slice [r0, r1) as a new tensor.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor> {
        if r0 > r1 || r1 > self.rows {
            return Err(Error::Contract(format!(
                "slice_rows {r0}..{r1} out of bounds for {} rows",
                self.rows
            )));
        }
        Ok(Tensor {
            rows: r1 - r0,
            cols: self.cols,
            data: self.data[r0 * self.cols..r1 * self.cols].to_vec(),
            node: None,
        })
    }

    /// Numerically safe row-wise log-softmax (max-shifted).
    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        if self.cols == 0 {
            return Err(Error::Contract("log_softmax_rows on 0 columns".into()));
        }
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            let row = self.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_z = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - max - log_z));
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: out,
            node: None,
        })
    }

    pub fn softmax_rows(&self) -> Result<Tensor> {
        Ok(self.log_softmax_rows()?.map(f64::exp))
    }

    /// Index of the largest entry in each row.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn creation_rejects_bad_len_and_nonfinite() {
        assert!(Tensor::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Tensor::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let id = Tensor::identity(2);
        assert_eq!(a.matmul(&id).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[[3.0], [4.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("2x3"), "{err}");
    }

    #[test]
    fn empty_tensors_flow_through() {
        let a = Tensor::zeros(3, 0);
        let b = Tensor::zeros(0, 4);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), (3, 4));
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn split_concat_round_trip_exact() {
        let mut rng = super::super::Rng::new(5);
        let x = Tensor::randn(4, 7, 1.0, &mut rng);
        for m in 0..=7 {
            let (l, r) = x.split_cols(m).unwrap();
            let back = l.concat_cols(&r).unwrap();
            assert_eq!(back.data(), x.data());
        }
    }

    #[test]
    fn split_out_of_bounds() {
        assert!(Tensor::zeros(1, 3).split_cols(4).is_err());
    }

    #[test]
    fn log_softmax_rows_sum_to_one() {
        let x = Tensor::from_rows(&[[0.0, 0.0], [1000.0, 0.0]]).unwrap();
        let ls = x.log_softmax_rows().unwrap();
        assert!((ls.get(0, 0) - (-(2.0f64.ln()))).abs() < 1e-15);
        assert!(ls.get(1, 0).abs() < 1e-12);
        assert!((ls.get(1, 1) + 1000.0).abs() < 1e-9);
        for r in 0..2 {
            let s: f64 = ls.row(r).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
