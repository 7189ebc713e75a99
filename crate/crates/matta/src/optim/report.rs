//! Preconditioner structure report: normalized correlations of a Gram
//! accumulator with block statistics around the student/TA-extra seam.

use std::fmt::Write as _;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockStats {
    /// The student/extra boundary the statistics are split at.
    pub split: usize,
    /// Mean |C_ij| over off-diagonal entries with both indices < split.
    pub within_student: f64,
    /// Mean |C_ij| over off-diagonal entries with both indices >= split.
    pub within_extra: f64,
    /// Mean |C_ij| over entries straddling the boundary.
    pub cross: f64,
    /// (combined within-block mean) / cross; infinite when cross is 0.
    pub ratio_within_cross: f64,
    /// Number of zero diagonal entries; their correlations are reported as 0.
    pub zero_diagonal: usize,
}

#[derive(Clone, Debug)]
pub struct PreconReport {
    /// C_ij = acc_ij / sqrt(acc_ii * acc_jj), unit diagonal where defined.
    pub corr: Tensor,
    pub stats: BlockStats,
}

/// Builds the normalized correlation matrix of a square accumulator and
/// summarizes |C| within and across the two diagonal blocks delimited by
/// `split`.
pub fn preconditioner_report(acc: &Tensor, split: usize) -> Result<PreconReport> {
    let k = acc.rows();
    if acc.cols() != k {
        return Err(Error::shape("preconditioner_report", acc.shape(), (k, k)));
    }
    if split > k {
        return Err(Error::Contract(format!(
            "preconditioner_report split {split} exceeds accumulator dim {k}"
        )));
    }
    let mut corr = Tensor::zeros(k, k);
    let mut zero_diagonal = 0;
    for i in 0..k {
        if acc.get(i, i) == 0.0 {
            zero_diagonal += 1;
        }
    }
    for i in 0..k {
        for j in 0..k {
            let denom = (acc.get(i, i) * acc.get(j, j)).sqrt();
            let v = if denom > 0.0 { acc.get(i, j) / denom } else { 0.0 };
            corr.set(i, j, v);
        }
    }

    let mean_abs = |pred: &dyn Fn(usize, usize) -> bool| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..k {
            for j in 0..k {
                if i != j && pred(i, j) {
                    sum += corr.get(i, j).abs();
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    };

    let within_student = mean_abs(&|i, j| i < split && j < split);
    let within_extra = mean_abs(&|i, j| i >= split && j >= split);
    let cross = mean_abs(&|i, j| (i < split) != (j < split));
    let within_combined = mean_abs(&|i, j| (i < split) == (j < split));
    let ratio_within_cross = if cross > 0.0 {
        within_combined / cross
    } else {
        f64::INFINITY
    };

    Ok(PreconReport {
        corr,
        stats: BlockStats {
            split,
            within_student,
            within_extra,
            cross,
            ratio_within_cross,
            zero_diagonal,
        },
    })
}

/// Plain PGM (P2 ASCII) rendering of |C|, 0..255 gray; lighter = stronger.
pub fn corr_to_pgm(corr: &Tensor) -> String {
    let (h, w) = corr.shape();
    let mut out = String::new();
    let _ = writeln!(out, "P2");
    let _ = writeln!(out, "{w} {h}");
    let _ = writeln!(out, "255");
    for r in 0..h {
        let row: Vec<String> = (0..w)
            .map(|c| {
                let level = (corr.get(r, c).abs().min(1.0) * 255.0).round() as u32;
                level.to_string()
            })
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// The correlation matrix as CSV (plain numeric rows, no header).
pub fn corr_to_csv(corr: &Tensor) -> String {
    let (h, w) = corr.shape();
    let mut out = String::new();
    for r in 0..h {
        let row: Vec<String> = (0..w).map(|c| format!("{}", corr.get(r, c))).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_accumulator_gives_unit_diagonal_zero_off() {
        let rep = preconditioner_report(&Tensor::identity(6), 4).unwrap();
        for i in 0..6 {
            assert_eq!(rep.corr.get(i, i), 1.0);
        }
        assert_eq!(rep.stats.within_student, 0.0);
        assert_eq!(rep.stats.within_extra, 0.0);
        assert_eq!(rep.stats.cross, 0.0);
        assert_eq!(rep.stats.zero_diagonal, 0);
        assert!(rep.stats.ratio_within_cross.is_infinite());
    }

    #[test]
    fn student_only_support_leaves_extra_block_zero() {
        // gradients supported on the first two coordinates only
        let mut acc = Tensor::zeros(4, 4);
        acc.set(0, 0, 2.0);
        acc.set(1, 1, 1.0);
        acc.set(0, 1, 0.5);
        acc.set(1, 0, 0.5);
        let rep = preconditioner_report(&acc, 2).unwrap();
        for i in 2..4 {
            for j in 0..4 {
                assert_eq!(rep.corr.get(i, j), 0.0);
                assert_eq!(rep.corr.get(j, i), 0.0);
            }
        }
        assert_eq!(rep.stats.zero_diagonal, 2);
        assert!(rep.stats.within_student > 0.0);
        assert_eq!(rep.stats.within_extra, 0.0);
    }

    #[test]
    fn pgm_has_expected_header_and_size() {
        let rep = preconditioner_report(&Tensor::identity(3), 2).unwrap();
        let pgm = corr_to_pgm(&rep.corr);
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("3 3"));
        assert_eq!(lines.next(), Some("255"));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn split_out_of_bounds_rejected() {
        assert!(preconditioner_report(&Tensor::identity(3), 4).is_err());
    }
}
