//! Symmetric eigendecomposition (cyclic Jacobi) and inverse p-th roots.
//!
//! Jacobi is deterministic and accurate at the dimensions this crate
//! handles (a few hundred at most), which is what the cached Shampoo
//! preconditioner roots need.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix: returns (eigenvalues,
/// eigenvectors as columns), unsorted. `a` must be symmetric within 1e-9.
pub fn eigh(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape("eigh", a.shape(), (n, n)));
    }
    let asym = max_asymmetry(a);
    if asym > 1e-9 {
        return Err(Error::Contract(format!(
            "eigh requires a symmetric matrix; max |a_ij - a_ji| = {asym:e}"
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), Tensor::zeros(0, 0)));
    }

    let mut m = a.detached();
    let mut v = Tensor::identity(n);
    let scale = a.frobenius_norm().max(1.0);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m.get(p, q) * m.get(p, q))
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            let eigs = (0..n).map(|i| m.get(i, i)).collect();
            return Ok((eigs, v));
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                // rotation annihilating m[p][q] (Golub & Van Loan 8.4)
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(Error::Numerical(format!(
        "Jacobi eigendecomposition did not converge in {MAX_SWEEPS} sweeps (n = {n})"
    )))
}

fn max_asymmetry(a: &Tensor) -> f64 {
    let n = a.rows();
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in (r + 1)..n {
            worst = worst.max((a.get(r, c) - a.get(c, r)).abs());
        }
    }
    worst
}

/// (a + epsilon I)^(-1/p) for symmetric positive semidefinite `a`, via
/// Q diag((lambda + epsilon)^(-1/p)) Q^T. Tiny negative eigenvalues from
/// roundoff are clamped to zero before the shift; the result is
/// re-symmetrized.
pub fn inv_pth_root(a: &Tensor, p: u32, epsilon: f64) -> Result<Tensor> {
    if !(p == 2 || p == 4) {
        return Err(Error::Contract(format!("inv_pth_root supports p in {{2, 4}}, got {p}")));
    }
    if epsilon < 0.0 {
        return Err(Error::Contract("inv_pth_root epsilon must be nonnegative".into()));
    }
    let (eigs, q) = eigh(a)?;
    let n = a.rows();
    let mut d = Tensor::zeros(n, n);
    for (i, &lambda) in eigs.iter().enumerate() {
        let shifted = lambda.max(0.0) + epsilon;
        if shifted <= 0.0 {
            return Err(Error::Numerical(format!(
                "inv_pth_root: eigenvalue {lambda:e} + epsilon {epsilon:e} is not positive"
            )));
        }
        d.set(i, i, shifted.powf(-1.0 / p as f64));
    }
    let x = q.matmul(&d)?.matmul(&q.transposed())?;
    // kill asymmetry drift from the two products
    let mut out = x.clone();
    for r in 0..n {
        for c in 0..n {
            out.set(r, c, 0.5 * (x.get(r, c) + x.get(c, r)));
        }
    }
    Ok(out)
}

/// Frobenius norm of X^p (a + eps I) - I; the residual the root must keep
/// below 1e-8 * n for condition numbers up to 1e6.
pub fn inv_root_residual(x: &Tensor, a: &Tensor, p: u32, epsilon: f64) -> Result<f64> {
    let n = a.rows();
    let mut shifted = a.detached();
    for i in 0..n {
        shifted.set(i, i, shifted.get(i, i) + epsilon);
    }
    let mut xp = x.detached();
    for _ in 1..p {
        xp = xp.matmul(x)?;
    }
    let prod = xp.matmul(&shifted)?;
    let mut residual = 0.0;
    for r in 0..n {
        for c in 0..n {
            let target = if r == c { 1.0 } else { 0.0 };
            let d = prod.get(r, c) - target;
            residual += d * d;
        }
    }
    Ok(residual.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Rng;

    /// Random SPD matrix with the given condition number.
    pub(crate) fn random_spd(n: usize, cond: f64, rng: &mut Rng) -> Tensor {
        // Q D Q^T with Q from QR-free random rotations: use eigh of a random
        // symmetric matrix to get an orthogonal basis.
        let raw = Tensor::randn(n, n, 1.0, rng);
        let sym = raw.add(&raw.transposed()).unwrap().scaled(0.5);
        let (_, q) = eigh(&sym).unwrap();
        let mut d = Tensor::zeros(n, n);
        for i in 0..n {
            // log-uniform spectrum in [1/cond, 1]
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            d.set(i, i, cond.powf(-t));
        }
        let m = q.matmul(&d).unwrap().matmul(&q.transposed()).unwrap();
        let mut out = m.clone();
        for r in 0..n {
            for c in 0..n {
                out.set(r, c, 0.5 * (m.get(r, c) + m.get(c, r)));
            }
        }
        out
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let x = inv_pth_root(&Tensor::identity(4), 4, 0.0).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((x.get(r, c) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn diagonal_case_is_forced() {
        let a = Tensor::from_rows(&[[16.0, 0.0], [0.0, 81.0]]).unwrap();
        let x = inv_pth_root(&a, 4, 0.0).unwrap();
        assert!((x.get(0, 0) - 0.5).abs() < 1e-14);
        assert!((x.get(1, 1) - 1.0 / 3.0).abs() < 1e-14);
        assert!(x.get(0, 1).abs() < 1e-14);
    }

    #[test]
    fn residual_bound_on_random_spd() {
        let mut rng = Rng::new(77);
        for &(n, cond) in &[(5usize, 10.0), (20, 1e4), (20, 1e6)] {
            let a = random_spd(n, cond, &mut rng);
            for p in [2u32, 4] {
                let x = inv_pth_root(&a, p, 1e-9).unwrap();
                let res = inv_root_residual(&x, &a, p, 1e-9).unwrap();
                assert!(res <= 1e-8 * n as f64, "n={n} cond={cond} p={p}: residual {res:e}");
            }
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        let a = Tensor::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        let err = inv_pth_root(&a, 4, 0.0).unwrap_err().to_string();
        assert!(err.contains("symmetric"), "{err}");
    }

    #[test]
    fn singular_matrix_with_zero_epsilon_rejected() {
        let a = Tensor::zeros(2, 2);
        assert!(inv_pth_root(&a, 4, 0.0).is_err());
        assert!(inv_pth_root(&a, 4, 1e-6).is_ok());
    }

    #[test]
    fn eigh_reconstructs_input() {
        let mut rng = Rng::new(99);
        let a = random_spd(8, 100.0, &mut rng);
        let (eigs, q) = eigh(&a).unwrap();
        let mut d = Tensor::zeros(8, 8);
        for (i, &e) in eigs.iter().enumerate() {
            d.set(i, i, e);
        }
        let back = q.matmul(&d).unwrap().matmul(&q.transposed()).unwrap();
        let diff = back.sub(&a).unwrap();
        assert!(diff.max_abs() < 1e-12, "{}", diff.max_abs());
    }
}
