//! Shampoo: Kronecker-factored second-order preconditioning.
//!
//! For a parameter matrix W with gradient G, the state accumulates the two
//! Gram factors sum G G^T (left) and sum G^T G (right); the update is
//! W <- W - lr * L G R with L = (left + eps I)^(-1/4) and
//! R = (right + eps I)^(-1/4). Applying the factors on either side of G is
//! the matrix form of preconditioning the row-major flattened gradient
//! with the Kronecker product L (x) R.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

use super::inv_root::inv_pth_root;

#[derive(Clone, Debug)]
pub struct ShampooState {
    left: Tensor,
    right: Tensor,
    left_root: Option<Tensor>,
    right_root: Option<Tensor>,
    step: u64,
    update_interval: u64,
    epsilon: f64,
    roots_stale: bool,
}

impl ShampooState {
    pub fn new(rows: usize, cols: usize, update_interval: u64, epsilon: f64) -> Result<Self> {
        if update_interval == 0 {
            return Err(Error::Config("shampoo update_interval must be >= 1".into()));
        }
        if epsilon < 0.0 {
            return Err(Error::Config("shampoo epsilon must be nonnegative".into()));
        }
        Ok(ShampooState {
            left: Tensor::zeros(rows, rows),
            right: Tensor::zeros(cols, cols),
            left_root: None,
            right_root: None,
            step: 0,
            update_interval,
            epsilon,
            roots_stale: true,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn left_acc(&self) -> &Tensor {
        &self.left
    }

    pub fn right_acc(&self) -> &Tensor {
        &self.right
    }

    /// Folds one gradient into both Gram accumulators and re-symmetrizes
    /// them to kill roundoff drift. Marks the cached roots for refresh
    /// every `update_interval` accumulations, starting with the first.
    pub fn accumulate(&mut self, grad: &Tensor) -> Result<()> {
        if grad.shape() != (self.left.rows(), self.right.rows()) {
            return Err(Error::shape(
                "shampoo_accumulate",
                grad.shape(),
                (self.left.rows(), self.right.rows()),
            ));
        }
        self.left.add_assign(&grad.matmul(&grad.transposed())?)?;
        self.right.add_assign(&grad.transposed().matmul(grad)?)?;
        symmetrize(&mut self.left);
        symmetrize(&mut self.right);
        if self.step % self.update_interval == 0 {
            self.roots_stale = true;
        }
        self.step += 1;
        Ok(())
    }

    fn refresh_roots(&mut self) -> Result<()> {
        self.left_root = Some(inv_pth_root(&self.left, 4, self.epsilon)?);
        self.right_root = Some(inv_pth_root(&self.right, 4, self.epsilon)?);
        self.roots_stale = false;
        Ok(())
    }

    /// One preconditioned update: W - lr * L G R with the cached roots,
    /// refreshed on the configured interval. Call [`accumulate`] first.
    ///
    /// [`accumulate`]: ShampooState::accumulate
    pub fn step_param(&mut self, param: &Tensor, grad: &Tensor, lr: f64) -> Result<Tensor> {
        if param.shape() != grad.shape() {
            return Err(Error::shape("shampoo_step", param.shape(), grad.shape()));
        }
        if self.step == 0 {
            return Err(Error::Contract(
                "shampoo_step called before any accumulate".into(),
            ));
        }
        if self.roots_stale || self.left_root.is_none() {
            self.refresh_roots()?;
        }
        let left_root = self.left_root.as_ref().unwrap();
        let right_root = self.right_root.as_ref().unwrap();
        let update = left_root.matmul(grad)?.matmul(right_root)?;
        param.sub(&update.scaled(lr))
    }
}

fn symmetrize(a: &mut Tensor) {
    let n = a.rows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (a.get(r, c) + a.get(c, r));
            a.set(r, c, v);
            a.set(c, r, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Rng;

    #[test]
    fn accumulate_hand_case() {
        let mut s = ShampooState::new(1, 2, 1, 1e-6).unwrap();
        let g = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        s.accumulate(&g).unwrap();
        assert_eq!(s.left_acc().data(), &[1.0]);
        assert_eq!(s.right_acc().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn accumulation_is_linear() {
        let mut s = ShampooState::new(2, 3, 1, 1e-6).unwrap();
        let g = Tensor::from_rows(&[[1.0, 2.0, 0.5], [-1.0, 0.0, 3.0]]).unwrap();
        s.accumulate(&g).unwrap();
        let left_once = s.left_acc().detached();
        let right_once = s.right_acc().detached();
        s.accumulate(&g).unwrap();
        assert_eq!(s.left_acc().data(), left_once.scaled(2.0).data());
        assert_eq!(s.right_acc().data(), right_once.scaled(2.0).data());
    }

    #[test]
    fn accumulators_stay_symmetric() {
        let mut rng = Rng::new(31);
        let mut s = ShampooState::new(4, 6, 7, 1e-6).unwrap();
        for _ in 0..1000 {
            s.accumulate(&Tensor::randn(4, 6, 1.0, &mut rng)).unwrap();
        }
        for acc in [s.left_acc(), s.right_acc()] {
            let n = acc.rows();
            for r in 0..n {
                for c in 0..n {
                    assert_eq!(acc.get(r, c), acc.get(c, r));
                }
            }
        }
    }

    #[test]
    fn scalar_step_is_signed_lr_in_the_small_epsilon_limit() {
        for &g in &[3.0, -0.25] {
            let mut s = ShampooState::new(1, 1, 1, 1e-30).unwrap();
            let grad = Tensor::from_rows(&[[g]]).unwrap();
            s.accumulate(&grad).unwrap();
            let w = Tensor::from_rows(&[[1.0]]).unwrap();
            let out = s.step_param(&w, &grad, 0.1).unwrap();
            // (g^2)^(-1/4) g (g^2)^(-1/4) = sign(g)
            assert!(
                (out.data()[0] - (1.0 - 0.1 * g.signum())).abs() < 1e-9,
                "{}",
                out.data()[0]
            );
        }
    }

    #[test]
    fn zero_grad_after_accumulation_leaves_param_unchanged() {
        let mut s = ShampooState::new(2, 2, 1, 1e-6).unwrap();
        let mut rng = Rng::new(5);
        s.accumulate(&Tensor::randn(2, 2, 1.0, &mut rng)).unwrap();
        let w = Tensor::randn(2, 2, 1.0, &mut rng);
        let zero = Tensor::zeros(2, 2);
        s.accumulate(&zero).unwrap();
        let out = s.step_param(&w, &zero, 0.5).unwrap();
        assert_eq!(out.data(), w.data());
    }

    #[test]
    fn step_before_accumulate_is_a_contract_error() {
        let mut s = ShampooState::new(1, 1, 1, 1e-6).unwrap();
        let w = Tensor::zeros(1, 1);
        assert!(s.step_param(&w, &w, 0.1).is_err());
    }

    /// Kronecker product with row-major pairing: out[(i,k),(j,l)] = a[i,j] b[k,l].
    fn kron(a: &Tensor, b: &Tensor) -> Tensor {
        let (am, an) = a.shape();
        let (bm, bn) = b.shape();
        let mut out = Tensor::zeros(am * bm, an * bn);
        for i in 0..am {
            for j in 0..an {
                for k in 0..bm {
                    for l in 0..bn {
                        out.set(i * bm + k, j * bn + l, a.get(i, j) * b.get(k, l));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn step_equals_materialized_kronecker_update() {
        // vec(L G R) = (L (x) R) vec(G) for row-major vec and symmetric R.
        let mut rng = Rng::new(123);
        for &(m, n) in &[(2usize, 2usize), (2, 3), (3, 3), (4, 2)] {
            let mut s = ShampooState::new(m, n, 1, 1e-4).unwrap();
            for _ in 0..3 {
                s.accumulate(&Tensor::randn(m, n, 1.0, &mut rng)).unwrap();
            }
            let g = Tensor::randn(m, n, 1.0, &mut rng);
            s.accumulate(&g).unwrap();
            let w = Tensor::randn(m, n, 1.0, &mut rng);
            let lr = 0.3;
            let stepped = s.step_param(&w, &g, lr).unwrap();

            let l = inv_pth_root(s.left_acc(), 4, 1e-4).unwrap();
            let r = inv_pth_root(s.right_acc(), 4, 1e-4).unwrap();
            let big = kron(&l, &r);
            let vec_g = Tensor::new(m * n, 1, g.data().to_vec()).unwrap();
            let precond = big.matmul(&vec_g).unwrap();
            for i in 0..m * n {
                let expect = w.data()[i] - lr * precond.data()[i];
                assert!(
                    (stepped.data()[i] - expect).abs() < 1e-8,
                    "{m}x{n} coord {i}: {} vs {}",
                    stepped.data()[i],
                    expect
                );
            }
        }
    }

    #[test]
    fn large_epsilon_limit_approaches_scaled_first_order() {
        // With eps dominating the accumulators, L and R tend to eps^(-1/4) I,
        // so the update direction tends to -lr * G / sqrt(eps).
        let mut rng = Rng::new(9);
        let eps = 1e8;
        let mut s = ShampooState::new(3, 3, 1, eps).unwrap();
        let g = Tensor::randn(3, 3, 1.0, &mut rng);
        s.accumulate(&g).unwrap();
        let w = Tensor::zeros(3, 3);
        let out = s.step_param(&w, &g, 1.0).unwrap();
        let expected = g.scaled(-1.0 / eps.sqrt());
        for i in 0..9 {
            let rel = (out.data()[i] - expected.data()[i]).abs() / expected.data()[i].abs().max(1e-12);
            assert!(rel < 1e-6, "coord {i}: {} vs {}", out.data()[i], expected.data()[i]);
        }
    }

    #[test]
    fn roots_refresh_on_the_configured_interval() {
        // With interval 5, roots computed at accumulation 1 must persist
        // through accumulation 5 and refresh at 6.
        let mut rng = Rng::new(55);
        let mut s = ShampooState::new(2, 2, 5, 1e-6).unwrap();
        let w = Tensor::zeros(2, 2);

        let g0 = Tensor::randn(2, 2, 1.0, &mut rng);
        s.accumulate(&g0).unwrap();
        s.step_param(&w, &g0, 0.1).unwrap();
        let frozen_left = s.left_root.clone().unwrap();

        for i in 0..4 {
            let g = Tensor::randn(2, 2, 1.0, &mut rng);
            s.accumulate(&g).unwrap();
            s.step_param(&w, &g, 0.1).unwrap();
            assert_eq!(
                s.left_root.as_ref().unwrap().data(),
                frozen_left.data(),
                "root changed early at accumulation {}",
                i + 2
            );
        }
        let g = Tensor::randn(2, 2, 1.0, &mut rng);
        s.accumulate(&g).unwrap();
        s.step_param(&w, &g, 0.1).unwrap();
        assert_ne!(s.left_root.as_ref().unwrap().data(), frozen_left.data());
    }
}
