use std::sync::Arc;

use super::{sigmoid, softplus, Model};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{Matrix, SeededRng, Vector};

/// L2-regularized binary logistic regression.
///
/// Parameters are `[w_1 .. w_d, b]`: the bias is the last coordinate and is
/// not regularized. Class 1 is the positive label. The per-example loss is
/// `softplus(−s·(wᵀx + b)) + μ/2·‖w‖²` with `s = ±1`.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    data: Arc<Dataset>,
    mu: f64,
}

impl LogisticModel {
    pub fn new(data: Arc<Dataset>, mu: f64) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::InvalidInput(format!("regularization {mu} must be >= 0")));
        }
        if data.num_classes() != 2 {
            return Err(Error::InvalidInput(format!(
                "logistic regression needs 2 classes, dataset has {}",
                data.num_classes()
            )));
        }
        Ok(LogisticModel { data, mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.data
    }

    fn margin(&self, w: &[f64], i: usize) -> f64 {
        let x = self.data.x(i);
        let d = x.len();
        crate::numerics::dot(&w[..d], x) + w[d]
    }

    fn sign(&self, i: usize) -> f64 {
        if self.data.label(i) == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// Predicted probability of class 1.
    pub fn prob(&self, w: &[f64], i: usize) -> f64 {
        sigmoid(self.margin(w, i))
    }

    /// Checked analytic per-example Hessian
    /// `σ̂(1−σ̂)·[x xᵀ, x; xᵀ, 1] + μ·diag(I, 0)`.
    pub fn hessian(&self, w: &[f64], i: usize) -> Result<Matrix> {
        check_dim(self.dim(), w.len())?;
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(self.hess_unchecked(w, i))
    }

    fn augmented(&self, i: usize) -> Vec<f64> {
        let mut u = self.data.x(i).to_vec();
        u.push(1.0);
        u
    }

    fn hess_unchecked(&self, w: &[f64], i: usize) -> Matrix {
        let p = self.prob(w, i);
        let s = p * (1.0 - p);
        let u = self.augmented(i);
        let mut h = Matrix::zeros(u.len(), u.len());
        h.add_outer(s, &u);
        for k in 0..u.len() - 1 {
            h[(k, k)] += self.mu;
        }
        h
    }

    /// Upper bound on the largest eigenvalue of any per-example Hessian,
    /// `max_i ¼(‖x_i‖² + 1) + μ`.
    pub fn smoothness_bound(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let x = self.data.x(i);
                0.25 * (crate::numerics::dot(x, x) + 1.0)
            })
            .fold(0.0, f64::max)
            + self.mu
    }
}

impl Model for LogisticModel {
    fn dim(&self) -> usize {
        self.data.dim() + 1
    }

    fn len(&self) -> usize {
        self.data.len()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn loss_i(&self, w: &[f64], i: usize) -> f64 {
        let d = self.data.dim();
        let reg = 0.5 * self.mu * crate::numerics::dot(&w[..d], &w[..d]);
        softplus(-self.sign(i) * self.margin(w, i)) + reg
    }

    fn grad_i(&self, w: &[f64], i: usize) -> Vector {
        let d = self.data.dim();
        // dl/dm = σ(m) − y
        let r = self.prob(w, i) - f64::from(self.data.label(i) == 1);
        let x = self.data.x(i);
        let mut g: Vec<f64> = x.iter().zip(&w[..d]).map(|(v, wk)| r * v + self.mu * wk).collect();
        g.push(r);
        g.into()
    }

    fn hess_i(&self, w: &[f64], i: usize) -> Option<Matrix> {
        Some(self.hess_unchecked(w, i))
    }

    fn hess_diag_i(&self, w: &[f64], i: usize) -> Option<Vector> {
        let p = self.prob(w, i);
        let s = p * (1.0 - p);
        let mut v: Vec<f64> = self.data.x(i).iter().map(|v| s * v * v + self.mu).collect();
        v.push(s);
        Some(v.into())
    }

    fn hvp(&self, w: &[f64], z: &[f64], batch: &[usize]) -> Result<Vector> {
        self.check_batch(w, batch)?;
        check_dim(self.dim(), z.len())?;
        let d = self.data.dim();
        let mut out = Vector::zeros(d + 1);
        for &i in batch {
            let p = self.prob(w, i);
            let s = p * (1.0 - p);
            let x = self.data.x(i);
            let uz = crate::numerics::dot(x, &z[..d]) + z[d];
            crate::numerics::axpy(&mut out[..d], s * uz, x);
            out[d] += s * uz;
        }
        out.scale(1.0 / batch.len() as f64);
        for k in 0..d {
            out[k] += self.mu * z[k];
        }
        Ok(out)
    }

    fn proxy_dim(&self) -> usize {
        self.dim()
    }

    /// The full gradient; it is already low-dimensional.
    fn proxy_grad_i(&self, w: &[f64], i: usize) -> Vector {
        self.grad_i(w, i)
    }

    fn proxy_hvp(&self, w: &[f64], z: &[f64], batch: &[usize]) -> Result<Vector> {
        self.hvp(w, z, batch)
    }

    fn predict_proba_i(&self, w: &[f64], i: usize) -> Vector {
        let p = self.prob(w, i);
        vec![1.0 - p, p].into()
    }

    fn init_params(&self, _rng: &mut SeededRng) -> Vector {
        Vector::zeros(self.dim())
    }

    fn is_convex(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::{assert_grad_matches_fd, fd_grad};
    use super::*;

    fn one_point(x: &[f64], label: usize, mu: f64) -> LogisticModel {
        let ds = Dataset::new(
            "t",
            Matrix::from_rows(&[x.to_vec(), x.iter().map(|v| -v).collect()]).unwrap(),
            vec![label, 1 - label],
            2,
        )
        .unwrap();
        LogisticModel::new(Arc::new(ds), mu).unwrap()
    }

    fn random_model(n: usize, d: usize, mu: f64, seed: u64) -> LogisticModel {
        let mut rng = SeededRng::new(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.normal()).collect())
            .collect();
        let labels = (0..n).map(|i| i % 2).collect();
        let ds = Dataset::new("r", Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap();
        LogisticModel::new(Arc::new(ds), mu).unwrap()
    }

    #[test]
    fn hessian_at_origin() {
        let m = one_point(&[1.0], 1, 0.0);
        let h = m.hessian(&[0.0, 0.0], 0).unwrap();
        assert_eq!(h.as_slice(), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn hessian_with_zero_features() {
        let m = one_point(&[0.0], 0, 0.0);
        let w = [3.0, -0.7];
        let p = m.prob(&w, 0);
        let h = m.hessian(&w, 0).unwrap();
        assert_eq!(h.as_slice(), &[0.0, 0.0, 0.0, p * (1.0 - p)]);
    }

    #[test]
    fn hessian_rejects_bad_index() {
        let m = one_point(&[1.0], 1, 0.0);
        assert!(matches!(
            m.hessian(&[0.0, 0.0], 5),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn hessian_matches_fd_of_gradient() {
        let m = random_model(8, 4, 0.1, 11);
        let mut rng = SeededRng::new(5);
        for i in 0..8 {
            let w: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let h = m.hessian(&w, i).unwrap();
            assert!(h.is_symmetric(1e-10));
            for col in 0..5 {
                let fd = fd_grad(|p| m.grad_i(p, i)[col], &w);
                for row in 0..5 {
                    assert!((h[(row, col)] - fd[row]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_fd() {
        let m = random_model(20, 3, 0.05, 2);
        let mut rng = SeededRng::new(9);
        for i in 0..20 {
            let w: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            assert_grad_matches_fd(&m, &w, i);
        }
    }

    #[test]
    fn analytic_hvp_matches_fd_hvp() {
        let m = random_model(30, 5, 0.1, 4);
        let mut rng = SeededRng::new(1);
        let w: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let z: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let batch: Vec<usize> = (0..30).collect();
        let analytic = m.hvp(&w, &z, &batch).unwrap();
        let fd = super::super::fd_hvp(|p| m.batch_grad(p, &batch), &w, &z);
        let rel = crate::numerics::distance(&analytic, &fd) / analytic.norm();
        assert!(rel < 1e-4, "relative error {rel:e}");
        let zero = m.hvp(&w, &[0.0; 6], &batch).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hessian_diagonal_floor() {
        let m = random_model(10, 3, 0.2, 8);
        let w = [5.0, -4.0, 3.0, 1.0];
        for i in 0..10 {
            let diag = m.hess_diag_i(&w, i).unwrap();
            assert!(diag[..3].iter().all(|&v| v >= 0.2));
        }
    }
}
