//! Per-example differentiable losses behind one interface.
//!
//! Every model is stateless given `(dataset, w)`. Per-example methods panic on
//! an out-of-range index just like slice indexing does; the batched
//! operations (`hvp`, `proxy_hvp`) validate their inputs and return errors.

mod logistic;
mod mlp;
mod quadratic;
mod ridge;

pub use logistic::LogisticModel;
pub use mlp::ToyMlp;
pub use quadratic::QuadraticModel;
pub use ridge::RidgeModel;

use crate::error::{check_dim, Error, Result};
use crate::numerics::{axpy, Matrix, SeededRng, Vector};

/// Relative step for central finite differences: sqrt of the f64 unit
/// round-off.
pub fn fd_step_scale() -> f64 {
    f64::EPSILON.sqrt()
}

pub trait Model: Sync {
    /// Parameter count.
    fn dim(&self) -> usize;

    /// Number of examples the model is bound to.
    fn len(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn loss_i(&self, w: &[f64], i: usize) -> f64;

    fn grad_i(&self, w: &[f64], i: usize) -> Vector;

    /// Full per-example Hessian, when the model has a closed form.
    fn hess_i(&self, _w: &[f64], _i: usize) -> Option<Matrix> {
        None
    }

    /// Diagonal of the per-example Hessian, when cheaply available.
    fn hess_diag_i(&self, w: &[f64], i: usize) -> Option<Vector> {
        self.hess_i(w, i).map(|h| h.diag())
    }

    /// Batch-averaged Hessian-vector product. The default takes central
    /// differences of the batch gradient.
    fn hvp(&self, w: &[f64], z: &[f64], batch: &[usize]) -> Result<Vector> {
        self.check_batch(w, batch)?;
        check_dim(self.dim(), z.len())?;
        Ok(fd_hvp(|p| self.batch_grad(p, batch), w, z))
    }

    /// Dimension of the low-cost gradient proxy used for selection.
    fn proxy_dim(&self) -> usize;

    /// Low-dimensional stand-in for the per-example gradient.
    fn proxy_grad_i(&self, w: &[f64], i: usize) -> Vector;

    /// Batch-averaged Hessian of the loss with respect to the proxy
    /// coordinates, applied to `z`.
    fn proxy_hvp(&self, w: &[f64], z: &[f64], batch: &[usize]) -> Result<Vector>;

    /// Class probabilities for example `i`.
    fn predict_proba_i(&self, w: &[f64], i: usize) -> Vector;

    fn init_params(&self, rng: &mut SeededRng) -> Vector;

    fn is_convex(&self) -> bool;

    fn check_batch(&self, w: &[f64], batch: &[usize]) -> Result<()> {
        check_dim(self.dim(), w.len())?;
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= self.len()) {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// Mean gradient over `batch` (left-to-right accumulation).
    fn batch_grad(&self, w: &[f64], batch: &[usize]) -> Vector {
        let mut acc = Vector::zeros(self.dim());
        for &i in batch {
            acc.axpy(1.0, &self.grad_i(w, i));
        }
        acc.scale(1.0 / batch.len() as f64);
        acc
    }

    fn predict_i(&self, w: &[f64], i: usize) -> usize {
        argmax(&self.predict_proba_i(w, i))
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = k;
        }
    }
    best
}

/// Mean loss over all examples.
pub fn mean_loss(model: &dyn Model, w: &[f64]) -> f64 {
    let n = model.len();
    (0..n).map(|i| model.loss_i(w, i)).sum::<f64>() / n as f64
}

/// `Σ γ_i g_i / Σ γ_i` over a weighted batch.
pub fn weighted_grad(model: &dyn Model, w: &[f64], batch: &[(usize, f64)]) -> Result<Vector> {
    let total = weight_total(batch)?;
    let mut acc = Vector::zeros(model.dim());
    for &(i, gamma) in batch {
        check_index(model, i)?;
        acc.axpy(gamma, &model.grad_i(w, i));
    }
    acc.scale(1.0 / total);
    Ok(acc)
}

/// Weighted-average loss `Σ γ_i l_i / Σ γ_i`.
pub fn weighted_loss(model: &dyn Model, w: &[f64], batch: &[(usize, f64)]) -> Result<f64> {
    let total = weight_total(batch)?;
    let mut acc = 0.0;
    for &(i, gamma) in batch {
        check_index(model, i)?;
        acc += gamma * model.loss_i(w, i);
    }
    Ok(acc / total)
}

/// Weighted-average Hessian. Requires a model with closed-form Hessians.
pub fn weighted_hessian(model: &dyn Model, w: &[f64], batch: &[(usize, f64)]) -> Result<Matrix> {
    let total = weight_total(batch)?;
    let d = model.dim();
    let mut acc = Matrix::zeros(d, d);
    for &(i, gamma) in batch {
        check_index(model, i)?;
        let h = model
            .hess_i(w, i)
            .ok_or_else(|| Error::State("model has no closed-form Hessian".into()))?;
        acc.add_scaled(gamma, &h)?;
    }
    acc.scale(1.0 / total);
    Ok(acc)
}

/// Mean gradient over the whole dataset, expressed as a unit-weight sum so
/// that it agrees bit-for-bit with [`weighted_grad`] on a full unit coreset.
pub fn full_grad(model: &dyn Model, w: &[f64]) -> Vector {
    let batch: Vec<(usize, f64)> = (0..model.len()).map(|i| (i, 1.0)).collect();
    weighted_grad(model, w, &batch).expect("full batch is valid")
}

fn weight_total(batch: &[(usize, f64)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let total: f64 = batch.iter().map(|b| b.1).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("batch weights must sum to > 0".into()));
    }
    Ok(total)
}

fn check_index(model: &dyn Model, i: usize) -> Result<()> {
    if i < model.len() {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange {
            index: i,
            len: model.len(),
        })
    }
}

/// `(g(w + δz) − g(w − δz)) / 2δ` with `δ = √ε·(1+‖w‖)/(1+‖z‖)`.
pub fn fd_hvp<F>(grad: F, w: &[f64], z: &[f64]) -> Vector
where
    F: Fn(&[f64]) -> Vector,
{
    let wn = crate::numerics::norm(w);
    let zn = crate::numerics::norm(z);
    let delta = fd_step_scale() * (1.0 + wn) / (1.0 + zn);
    let mut plus = w.to_vec();
    axpy(&mut plus, delta, z);
    let mut minus = w.to_vec();
    axpy(&mut minus, -delta, z);
    let gp = grad(&plus);
    let gm = grad(&minus);
    gp.iter()
        .zip(gm.iter())
        .map(|(a, b)| (a - b) / (2.0 * delta))
        .collect()
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Softmax with max-shift.
pub(crate) fn softmax(z: &[f64]) -> Vector {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Central finite-difference gradient of a scalar function.
    pub fn fd_grad<F: Fn(&[f64]) -> f64>(f: F, w: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..w.len())
            .map(|k| {
                let mut p = w.to_vec();
                let mut m = w.to_vec();
                p[k] += h;
                m[k] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    pub fn assert_grad_matches_fd(model: &dyn Model, w: &[f64], i: usize) {
        let g = model.grad_i(w, i);
        let fd = fd_grad(|p| model.loss_i(p, i), w);
        let err = crate::numerics::distance(&g, &fd);
        assert!(
            err <= 1e-6 * (1.0 + g.norm()),
            "gradient mismatch {err:e} at example {i}"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_scalar_helpers() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
    }
}
