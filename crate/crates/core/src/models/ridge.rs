use std::sync::Arc;

use super::Model;
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{dot, Matrix, SeededRng, Vector};

/// Ridge regression `½(xᵀw − y)² + λ/2·‖w‖²`, no bias term.
#[derive(Clone, Debug)]
pub struct RidgeModel {
    data: Arc<Dataset>,
    targets: Vec<f64>,
    lambda: f64,
}

impl RidgeModel {
    /// Regression on explicit real-valued targets.
    pub fn with_targets(data: Arc<Dataset>, targets: Vec<f64>, lambda: f64) -> Result<Self> {
        check_dim(data.len(), targets.len())?;
        if !(lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("lambda {lambda} must be >= 0")));
        }
        Ok(RidgeModel {
            data,
            targets,
            lambda,
        })
    }

    /// Regression onto ±1 class indicators of a binary dataset.
    pub fn on_labels(data: Arc<Dataset>, lambda: f64) -> Result<Self> {
        let targets = data
            .labels()
            .iter()
            .map(|&c| if c == 1 { 1.0 } else { -1.0 })
            .collect();
        Self::with_targets(data, targets, lambda)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn residual(&self, w: &[f64], i: usize) -> f64 {
        dot(self.data.x(i), w) - self.targets[i]
    }
}

impl Model for RidgeModel {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn len(&self) -> usize {
        self.data.len()
    }

    fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    fn loss_i(&self, w: &[f64], i: usize) -> f64 {
        let r = self.residual(w, i);
        0.5 * r * r + 0.5 * self.lambda * dot(w, w)
    }

    fn grad_i(&self, w: &[f64], i: usize) -> Vector {
        let r = self.residual(w, i);
        self.data
            .x(i)
            .iter()
            .zip(w)
            .map(|(x, wk)| r * x + self.lambda * wk)
            .collect()
    }

    fn hess_i(&self, _w: &[f64], i: usize) -> Option<Matrix> {
        let x = self.data.x(i);
        let mut h = Matrix::identity(x.len());
        h.scale(self.lambda);
        h.add_outer(1.0, x);
        Some(h)
    }

    fn hvp(&self, w: &[f64], z: &[f64], batch: &[usize]) -> Result<Vector> {
        self.check_batch(w, batch)?;
        check_dim(self.dim(), z.len())?;
        let mut out = Vector::zeros(self.dim());
        for &i in batch {
            let x = self.data.x(i);
            out.axpy(dot(x, z), x);
        }
        out.scale(1.0 / batch.len() as f64);
        out.axpy(self.lambda, z);
        Ok(out)
    }

    fn proxy_dim(&self) -> usize {
        self.dim()
    }

    fn proxy_grad_i(&self, w: &[f64], i: usize) -> Vector {
        self.grad_i(w, i)
    }

    fn proxy_hvp(&self, w: &[f64], z: &[f64], batch: &[usize]) -> Result<Vector> {
        self.hvp(w, z, batch)
    }

    /// Two-class reading of the sign of the prediction.
    fn predict_proba_i(&self, w: &[f64], i: usize) -> Vector {
        let pos = f64::from(dot(self.data.x(i), w) > 0.0);
        let mut p = vec![0.0; self.num_classes().max(2)];
        p[0] = 1.0 - pos;
        p[1] = pos;
        p.into()
    }

    fn init_params(&self, _rng: &mut SeededRng) -> Vector {
        Vector::zeros(self.dim())
    }

    fn is_convex(&self) -> bool {
        true
    }
}
