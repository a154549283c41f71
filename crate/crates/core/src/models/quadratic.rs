use super::Model;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{dot, Matrix, SeededRng, Vector};

/// `l_i(w) = ½ (w − c_i)ᵀ A (w − c_i)` with one shared symmetric `A`.
///
/// Every example has the constant Hessian `A`, which makes this the
/// reference problem for curvature estimators and Newton-type steps.
#[derive(Clone, Debug)]
pub struct QuadraticModel {
    a: Matrix,
    centers: Vec<Vector>,
}

impl QuadraticModel {
    pub fn new(a: Matrix, centers: Vec<Vector>) -> Result<Self> {
        if !a.is_symmetric(1e-12) {
            return Err(Error::InvalidInput("quadratic form must be symmetric".into()));
        }
        if centers.is_empty() {
            return Err(Error::InvalidInput("at least one center required".into()));
        }
        for c in &centers {
            check_dim(a.rows(), c.len())?;
        }
        Ok(QuadraticModel { a, centers })
    }

    /// Single example centered at the origin.
    pub fn centered(a: Matrix) -> Result<Self> {
        let d = a.rows();
        Self::new(a, vec![Vector::zeros(d)])
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    fn offset(&self, w: &[f64], i: usize) -> Vector {
        Vector::from(w.to_vec()).sub(&self.centers[i])
    }
}

impl Model for QuadraticModel {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn len(&self) -> usize {
        self.centers.len()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn loss_i(&self, w: &[f64], i: usize) -> f64 {
        let r = self.offset(w, i);
        0.5 * dot(&r, &self.a.matvec(&r).expect("dims checked"))
    }

    fn grad_i(&self, w: &[f64], i: usize) -> Vector {
        self.a.matvec(&self.offset(w, i)).expect("dims checked")
    }

    fn hess_i(&self, _w: &[f64], _i: usize) -> Option<Matrix> {
        Some(self.a.clone())
    }

    fn hvp(&self, w: &[f64], z: &[f64], batch: &[usize]) -> Result<Vector> {
        self.check_batch(w, batch)?;
        self.a.matvec(z)
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

    fn predict_proba_i(&self, _w: &[f64], _i: usize) -> Vector {
        vec![0.5, 0.5].into()
    }

    fn init_params(&self, _rng: &mut SeededRng) -> Vector {
        Vector::zeros(self.dim())
    }

    fn is_convex(&self) -> bool {
        true
    }
}
