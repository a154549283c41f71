//! Curvature estimates used to precondition selection features: Hutchinson
//! diagonal estimation, bias-corrected exponential moving averages, and the
//! per-example feature vectors handed to the coreset selector.

use crate::coreset::{FeatureMode, SelectionFeatures};
use crate::error::{check_dim, Error, Result};
use crate::models::{weighted_hessian, Model};
use crate::numerics::{axpy, rademacher, Matrix, SeededRng, Vector};

/// Unbiased Hutchinson estimate of `diag(H)`: the mean of `z ⊙ Hz` over
/// `samples` Rademacher probes `z`.
pub fn hutchinson_diag<F>(hvp: F, dim: usize, samples: usize, rng: &mut SeededRng) -> Result<Vector>
where
    F: FnMut(&[f64]) -> Result<Vector>,
{
    if samples == 0 {
        return Err(Error::InvalidInput("hutchinson needs at least one sample".into()));
    }
    let probes = (0..samples).map(|_| rademacher(rng, dim)).collect::<Result<Vec<_>>>()?;
    hutchinson_diag_probes(hvp, dim, &probes)
}

/// Mean of `z ⊙ Hz` over the given probe vectors. Passing all `2^d` sign
/// vectors recovers `diag(H)` exactly.
pub fn hutchinson_diag_probes<F>(mut hvp: F, dim: usize, probes: &[Vector]) -> Result<Vector>
where
    F: FnMut(&[f64]) -> Result<Vector>,
{
    if probes.is_empty() {
        return Err(Error::InvalidInput("hutchinson needs at least one probe".into()));
    }
    let mut acc = Vector::zeros(dim);
    for z in probes {
        check_dim(dim, z.len())?;
        let hz = hvp(z)?;
        check_dim(dim, hz.len())?;
        for ((a, zi), hi) in acc.iter_mut().zip(z.iter()).zip(hz.iter()) {
            *a += zi * hi;
        }
    }
    acc.scale(1.0 / probes.len() as f64);
    Ok(acc)
}

/// Which Hessian a model-level Hutchinson estimate should probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianSpace {
    Parameters,
    /// Coordinates of the selection proxy (logits for the MLP).
    Proxy,
}

pub fn hutchinson_diag_model(
    model: &dyn Model,
    w: &[f64],
    batch: &[usize],
    samples: usize,
    space: HessianSpace,
    rng: &mut SeededRng,
) -> Result<Vector> {
    model.check_batch(w, batch)?;
    match space {
        HessianSpace::Parameters => {
            hutchinson_diag(|z| model.hvp(w, z, batch), model.dim(), samples, rng)
        }
        HessianSpace::Proxy => {
            hutchinson_diag(|z| model.proxy_hvp(w, z, batch), model.proxy_dim(), samples, rng)
        }
    }
}

/// Bias-corrected moving averages of a gradient stream and of a Hessian
/// diagonal stream.
///
/// The gradient average uses `beta1` for both decay and correction:
/// `ḡ_t = (1−β1)·Σ β1^{t−i} ĝ_i / (1 − β1^t)`. The curvature average is the
/// root of a corrected average of squares with `beta2`, so its entries are
/// never negative. Each stream keeps its own step counter.
#[derive(Clone, Debug)]
pub struct EmaState {
    beta1: f64,
    beta2: f64,
    grad_steps: u32,
    hess_steps: u32,
    grad_raw: Option<Vector>,
    hess_raw: Option<Vector>,
}

impl EmaState {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        // beta = 0 is allowed: the average then tracks the latest input
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidInput(format!("{name} = {b} not in [0, 1)")));
            }
        }
        Ok(EmaState {
            beta1,
            beta2,
            grad_steps: 0,
            hess_steps: 0,
            grad_raw: None,
            hess_raw: None,
        })
    }

    pub fn grad_steps(&self) -> u32 {
        self.grad_steps
    }

    pub fn hess_steps(&self) -> u32 {
        self.hess_steps
    }

    pub fn update_grad(&mut self, g_hat: &[f64]) -> Result<()> {
        let b = self.beta1;
        match &mut self.grad_raw {
            Some(m) => {
                check_dim(m.len(), g_hat.len())?;
                for (mi, gi) in m.iter_mut().zip(g_hat) {
                    *mi = b * *mi + (1.0 - b) * gi;
                }
            }
            None => {
                self.grad_raw = Some(g_hat.iter().map(|g| (1.0 - b) * g).collect());
            }
        }
        self.grad_steps += 1;
        Ok(())
    }

    pub fn update_hess(&mut self, diag_h: &[f64]) -> Result<()> {
        let b = self.beta2;
        match &mut self.hess_raw {
            Some(v) => {
                check_dim(v.len(), diag_h.len())?;
                for (vi, di) in v.iter_mut().zip(diag_h) {
                    *vi = b * *vi + (1.0 - b) * di * di;
                }
            }
            None => {
                self.hess_raw = Some(diag_h.iter().map(|d| (1.0 - b) * d * d).collect());
            }
        }
        self.hess_steps += 1;
        Ok(())
    }

    /// Bias-corrected gradient average; `None` before the first update.
    pub fn g_bar(&self) -> Option<Vector> {
        let corr = 1.0 - self.beta1.powi(self.grad_steps as i32);
        self.grad_raw
            .as_ref()
            .map(|m| m.iter().map(|v| v / corr).collect())
    }

    /// Root of the bias-corrected average of squared diagonals.
    pub fn h_bar(&self) -> Option<Vector> {
        let corr = 1.0 - self.beta2.powi(self.hess_steps as i32);
        self.hess_raw
            .as_ref()
            .map(|v| v.iter().map(|x| (x / corr).sqrt()).collect())
    }
}

/// Elementwise `g / (h + floor)^k`.
pub fn precondition(g: &[f64], h_bar: &[f64], k: f64, delta_floor: f64) -> Result<Vector> {
    check_dim(g.len(), h_bar.len())?;
    if !(delta_floor >= 0.0) {
        return Err(Error::InvalidInput("delta floor must be >= 0".into()));
    }
    Ok(g.iter()
        .zip(h_bar)
        .map(|(gi, hi)| gi / (hi + delta_floor).powf(k))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreconditionerConfig {
    /// Added to the curvature estimate before division.
    pub delta_floor: f64,
    /// Examples per Hutchinson batch.
    pub hessian_batch: usize,
    pub hutchinson_samples: usize,
    /// Exponent `k` in `g / h^k`.
    pub hessian_power: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for PreconditionerConfig {
    fn default() -> Self {
        PreconditionerConfig {
            delta_floor: 1e-12,
            hessian_batch: 64,
            hutchinson_samples: 1,
            hessian_power: 1.0,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl PreconditionerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_floor > 0.0) {
            return Err(Error::config("precond.delta_floor", "must be > 0"));
        }
        if self.hutchinson_samples == 0 {
            return Err(Error::config("precond.hutchinson_samples", "must be >= 1"));
        }
        if self.hessian_batch == 0 {
            return Err(Error::config("precond.hessian_batch", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.hessian_power) {
            return Err(Error::config("precond.hessian_power", "must lie in [0, 1]"));
        }
        for (f, b) in [("precond.beta1", self.beta1), ("precond.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(f, "must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Where the preconditioner in `Preconditioned` mode comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CurvatureSource {
    /// One moving-average Hutchinson diagonal (in proxy space) shared by
    /// all examples.
    #[default]
    SharedDiagonal,
    /// Each example's own analytic Hessian diagonal at `w`.
    PerExampleDiagonal,
    /// The inverse of the full-data analytic Hessian at `w`, shared by all
    /// examples. Ignores the Hessian power.
    FullHessian,
}

/// Curvature and smoothing state kept across selection rounds.
#[derive(Clone, Debug)]
pub struct SelectionCurvature {
    pub cfg: PreconditionerConfig,
    pub source: CurvatureSource,
    /// Shared proxy-space curvature average.
    pub ema: EmaState,
    /// Per-example moving averages of proxy gradients, one row per example.
    smoothed: Option<(Matrix, u32)>,
    /// Test hook: replace every curvature estimate by ones.
    pub unit_preconditioner: bool,
}

impl SelectionCurvature {
    pub fn new(cfg: PreconditionerConfig, source: CurvatureSource) -> Result<Self> {
        cfg.validate()?;
        Ok(SelectionCurvature {
            ema: EmaState::new(cfg.beta1, cfg.beta2)?,
            cfg,
            source,
            smoothed: None,
            unit_preconditioner: false,
        })
    }

    /// One refresh: folds the current proxy gradients into the per-example
    /// averages and, for the shared source, one Hutchinson estimate on a
    /// random batch of `hessian_batch` examples into the curvature average.
    pub fn refresh(&mut self, model: &dyn Model, w: &[f64], rng: &mut SeededRng) -> Result<()> {
        let n = model.len();
        let p = model.proxy_dim();
        let b = self.cfg.beta1;
        let (mat, steps) = self
            .smoothed
            .get_or_insert_with(|| (Matrix::zeros(n, p), 0));
        check_dim(n, mat.rows())?;
        for i in 0..n {
            let g = model.proxy_grad_i(w, i);
            for (mi, gi) in mat.row_mut(i).iter_mut().zip(g.iter()) {
                *mi = b * *mi + (1.0 - b) * gi;
            }
        }
        *steps += 1;

        if self.source == CurvatureSource::SharedDiagonal {
            let batch = rng.sample_indices(n, self.cfg.hessian_batch.min(n));
            let diag = hutchinson_diag_model(
                model,
                w,
                &batch,
                self.cfg.hutchinson_samples,
                HessianSpace::Proxy,
                rng,
            )?;
            self.ema.update_hess(&diag)?;
        }
        Ok(())
    }

    /// Bias-corrected smoothed proxy gradient of example `i`, if any.
    fn smoothed_grad(&self, i: usize) -> Option<Vector> {
        self.smoothed.as_ref().map(|(m, steps)| {
            let corr = 1.0 - self.cfg.beta1.powi(*steps as i32);
            m.row(i).iter().map(|v| v / corr).collect()
        })
    }

    /// The shared curvature vector used in `SharedDiagonal` mode.
    pub fn shared_h_bar(&self, proxy_dim: usize) -> Result<Vector> {
        if self.unit_preconditioner {
            return Ok(Vector::filled(proxy_dim, 1.0));
        }
        self.ema
            .h_bar()
            .ok_or_else(|| Error::State("curvature average not populated".into()))
    }
}

/// Per-example vectors for the examples in `indices`.
///
/// * `GradientOnly`: raw proxy gradients at `w`.
/// * `RawFeature`: the dataset rows themselves.
/// * `Preconditioned`: smoothed proxy gradients divided by the curvature
///   selected in `curv.source`.
pub fn selection_features(
    model: &dyn Model,
    features: &Matrix,
    w: &[f64],
    curv: Option<&SelectionCurvature>,
    mode: FeatureMode,
    indices: &[usize],
) -> Result<SelectionFeatures> {
    let rows: Vec<Vec<f64>> = match mode {
        FeatureMode::RawFeature => indices.iter().map(|&i| features.row(i).to_vec()).collect(),
        FeatureMode::GradientOnly => indices
            .iter()
            .map(|&i| model.proxy_grad_i(w, i).into_inner())
            .collect(),
        FeatureMode::Preconditioned => {
            let curv = curv.ok_or_else(|| {
                Error::State("preconditioned features need curvature state".into())
            })?;
            preconditioned_rows(model, w, curv, indices)?
        }
    };
    SelectionFeatures::new(indices.to_vec(), rows, mode)
}

fn preconditioned_rows(
    model: &dyn Model,
    w: &[f64],
    curv: &SelectionCurvature,
    indices: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let cfg = &curv.cfg;
    let grad = |i: usize| {
        curv.smoothed_grad(i)
            .unwrap_or_else(|| model.proxy_grad_i(w, i))
    };
    let p = model.proxy_dim();
    if curv.unit_preconditioner {
        // Identity curvature: the smoothed gradients pass through unscaled.
        return Ok(indices.iter().map(|&i| grad(i).into_inner()).collect());
    }
    match curv.source {
        CurvatureSource::SharedDiagonal => {
            let h = curv.shared_h_bar(p)?;
            indices
                .iter()
                .map(|&i| Ok(precondition(&grad(i), &h, cfg.hessian_power, cfg.delta_floor)?.into_inner()))
                .collect()
        }
        CurvatureSource::PerExampleDiagonal => {
            if p != model.dim() {
                return Err(Error::State(
                    "per-example diagonals need the proxy to be the full gradient".into(),
                ));
            }
            indices
                .iter()
                .map(|&i| {
                    let h = model.hess_diag_i(w, i).ok_or_else(|| {
                        Error::State("model has no analytic Hessian diagonal".into())
                    })?;
                    Ok(precondition(&grad(i), &h, cfg.hessian_power, cfg.delta_floor)?.into_inner())
                })
                .collect()
        }
        CurvatureSource::FullHessian => {
            if p != model.dim() {
                return Err(Error::State(
                    "full-Hessian preconditioning needs the proxy to be the full gradient".into(),
                ));
            }
            let all: Vec<(usize, f64)> = (0..model.len()).map(|i| (i, 1.0)).collect();
            let mut h = weighted_hessian(model, w, &all)?;
            let damping = 1e-8 * h.trace() / p as f64 + cfg.delta_floor;
            h.add_diag(damping);
            indices
                .iter()
                .map(|&i| {
                    h.cholesky_solve(&grad(i))
                        .map(Vector::into_inner)
                        .ok_or(Error::SingularHessian { damping })
                })
                .collect()
        }
    }
}

/// `‖Σ_i v_i − Σ_j γ_j v_j‖` for rows `v` of a feature matrix; the left side
/// of the facility-location error bound.
pub fn weighted_sum_error(rows: &Matrix, weights: &[(usize, f64)]) -> f64 {
    let mut diff = vec![0.0; rows.cols()];
    for r in rows.row_iter() {
        axpy(&mut diff, 1.0, r);
    }
    for &(j, gamma) in weights {
        axpy(&mut diff, -gamma, rows.row(j));
    }
    crate::numerics::norm(&diff)
}
