//! Update rules on weighted batches: SGD with momentum, damped Newton, and a
//! diagonal Newton method driven by moving averages of the gradient and of a
//! Hutchinson Hessian diagonal. Plus learning-rate schedules.

use crate::curvature::{hutchinson_diag, precondition, EmaState};
use crate::error::{check_dim, Error, Result};
use crate::models::{weighted_grad, weighted_hessian, Model};
use crate::numerics::{SeededRng, Vector};

/// Learning rate as a function of the epoch.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// `base · rate^epoch`.
    ExpDecay { base: f64, rate: f64 },
    /// `base · factor^(number of milestones ≤ epoch)`.
    StepDecay {
        base: f64,
        milestones: Vec<usize>,
        factor: f64,
    },
    /// Linear ramp over the first `epochs` epochs on top of `inner`. The
    /// ramp factor is `min(1, max(epoch, 1) / epochs)`, so epoch 0 uses the
    /// same rate as epoch 1 instead of zero.
    Warmup { epochs: usize, inner: Box<Schedule> },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} must be a finite positive number")))
            }
        };
        match self {
            Schedule::Constant(lr) => positive("optim.lr", *lr),
            Schedule::ExpDecay { base, rate } => {
                positive("optim.lr", *base)?;
                if *rate > 0.0 && *rate <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::config("optim.decay", "must lie in (0, 1]"))
                }
            }
            Schedule::StepDecay {
                base,
                milestones,
                factor,
            } => {
                positive("optim.lr", *base)?;
                positive("optim.step_factor", *factor)?;
                if milestones.windows(2).all(|m| m[0] < m[1]) {
                    Ok(())
                } else {
                    Err(Error::config("optim.milestones", "must be strictly increasing"))
                }
            }
            Schedule::Warmup { epochs, inner } => {
                if *epochs == 0 {
                    return Err(Error::config("optim.warmup_epochs", "must be >= 1"));
                }
                inner.validate()
            }
        }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        match self {
            Schedule::Constant(lr) => *lr,
            Schedule::ExpDecay { base, rate } => base * rate.powi(epoch as i32),
            Schedule::StepDecay {
                base,
                milestones,
                factor,
            } => {
                let passed = milestones.iter().filter(|&&m| m <= epoch).count();
                base * factor.powi(passed as i32)
            }
            Schedule::Warmup { epochs, inner } => {
                let ramp = (epoch.max(1) as f64 / *epochs as f64).min(1.0);
                ramp * inner.rate(epoch)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerKind {
    /// `v ← βv + (1−β)g`, `w ← w − ηv`. `momentum = 0` is plain SGD.
    Sgd { momentum: f64 },
    /// `w ← w − η(H + λI)⁻¹g` with the weighted batch Hessian.
    Newton,
    /// `w ← w − η ḡ / (h̄ + δ)^k` with moving averages `ḡ`, `h̄` updated from
    /// each batch.
    DiagNewton {
        hessian_power: f64,
        beta1: f64,
        beta2: f64,
        hutchinson_samples: usize,
    },
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub w: Vector,
    /// Momentum buffer for SGD; the last search direction otherwise.
    pub v: Vector,
    pub t: u64,
    pub kind: OptimizerKind,
    pub schedule: Schedule,
    /// Newton damping relative to `trace(H)/d`.
    pub damping: f64,
    /// Floor added to the curvature average in diagonal Newton.
    pub delta_floor: f64,
    ema: Option<EmaState>,
}

impl OptimizerState {
    pub fn new(w: Vector, kind: OptimizerKind, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        let ema = match &kind {
            OptimizerKind::Sgd { momentum } => {
                if !(0.0..1.0).contains(momentum) {
                    return Err(Error::config("optim.momentum", "must lie in [0, 1)"));
                }
                None
            }
            OptimizerKind::Newton => None,
            OptimizerKind::DiagNewton {
                hessian_power,
                beta1,
                beta2,
                hutchinson_samples,
            } => {
                if !(0.0..=1.0).contains(hessian_power) {
                    return Err(Error::config("optim.hessian_power", "must lie in [0, 1]"));
                }
                if *hutchinson_samples == 0 {
                    return Err(Error::config("optim.hutchinson_samples", "must be >= 1"));
                }
                Some(EmaState::new(*beta1, *beta2)?)
            }
        };
        let d = w.len();
        Ok(OptimizerState {
            w,
            v: Vector::zeros(d),
            t: 0,
            kind,
            schedule,
            damping: 1e-8,
            delta_floor: 1e-12,
            ema,
        })
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.schedule.rate(epoch)
    }

    pub fn ema(&self) -> Option<&EmaState> {
        self.ema.as_ref()
    }

    /// One update on a weighted batch at the rate for `epoch`. `rng` feeds
    /// the Hutchinson probes of diagonal Newton.
    pub fn step(
        &mut self,
        model: &dyn Model,
        batch: &[(usize, f64)],
        epoch: usize,
        rng: &mut SeededRng,
    ) -> Result<()> {
        let lr = self.lr(epoch);
        match self.kind.clone() {
            OptimizerKind::Sgd { momentum } => sgd_momentum_step(self, model, batch, momentum, lr),
            OptimizerKind::Newton => newton_step(self, model, batch, lr),
            OptimizerKind::DiagNewton {
                hessian_power,
                hutchinson_samples,
                ..
            } => {
                let g = weighted_grad(model, &self.w, batch)?;
                let diag = hutchinson_diag(
                    |z| weighted_hvp(model, &self.w, z, batch),
                    model.dim(),
                    hutchinson_samples,
                    rng,
                )?;
                let mut ema = self.ema.take().expect("diagonal Newton keeps an EMA");
                let res = ema
                    .update_grad(&g)
                    .and_then(|_| ema.update_hess(&diag))
                    .and_then(|_| diag_newton_step(self, &ema, hessian_power, lr));
                self.ema = Some(ema);
                res
            }
        }
    }
}

/// `Σ γ_i H_i z / Σ γ_i`.
pub fn weighted_hvp(model: &dyn Model, w: &[f64], z: &[f64], batch: &[(usize, f64)]) -> Result<Vector> {
    let total: f64 = batch.iter().map(|b| b.1).sum();
    if batch.is_empty() || !(total > 0.0) {
        return Err(Error::InvalidInput("empty or zero-weight batch".into()));
    }
    if batch.iter().all(|b| b.1 == batch[0].1) {
        let idx: Vec<usize> = batch.iter().map(|b| b.0).collect();
        return model.hvp(w, z, &idx);
    }
    let mut acc = Vector::zeros(model.dim());
    for &(i, gamma) in batch {
        acc.axpy(gamma, &model.hvp(w, z, &[i])?);
    }
    acc.scale(1.0 / total);
    Ok(acc)
}

pub fn sgd_momentum_step(
    state: &mut OptimizerState,
    model: &dyn Model,
    batch: &[(usize, f64)],
    momentum: f64,
    lr: f64,
) -> Result<()> {
    let g = weighted_grad(model, &state.w, batch)?;
    for (v, gi) in state.v.iter_mut().zip(g.iter()) {
        *v = momentum * *v + (1.0 - momentum) * gi;
    }
    let v = state.v.clone();
    state.w.axpy(-lr, &v);
    state.t += 1;
    Ok(())
}

pub fn newton_step(
    state: &mut OptimizerState,
    model: &dyn Model,
    batch: &[(usize, f64)],
    lr: f64,
) -> Result<()> {
    let g = weighted_grad(model, &state.w, batch)?;
    let mut h = weighted_hessian(model, &state.w, batch)?;
    let d = h.rows();
    let damping = state.damping * h.trace() / d as f64;
    h.add_diag(damping);
    let dir = h.cholesky_solve(&g).ok_or(Error::SingularHessian { damping })?;
    state.w.axpy(-lr, &dir);
    state.v = dir;
    state.t += 1;
    Ok(())
}

/// `w ← w − η ḡ / (h̄ + δ)^k` from an already-updated moving average.
pub fn diag_newton_step(state: &mut OptimizerState, ema: &EmaState, hessian_power: f64, lr: f64) -> Result<()> {
    let missing = || Error::State("diagonal Newton needs populated moving averages".into());
    let g = ema.g_bar().ok_or_else(missing)?;
    let h = ema.h_bar().ok_or_else(missing)?;
    check_dim(state.w.len(), g.len())?;
    let dir = precondition(&g, &h, hessian_power, state.delta_floor)?;
    state.w.axpy(-lr, &dir);
    state.v = dir;
    state.t += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::data::Dataset;
    use crate::models::{mean_loss, LogisticModel, QuadraticModel};
    use crate::numerics::Matrix;

    fn quad(diag: &[f64]) -> QuadraticModel {
        let n = diag.len();
        let mut a = Matrix::zeros(n, n);
        for (k, &v) in diag.iter().enumerate() {
            a[(k, k)] = v;
        }
        QuadraticModel::centered(a).unwrap()
    }

    fn sgd(w: Vec<f64>, momentum: f64, lr: f64) -> OptimizerState {
        OptimizerState::new(w.into(), OptimizerKind::Sgd { momentum }, Schedule::Constant(lr)).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let flat = Schedule::ExpDecay { base: 0.1, rate: 1.0 };
        assert_eq!(flat.rate(0), 0.1);
        assert_eq!(flat.rate(17), 0.1);
        let half = Schedule::ExpDecay { base: 0.1, rate: 0.5 };
        assert!((half.rate(2) - 0.025).abs() < 1e-15);
        let warm = Schedule::Warmup {
            epochs: 20,
            inner: Box::new(Schedule::Constant(0.1)),
        };
        assert!((warm.rate(10) - 0.05).abs() < 1e-15);
        assert!(warm.rate(0) > 0.0);
        assert_eq!(warm.rate(40), 0.1);
        let steps = Schedule::StepDecay {
            base: 1.0,
            milestones: vec![2, 5],
            factor: 0.1,
        };
        assert_eq!(steps.rate(1), 1.0);
        assert!((steps.rate(5) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::Constant(0.0).validate().is_err());
        assert!(Schedule::ExpDecay { base: 1.0, rate: 1.5 }.validate().is_err());
        let w = Schedule::Warmup {
            epochs: 0,
            inner: Box::new(Schedule::Constant(1.0)),
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn plain_sgd_on_unit_quadratic() {
        let m = quad(&[1.0]);
        let mut s = sgd(vec![1.0], 0.0, 1.0);
        s.step(&m, &[(0, 1.0)], 0, &mut SeededRng::new(0)).unwrap();
        assert_eq!(s.w.as_slice(), &[0.0]);
        assert!(s.step(&m, &[], 0, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn momentum_buffer_tracks_constant_gradient() {
        // with a zero rate w stays put, so the gradient stays at 2
        let m = quad(&[1.0]);
        let mut s = sgd(vec![2.0], 0.9, 1.0);
        for _ in 0..400 {
            sgd_momentum_step(&mut s, &m, &[(0, 1.0)], 0.9, 0.0).unwrap();
        }
        assert!((s.v[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn newton_solves_quadratics_in_one_step() {
        let a = Matrix::symmetric(3, vec![4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]).unwrap();
        let m = QuadraticModel::centered(a).unwrap();
        let mut s = OptimizerState::new(vec![1.0, -2.0, 0.5].into(), OptimizerKind::Newton, Schedule::Constant(1.0)).unwrap();
        s.step(&m, &[(0, 1.0)], 0, &mut SeededRng::new(0)).unwrap();
        assert!(s.w.norm() < 1e-7, "{:?}", s.w);

        let mut s = OptimizerState::new(vec![0.0; 3].into(), OptimizerKind::Newton, Schedule::Constant(1.0)).unwrap();
        s.step(&m, &[(0, 1.0)], 0, &mut SeededRng::new(0)).unwrap();
        assert_eq!(s.w.as_slice(), &[0.0; 3]);
    }

    #[test]
    fn newton_reports_singular_hessian() {
        let m = quad(&[0.0, 0.0]);
        let mut s = OptimizerState::new(vec![1.0, 1.0].into(), OptimizerKind::Newton, Schedule::Constant(1.0)).unwrap();
        let err = s.step(&m, &[(0, 1.0)], 0, &mut SeededRng::new(0)).unwrap_err();
        assert!(matches!(err, Error::SingularHessian { .. }));
    }

    fn two_points() -> LogisticModel {
        let ds = Dataset::new("sep", Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, -1.5]]).unwrap(), vec![1, 0], 2).unwrap();
        LogisticModel::new(Arc::new(ds), 0.1).unwrap()
    }

    #[test]
    fn newton_decreases_separable_logistic_loss() {
        let m = two_points();
        let mut s = OptimizerState::new(vec![0.0; 3].into(), OptimizerKind::Newton, Schedule::Constant(1.0)).unwrap();
        let batch = [(0, 1.0), (1, 1.0)];
        let mut prev = mean_loss(&m, &s.w);
        for _ in 0..8 {
            s.step(&m, &batch, 0, &mut SeededRng::new(0)).unwrap();
            let l = mean_loss(&m, &s.w);
            assert!(l < prev || (prev - l).abs() < 1e-15, "{l} after {prev}");
            prev = l;
        }
    }

    fn diag_newton(w: Vec<f64>, k: f64, lr: f64) -> OptimizerState {
        let kind = OptimizerKind::DiagNewton {
            hessian_power: k,
            beta1: 0.9,
            beta2: 0.999,
            hutchinson_samples: 1,
        };
        OptimizerState::new(w.into(), kind, Schedule::Constant(lr)).unwrap()
    }

    #[test]
    fn diag_newton_equalizes_a_diagonal_quadratic() {
        let m = quad(&[2.0, 8.0]);
        let mut s = diag_newton(vec![3.0, -1.0], 1.0, 1.0);
        s.step(&m, &[(0, 1.0)], 0, &mut SeededRng::new(3)).unwrap();
        assert!(s.w.norm() < 1e-9, "{:?}", s.w);
    }

    #[test]
    fn zero_power_is_sgd_on_the_averaged_gradient() {
        let m = quad(&[2.0, 8.0]);
        let mut a = diag_newton(vec![3.0, -1.0], 0.0, 0.1);
        let mut b = sgd(vec![3.0, -1.0], 0.0, 0.1);
        a.step(&m, &[(0, 1.0)], 0, &mut SeededRng::new(3)).unwrap();
        b.step(&m, &[(0, 1.0)], 0, &mut SeededRng::new(3)).unwrap();
        assert_eq!(a.w, b.w);
        assert!(diag_newton_step(&mut b, &EmaState::new(0.9, 0.9).unwrap(), 1.0, 0.1).is_err());
    }

    #[test]
    fn diag_newton_decreases_strongly_convex_logistic_loss() {
        let mut rng = SeededRng::new(12);
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let labels = (0..60).map(|i| usize::from(rows[i][0] + 0.5 * rows[i][1] > 0.0)).collect();
        let ds = Dataset::new("lr", Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap();
        let m = LogisticModel::new(Arc::new(ds), 0.1).unwrap();
        let lr = m.mu() / m.smoothness_bound();
        let mut s = diag_newton(vec![0.0; 5], 1.0, lr);
        let batch: Vec<(usize, f64)> = (0..60).map(|i| (i, 1.0)).collect();
        let mut prev = mean_loss(&m, &s.w);
        for _ in 0..30 {
            s.step(&m, &batch, 0, &mut rng).unwrap();
            let l = mean_loss(&m, &s.w);
            assert!(l <= prev, "{l} after {prev}");
            prev = l;
        }
    }

    #[test]
    fn weighted_hvp_uses_weights() {
        let m = two_points();
        let w = [0.3, -0.2, 0.1];
        let z = [1.0, 0.5, -1.0];
        let a = weighted_hvp(&m, &w, &z, &[(0, 3.0), (1, 1.0)]).unwrap();
        let h0 = m.hvp(&w, &z, &[0]).unwrap();
        let h1 = m.hvp(&w, &z, &[1]).unwrap();
        for k in 0..3 {
            assert!((a[k] - (3.0 * h0[k] + h1[k]) / 4.0).abs() < 1e-15);
        }
    }
}
