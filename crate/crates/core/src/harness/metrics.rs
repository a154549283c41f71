use std::io::Write;

use crate::error::{check_dim, Error, Result};
use crate::models::{full_grad, Model};
use crate::coreset::Coreset;
use crate::numerics::{distance, norm, Vector};

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Cumulative training time including selection, excluding evaluation.
    pub seconds: f64,
    /// Cumulative part of `seconds` spent selecting coresets.
    pub selection_seconds: f64,
    /// Mean loss over the full training set.
    pub train_loss: f64,
    /// `train_loss` minus the reference loss of the comparison group.
    pub loss_residual: f64,
    /// NaN when no test split exists.
    pub test_acc: f64,
    /// Normalized gradient error of this epoch's coreset, measured before
    /// the epoch's first step.
    pub grad_diff: f64,
    /// Set when the full gradient vanished and `grad_diff` was forced to 0.
    pub grad_vanished: bool,
    /// Fraction of training examples selected at least once so far.
    pub distinct_frac: f64,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str = "epoch,seconds,train_loss,loss_residual,test_acc,grad_diff,distinct_frac";

    pub fn write_csv(rows: &[MetricsRecord], mut out: impl Write) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.seconds, r.train_loss, r.loss_residual, r.test_acc, r.grad_diff, r.distinct_frac
            )?;
        }
        Ok(())
    }
}

/// Per-example tracking across evaluations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerExampleStats {
    pub selection_count: Vec<u32>,
    pub forgetting: Vec<u32>,
    /// `None` until the first evaluation.
    pub last_correct: Vec<Option<bool>>,
    /// Prediction entropy at the latest evaluation.
    pub entropy: Vec<f64>,
    pub evaluations: u32,
}

impl PerExampleStats {
    pub fn new(n: usize) -> Self {
        PerExampleStats {
            selection_count: vec![0; n],
            forgetting: vec![0; n],
            last_correct: vec![None; n],
            entropy: vec![0.0; n],
            evaluations: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.forgetting.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forgetting.is_empty()
    }

    pub fn record_selection(&mut self, coreset: &Coreset) {
        for &i in &coreset.indices {
            self.selection_count[i] += 1;
        }
    }

    pub fn distinct_selected(&self) -> usize {
        self.selection_count.iter().filter(|&&c| c > 0).count()
    }

    pub fn write_selection_counts(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "index,count")?;
        for (i, c) in self.selection_count.iter().enumerate() {
            writeln!(out, "{i},{c}")?;
        }
        Ok(())
    }

    pub fn write_per_example(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "index,forgetting,entropy")?;
        for i in 0..self.len() {
            writeln!(out, "{i},{},{}", self.forgetting[i], self.entropy[i])?;
        }
        Ok(())
    }
}

/// Counts correct-to-incorrect transitions since the previous call.
pub fn forgetting_update(stats: &mut PerExampleStats, predictions: &[usize], labels: &[usize]) -> Result<()> {
    check_dim(stats.len(), predictions.len())?;
    check_dim(stats.len(), labels.len())?;
    for (i, (p, y)) in predictions.iter().zip(labels).enumerate() {
        let correct = p == y;
        if stats.last_correct[i] == Some(true) && !correct {
            stats.forgetting[i] += 1;
        }
        stats.last_correct[i] = Some(correct);
    }
    stats.evaluations += 1;
    Ok(())
}

/// Shannon entropy (natural log) of each probability row.
pub fn uncertainty(predictions: &[Vector]) -> Result<Vec<f64>> {
    predictions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-6 || p.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "row {i} is not a probability vector (sums to {total})"
                )));
            }
            Ok(-p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
        })
        .collect()
}

/// `‖g_full − Σ_j γ_j g_j / n‖ / ‖g_full‖` with `g_full` the mean gradient.
/// Returns `(0, true)` when the full gradient is exactly zero.
pub fn normalized_grad_diff(model: &dyn Model, w: &[f64], coreset: &Coreset) -> Result<(f64, bool)> {
    if coreset.is_empty() {
        return Err(Error::InvalidInput("empty coreset".into()));
    }
    let n = model.len() as f64;
    let g_full = full_grad(model, w);
    let gn = norm(&g_full);
    if gn == 0.0 {
        return Ok((0.0, true));
    }
    let mut g_core = Vector::zeros(model.dim());
    for (i, gamma) in coreset.weighted() {
        if i >= model.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: model.len(),
            });
        }
        g_core.axpy(gamma, &model.grad_i(w, i));
    }
    g_core.scale(1.0 / n);
    Ok((distance(&g_full, &g_core) / gn, false))
}
