//! Weighted coreset selection by greedy facility-location cover.
//!
//! Examples are represented by selection feature vectors; the cover loss of
//! a subset `S` is `L(S) = Σ_i min_{j∈S} ‖v_i − v_j‖`. Greedy adds the
//! element with the largest marginal drop in `L` and every selected element
//! is weighted by how many examples it is nearest to.

mod facility;
mod select;

pub use facility::{greedy_select, FacilityLocation, GreedyMode, Stopping, DEFAULT_DENSE_THRESHOLD};
pub use select::{
    class_budgets, convex_one_shot, per_class_select, per_class_select_inspect, random_select, SelectOptions,
};

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::numerics::{distance, norm, Matrix};

/// How selection features were produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// Curvature-preconditioned (smoothed) gradients.
    #[default]
    Preconditioned,
    /// Raw gradient proxies; the first-order baseline.
    GradientOnly,
    /// Dataset rows; the one-shot convex bound.
    RawFeature,
}

/// Per-example vectors for one group of examples (usually one class).
#[derive(Clone, Debug)]
pub struct SelectionFeatures {
    /// Global dataset index of each row.
    pub ids: Vec<usize>,
    pub vectors: Matrix,
    pub mode: FeatureMode,
    /// Class tag copied into the resulting coreset entries.
    pub class: usize,
}

impl SelectionFeatures {
    pub fn new(ids: Vec<usize>, rows: Vec<Vec<f64>>, mode: FeatureMode) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: rows.len(),
            });
        }
        let vectors = if rows.is_empty() {
            Matrix::zeros(0, 0)
        } else {
            Matrix::from_rows(&rows)?
        };
        if vectors.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite selection feature".into()));
        }
        Ok(SelectionFeatures {
            ids,
            vectors,
            mode,
            class: 0,
        })
    }

    /// Features whose ids are simply `0..rows.len()`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..rows.len()).collect();
        Self::new(ids, rows, FeatureMode::RawFeature)
    }

    pub fn with_class(mut self, class: usize) -> Self {
        self.class = class;
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A weighted subset. Entries are grouped by class; within a class they are
/// in greedy pick order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Coreset {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub classes: Vec<usize>,
    /// Achieved cover loss `L(S)`, summed over classes.
    pub residual: f64,
    /// Classes that had no members and were skipped.
    pub skipped_classes: Vec<usize>,
}

impl Coreset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `(index, weight)` pairs, the form consumed by the optimizers.
    pub fn weighted(&self) -> Vec<(usize, f64)> {
        self.indices
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Entries of one class as `(indices, weights)`.
    pub fn per_class(&self, class: usize) -> (Vec<usize>, Vec<f64>) {
        let mut idx = Vec::new();
        let mut w = Vec::new();
        for k in 0..self.len() {
            if self.classes[k] == class {
                idx.push(self.indices[k]);
                w.push(self.weights[k]);
            }
        }
        (idx, w)
    }

    /// Every example once with unit weight.
    pub fn full(labels: &[usize]) -> Coreset {
        Coreset {
            indices: (0..labels.len()).collect(),
            weights: vec![1.0; labels.len()],
            classes: labels.to_vec(),
            residual: 0.0,
            skipped_classes: Vec::new(),
        }
    }

    pub(crate) fn append(&mut self, other: Coreset) {
        self.indices.extend(other.indices);
        self.weights.extend(other.weights);
        self.classes.extend(other.classes);
        self.residual += other.residual;
        self.skipped_classes.extend(other.skipped_classes);
    }

    /// `class,index,weight` rows under a header. Integral weights are
    /// written without a fractional part.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        out.write_all(b"class,index,weight\n")?;
        for k in 0..self.len() {
            writeln!(
                out,
                "{},{},{}",
                self.classes[k],
                self.indices[k],
                format_weight(self.weights[k])
            )?;
        }
        Ok(())
    }

    pub fn read_csv(input: impl BufRead) -> Result<Coreset> {
        let mut c = Coreset::default();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            if k == 0 {
                if line.trim() != "class,index,weight" {
                    return Err(Error::Parse {
                        line: 1,
                        msg: "expected header `class,index,weight`".into(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: k + 1,
                msg: msg.into(),
            };
            let mut f = line.split(',');
            let class = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad class"))?;
            let index = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad index"))?;
            let weight = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad weight"))?;
            if f.next().is_some() {
                return Err(bad("too many fields"));
            }
            c.classes.push(class);
            c.indices.push(index);
            c.weights.push(weight);
        }
        Ok(c)
    }
}

/// Measured sides of the cover bound for one group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoverCheck {
    /// `‖Σ_i v_i − Σ_j γ_j v_j‖`.
    pub weighted_sum_error: f64,
    /// `L(S) = Σ_i min_{j∈S} ‖v_i − v_j‖`.
    pub cover_loss: f64,
}

impl CoverCheck {
    pub fn holds(&self) -> bool {
        self.weighted_sum_error <= self.cover_loss
    }
}

/// Evaluates both sides of `‖Σ_i v_i − Σ_j γ_j v_j‖ ≤ L(S)` for the part of
/// `coreset` that falls inside `feats`.
///
/// Each example is assigned to its nearest selected element (lowest index on
/// ties), which is how the weights were formed, so the left side is
/// accumulated as `‖Σ_i (v_i − v_{m(i)})‖`. Fails if the coreset's weights
/// are not those assignment counts.
pub fn cover_check(feats: &SelectionFeatures, coreset: &Coreset) -> Result<CoverCheck> {
    let local: std::collections::HashMap<usize, usize> =
        feats.ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let mut chosen: Vec<(usize, f64)> = coreset
        .weighted()
        .into_iter()
        .filter_map(|(id, w)| local.get(&id).map(|&k| (k, w)))
        .collect();
    if chosen.is_empty() {
        return Err(Error::InvalidInput("coreset has no members in this group".into()));
    }
    chosen.sort_by_key(|c| c.0);
    let rows = &feats.vectors;
    let mut diff = vec![0.0; rows.cols()];
    let mut counts = vec![0.0; chosen.len()];
    let mut loss = 0.0;
    for i in 0..feats.len() {
        let v = rows.row(i);
        let mut best = (f64::INFINITY, 0);
        for (slot, &(j, _)) in chosen.iter().enumerate() {
            let d = distance(v, rows.row(j));
            if d < best.0 {
                best = (d, slot);
            }
        }
        loss += best.0;
        counts[best.1] += 1.0;
        let m = rows.row(chosen[best.1].0);
        for ((acc, a), b) in diff.iter_mut().zip(v).zip(m) {
            *acc += a - b;
        }
    }
    if chosen.iter().zip(&counts).any(|(c, n)| c.1 != *n) {
        return Err(Error::State("coreset weights are not nearest-medoid counts".into()));
    }
    Ok(CoverCheck {
        weighted_sum_error: norm(&diff),
        cover_loss: loss,
    })
}

fn format_weight(w: f64) -> String {
    if w.fract() == 0.0 && w.abs() < 9.0e15 {
        format!("{}", w as i64)
    } else {
        format!("{w}")
    }
}
