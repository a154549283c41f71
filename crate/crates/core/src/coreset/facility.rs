use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::{Coreset, SelectionFeatures};
use crate::error::{Error, Result};
use crate::numerics::{distance, norm, SeededRng};

/// Largest group for which the full pairwise distance matrix is stored
/// (8192² f64 = 512 MiB). Larger groups compute distances on demand.
pub const DEFAULT_DENSE_THRESHOLD: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stopping {
    /// Stop once `L(S) <= epsilon`.
    Epsilon(f64),
    /// Stop once `|S| == budget`.
    Budget(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum GreedyMode {
    Naive,
    #[default]
    Lazy,
    /// Evaluate a random sample of candidates per step. `None` uses
    /// `(n / budget)·ln(1/δ)` with δ = 0.1, capped at `n`.
    Stochastic { sample_size: Option<usize> },
}

/// Facility-location cover objective over one group of feature vectors.
///
/// The phantom element sits at distance `phantom()` from every example, so
/// `L(∅) = n·phantom()` and `F(S) = L({e}) − L(S ∪ {e})`.
pub struct FacilityLocation<'a> {
    feats: &'a SelectionFeatures,
    dense: Option<Vec<f64>>,
    phantom: f64,
}

impl<'a> FacilityLocation<'a> {
    pub fn new(feats: &'a SelectionFeatures, dense_threshold: usize) -> Self {
        let n = feats.len();
        if n > 0 && n <= dense_threshold {
            let rows = &feats.vectors;
            let dense: Vec<f64> = (0..n)
                .into_par_iter()
                .flat_map_iter(|i| (0..n).map(move |j| distance(rows.row(i), rows.row(j))))
                .collect();
            let phantom = positive(dense.iter().copied().fold(0.0, f64::max));
            FacilityLocation {
                feats,
                dense: Some(dense),
                phantom,
            }
        } else {
            // ‖a − b‖ ≤ ‖a‖ + ‖b‖: the two largest norms bound every distance
            let mut top = [0.0f64; 2];
            for r in feats.vectors.row_iter().take(n) {
                let v = norm(r);
                if v > top[0] {
                    top = [v, top[0]];
                } else if v > top[1] {
                    top[1] = v;
                }
            }
            FacilityLocation {
                feats,
                dense: None,
                phantom: positive(top[0] + top[1]),
            }
        }
    }

    pub fn len(&self) -> usize {
        self.feats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feats.is_empty()
    }

    pub fn phantom(&self) -> f64 {
        self.phantom
    }

    /// Distance between local rows `i` and `j`.
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        match &self.dense {
            Some(d) => d[i * self.len() + j],
            None => distance(self.feats.vectors.row(i), self.feats.vectors.row(j)),
        }
    }

    /// Coverage vector for `S` (local indices): each example's distance to
    /// its nearest member of `S ∪ {e}`.
    pub fn coverage(&self, s: &[usize]) -> Vec<f64> {
        (0..self.len())
            .map(|i| s.iter().fold(self.phantom, |c, &j| c.min(self.dist(i, j))))
            .collect()
    }

    /// `L(S)`.
    pub fn loss(&self, s: &[usize]) -> f64 {
        self.coverage(s).iter().sum()
    }

    /// `(L(S), F(S))`.
    pub fn objective(&self, s: &[usize]) -> (f64, f64) {
        let l = self.loss(s);
        (l, self.phantom * self.len() as f64 - l)
    }

    /// Marginal gain `F(e | S)` given the coverage vector of `S`, computed
    /// as a sum of per-example improvements.
    pub fn gain(&self, e: usize, coverage: &[f64]) -> f64 {
        coverage
            .iter()
            .zip(self.dist_row(e).iter())
            .map(|(&c, &d)| (c - d).max(0.0))
            .sum()
    }

    /// Distances from `e` to every row. Distances are exactly symmetric, so
    /// the dense case can hand out row `e`.
    pub fn dist_row(&self, e: usize) -> Cow<'_, [f64]> {
        let n = self.len();
        match &self.dense {
            Some(d) => Cow::Borrowed(&d[e * n..(e + 1) * n]),
            None => {
                let v = self.feats.vectors.row(e);
                Cow::Owned((0..n).map(|i| distance(self.feats.vectors.row(i), v)).collect())
            }
        }
    }

    /// Nearest-member counts; ties go to the member with the lowest index.
    pub fn weights(&self, s: &[usize]) -> Vec<f64> {
        let mut sorted: Vec<(usize, usize)> = s.iter().copied().enumerate().map(|(k, j)| (j, k)).collect();
        sorted.sort_unstable();
        let mut best = vec![(f64::INFINITY, usize::MAX); self.len()];
        for &(j, k) in &sorted {
            for (b, &d) in best.iter_mut().zip(self.dist_row(j).iter()) {
                if d < b.0 {
                    *b = (d, k);
                }
            }
        }
        let mut counts = vec![0.0; s.len()];
        for (_, k) in best {
            if k != usize::MAX {
                counts[k] += 1.0;
            }
        }
        counts
    }
}

// All-equal rows still need a positive phantom distance so that one
// medoid has something to cover.
fn positive(d: f64) -> f64 {
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

#[derive(PartialEq)]
struct Bound {
    gain: f64,
    idx: usize,
    round: usize,
}

impl Eq for Bound {}

impl Ord for Bound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Best candidate by (gain desc, index asc).
fn argmax_gain(fl: &FacilityLocation, cands: &[usize], cov: &[f64]) -> Option<(usize, f64)> {
    let gains: Vec<f64> = cands.par_iter().map(|&e| fl.gain(e, cov)).collect();
    let mut best: Option<(usize, f64)> = None;
    for (&e, &g) in cands.iter().zip(&gains) {
        match best {
            Some((be, bg)) if g < bg || (g == bg && e > be) => {}
            _ => best = Some((e, g)),
        }
    }
    best
}

/// Greedy facility-location selection over one group.
///
/// Adds the element of largest marginal gain (ties: lowest index) until the
/// stopping rule is met or every example is covered exactly (`L(S) = 0`).
/// Naive and lazy modes return identical selections.
pub fn greedy_select(
    feats: &SelectionFeatures,
    stopping: Stopping,
    mode: GreedyMode,
    dense_threshold: usize,
    rng: &mut SeededRng,
) -> Result<Coreset> {
    let n = feats.len();
    match stopping {
        Stopping::Epsilon(e) if !(e >= 0.0) => {
            return Err(Error::InvalidInput(format!("epsilon {e} must be >= 0")))
        }
        Stopping::Budget(b) if b > n => {
            return Err(Error::InvalidInput(format!("budget {b} exceeds {n} examples")))
        }
        _ => {}
    }
    let fl = FacilityLocation::new(feats, dense_threshold);
    let mut cov = vec![fl.phantom(); n];
    let mut loss: f64 = cov.iter().sum();
    let mut chosen: Vec<usize> = Vec::new();
    let mut in_set = vec![false; n];

    let done = |chosen: &[usize], loss: f64| match stopping {
        Stopping::Epsilon(eps) => loss <= eps,
        Stopping::Budget(b) => chosen.len() >= b,
    } || (!chosen.is_empty() && loss == 0.0);

    let mut heap: BinaryHeap<Bound> = BinaryHeap::new();
    if matches!(mode, GreedyMode::Lazy) && !done(&chosen, loss) {
        let all: Vec<usize> = (0..n).collect();
        let gains: Vec<f64> = all.par_iter().map(|&e| fl.gain(e, &cov)).collect();
        heap.extend(gains.into_iter().enumerate().map(|(idx, gain)| Bound { gain, idx, round: 0 }));
    }
    let sample_size = match (mode, stopping) {
        (GreedyMode::Stochastic { sample_size: Some(s) }, _) => s.clamp(1, n.max(1)),
        (GreedyMode::Stochastic { sample_size: None }, Stopping::Budget(b)) if b > 0 => {
            (((n as f64 / b as f64) * 10f64.ln()).ceil() as usize).clamp(1, n)
        }
        _ => n.max(1),
    };

    while !done(&chosen, loss) {
        let round = chosen.len();
        let pick = match mode {
            GreedyMode::Naive => {
                let cands: Vec<usize> = (0..n).filter(|&e| !in_set[e] && cov[e] > 0.0).collect();
                argmax_gain(&fl, &cands, &cov).map(|(e, _)| e)
            }
            GreedyMode::Lazy => loop {
                let Some(top) = heap.pop() else { break None };
                if in_set[top.idx] || cov[top.idx] == 0.0 {
                    continue;
                }
                if top.round == round {
                    break Some(top.idx);
                }
                heap.push(Bound {
                    gain: fl.gain(top.idx, &cov),
                    idx: top.idx,
                    round,
                });
            },
            GreedyMode::Stochastic { .. } => {
                let open: Vec<usize> = (0..n).filter(|&e| !in_set[e] && cov[e] > 0.0).collect();
                let mut cands: Vec<usize> = if open.len() <= sample_size {
                    open
                } else {
                    rng.sample_indices(open.len(), sample_size)
                        .into_iter()
                        .map(|k| open[k])
                        .collect()
                };
                cands.sort_unstable();
                argmax_gain(&fl, &cands, &cov).map(|(e, _)| e)
            }
        };
        let Some(e) = pick else { break };
        in_set[e] = true;
        chosen.push(e);
        for (c, &d) in cov.iter_mut().zip(fl.dist_row(e).iter()) {
            if d < *c {
                *c = d;
            }
        }
        loss = cov.iter().sum();
    }

    let weights = fl.weights(&chosen);
    Ok(Coreset {
        indices: chosen.iter().map(|&j| feats.ids[j]).collect(),
        weights,
        classes: vec![feats.class; chosen.len()],
        residual: loss,
        skipped_classes: Vec::new(),
    })
}
