use log::warn;

use super::facility::{greedy_select, GreedyMode, Stopping, DEFAULT_DENSE_THRESHOLD};
use super::{Coreset, FeatureMode, SelectionFeatures};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{largest_remainder, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectOptions {
    pub mode: GreedyMode,
    pub dense_threshold: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            mode: GreedyMode::Lazy,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
        }
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("subset fraction {fraction} not in (0, 1]")))
    }
}

/// Per-class budgets proportional to class sizes, by largest-remainder
/// rounding of the overall target. Every non-empty class gets at least one
/// element and never more than its size.
pub fn class_budgets(sizes: &[usize], fraction: f64) -> Result<Vec<usize>> {
    check_fraction(fraction)?;
    let n: usize = sizes.iter().sum();
    let quotas: Vec<f64> = sizes.iter().map(|&s| fraction * s as f64).collect();
    let total = (fraction * n as f64).round() as usize;
    Ok(largest_remainder(&quotas, total)
        .into_iter()
        .zip(sizes)
        .map(|(b, &s)| if s == 0 { 0 } else { b.clamp(1, s) })
        .collect())
}

/// Runs greedy selection independently inside each class and merges the
/// results in class order.
///
/// `build` maps `(class, member indices)` to that class's selection features.
/// Empty classes are skipped and listed in `skipped_classes`.
pub fn per_class_select<F>(
    data: &Dataset,
    build: F,
    fraction: f64,
    opts: SelectOptions,
    rng: &mut SeededRng,
) -> Result<Coreset>
where
    F: FnMut(usize, &[usize]) -> Result<SelectionFeatures>,
{
    per_class_select_inspect(data, build, fraction, opts, rng, |_, _| Ok(()))
}

/// [`per_class_select`] that also hands each class's features and coreset
/// to `inspect` before merging.
pub fn per_class_select_inspect<F, G>(
    data: &Dataset,
    mut build: F,
    fraction: f64,
    opts: SelectOptions,
    rng: &mut SeededRng,
    mut inspect: G,
) -> Result<Coreset>
where
    F: FnMut(usize, &[usize]) -> Result<SelectionFeatures>,
    G: FnMut(&SelectionFeatures, &Coreset) -> Result<()>,
{
    let budgets = class_budgets(&data.class_sizes(), fraction)?;
    let mut out = Coreset::default();
    for (class, members) in data.class_index().iter().enumerate() {
        if members.is_empty() {
            warn!("class {class} has no examples; skipped");
            out.skipped_classes.push(class);
            continue;
        }
        let feats = build(class, members)?.with_class(class);
        if feats.len() != members.len() {
            return Err(Error::DimensionMismatch {
                expected: members.len(),
                got: feats.len(),
            });
        }
        let c = greedy_select(
            &feats,
            Stopping::Budget(budgets[class]),
            opts.mode,
            opts.dense_threshold,
            rng,
        )?;
        inspect(&feats, &c)?;
        out.append(c);
    }
    Ok(out)
}

/// Uniform sampling without replacement inside each class with the same
/// budgets as greedy selection. Every sampled element carries weight
/// `class_size / budget`. No cover loss is computed, so `residual` is NaN.
pub fn random_select(data: &Dataset, fraction: f64, rng: &mut SeededRng) -> Result<Coreset> {
    let budgets = class_budgets(&data.class_sizes(), fraction)?;
    let mut out = Coreset::default();
    for (class, members) in data.class_index().iter().enumerate() {
        if members.is_empty() {
            warn!("class {class} has no examples; skipped");
            out.skipped_classes.push(class);
            continue;
        }
        let b = budgets[class];
        let mut picks: Vec<usize> = rng
            .sample_indices(members.len(), b)
            .into_iter()
            .map(|k| members[k])
            .collect();
        picks.sort_unstable();
        let w = members.len() as f64 / b as f64;
        out.weights.extend(std::iter::repeat(w).take(b));
        out.classes.extend(std::iter::repeat(class).take(b));
        out.indices.extend(picks);
    }
    out.residual = f64::NAN;
    Ok(out)
}

/// One selection on raw feature distances, done once before training. For
/// convex losses whose gradient differences are bounded by feature
/// distances this coreset serves every iterate.
pub fn convex_one_shot(
    data: &Dataset,
    fraction: f64,
    opts: SelectOptions,
    rng: &mut SeededRng,
) -> Result<Coreset> {
    let feats = data.features();
    per_class_select(
        data,
        |_, members| {
            let rows = members.iter().map(|&i| feats.row(i).to_vec()).collect();
            SelectionFeatures::new(members.to_vec(), rows, FeatureMode::RawFeature)
        },
        fraction,
        opts,
        rng,
    )
}
