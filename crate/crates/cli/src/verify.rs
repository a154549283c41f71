//! Brute-force property checks behind `adacore verify`.

use std::sync::Arc;
use std::time::Instant;

use adacore::coreset::{cover_check, greedy_select, FacilityLocation, GreedyMode, SelectionFeatures, Stopping};
use adacore::curvature::hutchinson_diag_probes;
use adacore::data::Dataset;
use adacore::models::{LogisticModel, Model};
use adacore::numerics::{Matrix, SeededRng, Vector};

/// Outcome of one property.
#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Test hook: corrupts one oracle input so the harness can prove it fails.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    /// Negates the analytic Hessian before it is compared.
    pub flip_hessian_sign: bool,
}

type Check = fn(Faults) -> Result<String, String>;

const PROPERTIES: &[(&str, Check)] = &[
    ("submodularity", submodularity),
    ("lazy_equals_naive", lazy_equals_naive),
    ("cover_guarantee", cover_guarantee),
    ("cover_bound", cover_bound),
    ("hutchinson_enumeration", hutchinson_enumeration),
    ("hessian_fd", hessian_fd),
];

pub fn run_all(faults: Faults) -> Vec<PropertyReport> {
    PROPERTIES
        .iter()
        .map(|&(name, check)| {
            let start = Instant::now();
            let result = check(faults);
            let seconds = start.elapsed().as_secs_f64();
            let (passed, detail) = match result {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            PropertyReport {
                name,
                passed,
                detail,
                seconds,
            }
        })
        .collect()
}

fn rows(rng: &mut SeededRng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()
}

fn submodularity(_: Faults) -> Result<String, String> {
    let mut rng = SeededRng::new(11);
    let mut chains = 0;
    for inst in 0..100 {
        let n = 2 + rng.below(9);
        let d = 1 + rng.below(4);
        let feats = SelectionFeatures::from_rows(rows(&mut rng, n, d)).unwrap();
        let fl = FacilityLocation::new(&feats, usize::MAX);
        for _ in 0..10 {
            let t: Vec<usize> = (0..n).filter(|_| rng.uniform() < 0.5).collect();
            let Some(e) = (0..n).find(|e| !t.contains(e)) else { continue };
            let s: Vec<usize> = t.iter().copied().filter(|_| rng.uniform() < 0.5).collect();
            let (gs, gt) = (fl.gain(e, &fl.coverage(&s)), fl.gain(e, &fl.coverage(&t)));
            if gs < gt || gt < 0.0 {
                return Err(format!("instance {inst}: F(e|S) = {gs} < F(e|T) = {gt}"));
            }
            chains += 1;
        }
    }
    Ok(format!("{chains} chains"))
}

fn lazy_equals_naive(_: Faults) -> Result<String, String> {
    let mut rng = SeededRng::new(12);
    for inst in 0..50 {
        let n = 3 + rng.below(40);
        let d = 1 + rng.below(4);
        let feats = SelectionFeatures::from_rows(rows(&mut rng, n, d)).unwrap();
        let budget = Stopping::Budget(rng.below(n + 1));
        let run = |mode| greedy_select(&feats, budget, mode, usize::MAX, &mut SeededRng::new(0)).unwrap();
        let (a, b) = (run(GreedyMode::Naive), run(GreedyMode::Lazy));
        if a.indices != b.indices || a.weights != b.weights {
            return Err(format!("instance {inst}: {:?} vs {:?}", a.indices, b.indices));
        }
    }
    Ok("50 instances".into())
}

fn cover_guarantee(_: Faults) -> Result<String, String> {
    let mut rng = SeededRng::new(13);
    for inst in 0..20 {
        let n = 4 + rng.below(7);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.below(21) as f64]).collect();
        let feats = SelectionFeatures::from_rows(pts).unwrap();
        let fl = FacilityLocation::new(&feats, usize::MAX);
        let eps = (fl.loss(&[]) * 0.25 * rng.uniform()).floor();
        let greedy = greedy_select(&feats, Stopping::Epsilon(eps), GreedyMode::Lazy, usize::MAX, &mut rng)
            .map_err(|e| e.to_string())?;
        let best = (0u32..1 << n)
            .filter(|m| fl.loss(&(0..n).filter(|j| m >> j & 1 == 1).collect::<Vec<_>>()) <= eps)
            .map(u32::count_ones)
            .min()
            .unwrap_or(0) as f64;
        let cov = fl.coverage(&[]);
        let top = (0..n).map(|e| fl.gain(e, &cov)).fold(0.0, f64::max);
        if greedy.len() as f64 > (1.0 + top.ln()) * best {
            return Err(format!("instance {inst}: greedy {} vs optimum {best}", greedy.len()));
        }
    }
    Ok("20 instances".into())
}

fn cover_bound(_: Faults) -> Result<String, String> {
    let mut rng = SeededRng::new(14);
    for inst in 0..50 {
        let n = 5 + rng.below(60);
        let d = 1 + rng.below(5);
        let feats = SelectionFeatures::from_rows(rows(&mut rng, n, d)).unwrap();
        let c = greedy_select(&feats, Stopping::Budget(1 + rng.below(n)), GreedyMode::Lazy, usize::MAX, &mut rng)
            .map_err(|e| e.to_string())?;
        if c.total_weight() != n as f64 {
            return Err(format!("instance {inst}: weights sum to {}", c.total_weight()));
        }
        let check = cover_check(&feats, &c).map_err(|e| e.to_string())?;
        if !check.holds() {
            return Err(format!(
                "instance {inst}: error {} > L(S) {}",
                check.weighted_sum_error, check.cover_loss
            ));
        }
    }
    Ok("50 instances".into())
}

fn hutchinson_enumeration(_: Faults) -> Result<String, String> {
    let mut rng = SeededRng::new(15);
    let mut worst: f64 = 0.0;
    for d in 1..=10 {
        let mut m = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let v = rng.normal();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let probes: Vec<Vector> = (0u32..1 << d)
            .map(|mask| (0..d).map(|j| if mask >> j & 1 == 1 { -1.0 } else { 1.0 }).collect())
            .collect();
        let est = hutchinson_diag_probes(|z| m.matvec(z), d, &probes).map_err(|e| e.to_string())?;
        for j in 0..d {
            worst = worst.max((est[j] - m[(j, j)]).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("max error {worst:e}"));
    }
    Ok(format!("max error {worst:.1e}"))
}

fn hessian_fd(faults: Faults) -> Result<String, String> {
    let mut rng = SeededRng::new(16);
    let mut worst: f64 = 0.0;
    for probe in 0..30 {
        let d = 1 + rng.below(10);
        let pts = rows(&mut rng, 4, d);
        let labels: Vec<usize> = (0..4).map(|i| i % 2).collect();
        let data = Arc::new(Dataset::new("probe", Matrix::from_rows(&pts).unwrap(), labels, 2).unwrap());
        let model = LogisticModel::new(data, if probe % 2 == 0 { 0.0 } else { 0.1 }).unwrap();
        let w: Vec<f64> = (0..model.dim()).map(|_| rng.normal()).collect();
        let mut h = model.hessian(&w, probe % 4).map_err(|e| e.to_string())?;
        if faults.flip_hessian_sign {
            h.scale(-1.0);
        }
        let step = 1e-5;
        for c in 0..model.dim() {
            let (mut plus, mut minus) = (w.clone(), w.clone());
            plus[c] += step;
            minus[c] -= step;
            let (gp, gm) = (model.grad_i(&plus, probe % 4), model.grad_i(&minus, probe % 4));
            for r in 0..model.dim() {
                worst = worst.max(((gp[r] - gm[r]) / (2.0 * step) - h[(r, c)]).abs());
            }
        }
    }
    if worst > 1e-5 {
        return Err(format!("max deviation {worst:e}"));
    }
    Ok(format!("max deviation {worst:.1e}"))
}
