//! Randomized invariants across modules.

use std::sync::Arc;

use adacore::coreset::{
    class_budgets, cover_check, greedy_select, FacilityLocation, GreedyMode, SelectionFeatures, Stopping,
};
use adacore::curvature::{hutchinson_diag_probes, precondition, EmaState};
use adacore::data::{parse_libsvm, write_libsvm, Dataset};
use adacore::models::{full_grad, weighted_grad, weighted_hessian, LogisticModel, Model, RidgeModel, ToyMlp};
use adacore::numerics::{deterministic_sum, largest_remainder, rademacher, Matrix, SeededRng, Vector};
use adacore::optim::Schedule;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn rows_strategy(max_n: usize, max_d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_d).prop_flat_map(move |d| prop::collection::vec(prop::collection::vec(-5.0..5.0f64, d), 1..=max_n))
}

fn labelled(rows: &[Vec<f64>], labels: Vec<usize>, classes: usize) -> Arc<Dataset> {
    Arc::new(Dataset::new("p", Matrix::from_rows(rows).unwrap(), labels, classes).unwrap())
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn fd_grad(f: impl Fn(&[f64]) -> f64, w: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..w.len())
        .map(|j| {
            let (mut p, mut m) = (w.to_vec(), w.to_vec());
            p[j] += h;
            m[j] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diminishing_returns(rows in rows_strategy(10, 4), picks in prop::collection::vec(any::<bool>(), 10), e_seed in any::<u64>()) {
        let n = rows.len();
        let feats = SelectionFeatures::from_rows(rows).unwrap();
        let fl = FacilityLocation::new(&feats, usize::MAX);
        let t: Vec<usize> = (0..n).filter(|&j| picks[j]).collect();
        let s: Vec<usize> = t.iter().copied().step_by(2).collect();
        let outside: Vec<usize> = (0..n).filter(|j| !t.contains(j)).collect();
        prop_assume!(!outside.is_empty());
        let e = outside[(e_seed % outside.len() as u64) as usize];
        let gs = fl.gain(e, &fl.coverage(&s));
        let gt = fl.gain(e, &fl.coverage(&t));
        prop_assert!(gs >= gt);
        prop_assert!(gt >= 0.0);
        let (ls, lt) = (fl.loss(&s), fl.loss(&t));
        prop_assert!(lt <= ls + 1e-9 * (1.0 + ls));
    }

    #[test]
    fn lazy_matches_naive_and_weights_conserve(rows in rows_strategy(40, 5), frac in 0.0..1.0f64) {
        let n = rows.len();
        let feats = SelectionFeatures::from_rows(rows).unwrap();
        let budget = ((n as f64 * frac) as usize).min(n);
        let run = |mode| greedy_select(&feats, Stopping::Budget(budget), mode, usize::MAX, &mut SeededRng::new(0)).unwrap();
        let (naive, lazy) = (run(GreedyMode::Naive), run(GreedyMode::Lazy));
        prop_assert_eq!(&naive.indices, &lazy.indices);
        prop_assert_eq!(&naive.weights, &lazy.weights);
        prop_assert!(lazy.len() <= budget);
        if !lazy.is_empty() {
            prop_assert_eq!(lazy.total_weight(), n as f64);
            prop_assert!(lazy.weights.iter().all(|&w| w >= 1.0 && w.fract() == 0.0));
            let check = cover_check(&feats, &lazy).unwrap();
            prop_assert!(check.holds(), "{:?}", check);
            prop_assert_eq!(check.cover_loss, lazy.residual);
        }
    }

    #[test]
    fn dense_and_streamed_distances_agree(rows in rows_strategy(30, 4), budget_frac in 0.1..1.0f64) {
        let n = rows.len();
        let feats = SelectionFeatures::from_rows(rows).unwrap();
        let b = ((n as f64 * budget_frac).ceil() as usize).min(n);
        let dense = greedy_select(&feats, Stopping::Budget(b), GreedyMode::Lazy, usize::MAX, &mut SeededRng::new(0)).unwrap();
        let streamed = greedy_select(&feats, Stopping::Budget(b), GreedyMode::Lazy, 0, &mut SeededRng::new(0)).unwrap();
        // The two phantom distances differ, which can only reorder near-ties
        // in the first pick; both runs must still give valid coresets.
        for c in [&dense, &streamed] {
            prop_assert_eq!(c.len(), b);
            prop_assert_eq!(c.total_weight(), n as f64);
            prop_assert!(cover_check(&feats, c).unwrap().holds());
        }
    }

    #[test]
    fn epsilon_stopping_meets_the_target(rows in rows_strategy(30, 3), frac in 0.0..0.5f64) {
        let feats = SelectionFeatures::from_rows(rows).unwrap();
        let fl = FacilityLocation::new(&feats, usize::MAX);
        let eps = fl.loss(&[]) * frac;
        let c = greedy_select(&feats, Stopping::Epsilon(eps), GreedyMode::Lazy, usize::MAX, &mut SeededRng::new(0)).unwrap();
        prop_assert!(c.residual <= eps || c.residual == 0.0);
    }

    #[test]
    fn budgets_are_proportional_and_bounded(sizes in prop::collection::vec(0usize..500, 1..6), frac in 0.001..=1.0f64) {
        prop_assume!(sizes.iter().any(|&s| s > 0));
        let b = class_budgets(&sizes, frac).unwrap();
        for (&bi, &si) in b.iter().zip(&sizes) {
            if si == 0 { prop_assert_eq!(bi, 0); } else { prop_assert!(bi >= 1 && bi <= si); }
        }
    }

    #[test]
    fn largest_remainder_hits_the_total(quotas in prop::collection::vec(0.0..50.0f64, 1..8)) {
        let total = quotas.iter().sum::<f64>().round() as usize;
        let shares = largest_remainder(&quotas, total);
        prop_assert_eq!(shares.iter().sum::<usize>(), total);
        for (s, q) in shares.iter().zip(&quotas) {
            prop_assert!((*s as f64 - q).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn rademacher_draws_are_signs(seed in any::<u64>(), d in 1usize..200) {
        let z = rademacher(&mut SeededRng::new(seed), d).unwrap();
        prop_assert_eq!(z.len(), d);
        prop_assert!(z.iter().all(|&v| v == 1.0 || v == -1.0));
        prop_assert_eq!(z, rademacher(&mut SeededRng::new(seed), d).unwrap());
    }

    #[test]
    fn deterministic_sum_matches_left_fold(rows in rows_strategy(20, 5)) {
        let d = rows[0].len();
        let s = deterministic_sum(rows.iter().map(|r| r.as_slice()), d).unwrap();
        for j in 0..d {
            let fold = rows.iter().fold(0.0, |a, r| a + r[j]);
            prop_assert_eq!(s[j].to_bits(), fold.to_bits());
        }
    }

    #[test]
    fn ema_of_a_constant_stream_is_that_constant(g in prop::collection::vec(-10.0..10.0f64, 1..6), steps in 1u32..30, b1 in 0.0..0.99f64, b2 in 0.0..0.999f64) {
        let mut ema = EmaState::new(b1, b2).unwrap();
        let h: Vec<f64> = g.iter().map(|v| v.abs() + 0.5).collect();
        for _ in 0..steps {
            ema.update_grad(&g).unwrap();
            ema.update_hess(&h).unwrap();
        }
        for (a, b) in ema.g_bar().unwrap().iter().zip(&g) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        for (a, b) in ema.h_bar().unwrap().iter().zip(&h) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_power_preconditioning_is_identity(g in prop::collection::vec(-10.0..10.0f64, 1..8), seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let h: Vec<f64> = g.iter().map(|_| rng.uniform() * 5.0).collect();
        let out = precondition(&g, &h, 0.0, 1e-12).unwrap();
        prop_assert_eq!(out.as_slice(), g.as_slice());
    }

    #[test]
    fn hutchinson_enumeration_recovers_the_diagonal(seed in any::<u64>(), d in 1usize..=8) {
        let mut rng = SeededRng::new(seed);
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
        let est = hutchinson_diag_probes(|z| m.matvec(z), d, &probes).unwrap();
        let oracle = to_na(&m).diagonal();
        for j in 0..d {
            prop_assert!((est[j] - oracle[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn logistic_hessian_is_mu_strongly_convex(rows in rows_strategy(12, 5), mu in 0.0..1.0f64, seed in any::<u64>()) {
        let n = rows.len();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        prop_assume!(n >= 2);
        let model = LogisticModel::new(labelled(&rows, labels, 2), mu).unwrap();
        let mut rng = SeededRng::new(seed);
        let w: Vec<f64> = (0..model.dim()).map(|_| rng.normal()).collect();
        let all: Vec<(usize, f64)> = (0..n).map(|i| (i, 1.0)).collect();
        let h = weighted_hessian(&model, &w, &all).unwrap();
        prop_assert!(h.is_symmetric(0.0));
        let full = to_na(&h);
        prop_assert!(full.clone().symmetric_eigenvalues().min() >= -1e-10);
        // The intercept is not regularized, so strong convexity holds on the
        // weight block.
        let d = model.dim() - 1;
        let block = full.view((0, 0), (d, d)).into_owned().symmetric_eigenvalues();
        prop_assert!(block.min() >= mu - 1e-10, "min eigenvalue {} < {}", block.min(), mu);
    }

    #[test]
    fn cholesky_agrees_with_reference_solver(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = SeededRng::new(seed);
        let mut a = Matrix::identity(d);
        for _ in 0..d {
            let u: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            a.add_outer(1.0, &u);
        }
        let b: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let x = a.cholesky_solve(&b).unwrap();
        let oracle = to_na(&a).lu().solve(&DVector::from_vec(b)).unwrap();
        for j in 0..d {
            prop_assert!((x[j] - oracle[j]).abs() <= 1e-9 * (1.0 + oracle[j].abs()));
        }
    }

    #[test]
    fn integer_weights_equal_repeated_examples(rows in rows_strategy(10, 4), reps in prop::collection::vec(1usize..4, 10), seed in any::<u64>()) {
        let n = rows.len();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        prop_assume!(n >= 2);
        let model = LogisticModel::new(labelled(&rows, labels, 2), 0.1).unwrap();
        let mut rng = SeededRng::new(seed);
        let w: Vec<f64> = (0..model.dim()).map(|_| rng.normal()).collect();
        let weighted: Vec<(usize, f64)> = (0..n).map(|i| (i, reps[i] as f64)).collect();
        let repeated: Vec<(usize, f64)> = (0..n).flat_map(|i| std::iter::repeat((i, 1.0)).take(reps[i])).collect();
        let a = weighted_grad(&model, &w, &weighted).unwrap();
        let b = weighted_grad(&model, &w, &repeated).unwrap();
        for j in 0..model.dim() {
            prop_assert!((a[j] - b[j]).abs() <= 1e-12 * (1.0 + a[j].abs()));
        }
        let unit: Vec<(usize, f64)> = (0..n).map(|i| (i, 1.0)).collect();
        prop_assert_eq!(weighted_grad(&model, &w, &unit).unwrap(), full_grad(&model, &w));
    }

    #[test]
    fn gradients_match_finite_differences(rows in rows_strategy(6, 4), seed in any::<u64>()) {
        let n = rows.len();
        prop_assume!(n >= 3);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let data = labelled(&rows, labels, 3);
        let mut rng = SeededRng::new(seed);
        let models: Vec<Box<dyn Model>> = vec![
            Box::new(LogisticModel::new(labelled(&rows, (0..n).map(|i| i % 2).collect(), 2), 0.1).unwrap()),
            Box::new(RidgeModel::on_labels(data.clone(), 0.1).unwrap()),
            Box::new(ToyMlp::new(data, 3, 0.01).unwrap()),
        ];
        for model in &models {
            let w: Vec<f64> = (0..model.dim()).map(|_| 0.5 * rng.normal()).collect();
            let i = rng.below(n);
            let fd = fd_grad(|v| model.loss_i(v, i), &w);
            let g = model.grad_i(&w, i);
            for j in 0..model.dim() {
                prop_assert!((fd[j] - g[j]).abs() <= 1e-5 * (1.0 + g[j].abs()), "coordinate {} of {}", j, model.dim());
            }
        }
    }

    #[test]
    fn libsvm_round_trip(rows in rows_strategy(15, 5), classes in 2usize..4) {
        let n = rows.len();
        prop_assume!(n >= classes);
        let d = rows[0].len();
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let ds = labelled(&rows, labels, classes);
        let mut buf = Vec::new();
        write_libsvm(&ds, &mut buf).unwrap();
        let back = parse_libsvm(std::str::from_utf8(&buf).unwrap(), Some(d), "rt").unwrap();
        prop_assert_eq!(back.labels(), ds.labels());
        prop_assert_eq!(back.features().as_slice(), ds.features().as_slice());
    }

    #[test]
    fn class_index_partitions_examples(labels in prop::collection::vec(0usize..4, 1..40)) {
        let n = labels.len();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let ds = labelled(&rows, labels.clone(), 4);
        let mut seen = vec![false; n];
        for (c, members) in ds.class_index().iter().enumerate() {
            prop_assert!(members.windows(2).all(|p| p[0] < p[1]));
            for &i in members {
                prop_assert_eq!(labels[i], c);
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn schedules_stay_positive(base in 1e-4..10.0f64, rate in 0.01..1.0f64, warm in 1usize..20, epoch in 0usize..500) {
        let s = Schedule::Warmup { epochs: warm, inner: Box::new(Schedule::ExpDecay { base, rate }) };
        s.validate().unwrap();
        let r = s.rate(epoch);
        prop_assert!(r > 0.0 || base * rate.powi(epoch as i32) == 0.0);
        prop_assert!(r <= base);
    }
}
