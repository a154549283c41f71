//! Training runs on coresets refreshed every `R` epochs, with per-epoch
//! metrics and CSV output.

mod metrics;

pub use metrics::{forgetting_update, normalized_grad_diff, uncertainty, MetricsRecord, PerExampleStats};

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};

use crate::coreset::{
    convex_one_shot, cover_check, per_class_select_inspect, random_select, Coreset, CoverCheck, FeatureMode,
    GreedyMode, SelectOptions, DEFAULT_DENSE_THRESHOLD,
};
use crate::curvature::{selection_features, CurvatureSource, PreconditionerConfig, SelectionCurvature};
use crate::data::{generate_synthetic, load_libsvm, normalize_01, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::models::{mean_loss, LogisticModel, Model, RidgeModel, ToyMlp};
use crate::numerics::{SeededRng, Vector};
use crate::optim::{OptimizerKind, OptimizerState, Schedule};

#[derive(Clone, Debug)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Libsvm {
        train: PathBuf,
        /// Held-out file; when absent the training file is split.
        test: Option<PathBuf>,
        dim_hint: Option<usize>,
    },
    InMemory {
        train: Arc<Dataset>,
        test: Option<Arc<Dataset>>,
    },
}

#[derive(Clone, Debug)]
pub struct DataConfig {
    pub source: DataSource,
    /// Share held out for testing when the source has no test split. Zero
    /// disables testing.
    pub test_fraction: f64,
    /// Z-score features with training-split statistics.
    pub standardize: bool,
    /// Divide every feature by this value.
    pub divisor: Option<f64>,
}

impl DataConfig {
    /// Training and (optional) test splits.
    pub fn load(&self, seed: u64) -> Result<(Arc<Dataset>, Option<Arc<Dataset>>)> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config("data.test_fraction", "must lie in [0, 1)"));
        }
        let (mut train, mut test) = match &self.source {
            DataSource::InMemory { train, test } => {
                if !self.standardize && self.divisor.is_none() {
                    return Ok((train.clone(), test.clone()));
                }
                ((**train).clone(), test.as_ref().map(|t| (**t).clone()))
            }
            DataSource::Synthetic(spec) => self.maybe_split(generate_synthetic(spec)?, seed)?,
            DataSource::Libsvm { train, test, dim_hint } => {
                let tr = load_libsvm(train, *dim_hint)?;
                match test {
                    Some(p) => {
                        let te = load_libsvm(p, Some(tr.dim()).max(*dim_hint))?;
                        if te.dim() != tr.dim() {
                            return Err(Error::config(
                                "data.test",
                                format!("test features have {} columns, training {}", te.dim(), tr.dim()),
                            ));
                        }
                        (tr, Some(te))
                    }
                    None => self.maybe_split(tr, seed)?,
                }
            }
        };
        if let Some(div) = self.divisor {
            train = normalize_01(&train, div)?;
            test = test.map(|t| normalize_01(&t, div)).transpose()?;
        }
        if self.standardize {
            let stats = train.standardize();
            if let Some(t) = test.as_mut() {
                t.apply_standardization(&stats);
            }
        }
        Ok((Arc::new(train), test.map(Arc::new)))
    }

    fn maybe_split(&self, ds: Dataset, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
        if self.test_fraction == 0.0 {
            return Ok((ds, None));
        }
        let (tr, te) = ds.split(self.test_fraction, &mut SeededRng::new(seed))?;
        Ok((tr, Some(te)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelConfig {
    Logistic { mu: f64 },
    /// Regression onto ±1 class indicators.
    Ridge { lambda: f64 },
    Mlp { hidden: usize, weight_decay: f64 },
}

impl ModelConfig {
    pub fn build(&self, data: Arc<Dataset>) -> Result<Box<dyn Model>> {
        Ok(match *self {
            ModelConfig::Logistic { mu } => Box::new(LogisticModel::new(data, mu)?),
            ModelConfig::Ridge { lambda } => Box::new(RidgeModel::on_labels(data, lambda)?),
            ModelConfig::Mlp { hidden, weight_decay } => Box::new(ToyMlp::new(data, hidden, weight_decay)?),
        })
    }

    fn is_convex(&self) -> bool {
        !matches!(self, ModelConfig::Mlp { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Preconditioned-gradient selection.
    AdaCore,
    /// Gradient-only selection.
    CraigMode,
    Random,
    Full,
    /// Feature-distance selection once before training.
    ConvexOneShot,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::AdaCore => "adacore",
            Method::CraigMode => "craig_mode",
            Method::Random => "random",
            Method::Full => "full",
            Method::ConvexOneShot => "convex_one_shot",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        [
            Method::AdaCore,
            Method::CraigMode,
            Method::Random,
            Method::Full,
            Method::ConvexOneShot,
        ]
        .into_iter()
        .find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug)]
pub struct SelectionConfig {
    pub method: Method,
    /// Subset size as a fraction of each class.
    pub fraction: f64,
    /// Refresh period in epochs.
    pub refresh: usize,
    pub greedy: GreedyMode,
    pub dense_threshold: usize,
    pub precond: PreconditionerConfig,
    pub source: CurvatureSource,
    /// Replace the curvature estimate by ones (test hook).
    pub unit_preconditioner: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            method: Method::AdaCore,
            fraction: 0.1,
            refresh: 1,
            greedy: GreedyMode::Lazy,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
            precond: PreconditionerConfig::default(),
            source: CurvatureSource::SharedDiagonal,
            unit_preconditioner: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub schedule: Schedule,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub selection: SelectionConfig,
    pub epochs: usize,
    /// Mini-batch size; 0 means one batch holding the whole coreset.
    pub batch_size: usize,
    pub seed: u64,
    /// Record forgetting and entropy each epoch.
    pub track_examples: bool,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.selection;
        if !(s.fraction > 0.0 && s.fraction <= 1.0) {
            return Err(Error::config("selection.fraction", format!("{} not in (0, 1]", s.fraction)));
        }
        if s.refresh == 0 {
            return Err(Error::config("selection.refresh", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("run.epochs", "must be >= 1"));
        }
        s.precond.validate()?;
        self.optim.schedule.validate()?;
        if s.method == Method::ConvexOneShot && !self.model.is_convex() {
            return Err(Error::config(
                "selection.method",
                "convex_one_shot needs a convex model",
            ));
        }
        if !self.model.is_convex() {
            if self.optim.kind == OptimizerKind::Newton {
                return Err(Error::config("optim.kind", "newton needs a model with closed-form Hessians"));
            }
            if s.source != CurvatureSource::SharedDiagonal && s.method == Method::AdaCore {
                return Err(Error::config(
                    "selection.curvature",
                    "per-example and full Hessians need a convex model",
                ));
            }
        }
        Ok(())
    }
}

/// Both sides of the cover bound for one class at one refresh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundRecord {
    pub epoch: usize,
    pub class: usize,
    pub check: CoverCheck,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub metrics: Vec<MetricsRecord>,
    pub stats: PerExampleStats,
    /// `(epoch, coreset)` at every refresh.
    pub coresets: Vec<(usize, Coreset)>,
    pub bounds: Vec<BoundRecord>,
    pub final_w: Vector,
}

impl RunResult {
    pub fn final_loss(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.train_loss)
    }

    pub fn min_loss(&self) -> f64 {
        self.metrics.iter().map(|m| m.train_loss).fold(f64::INFINITY, f64::min)
    }

    /// Writes `metrics.csv`, `selection_counts.csv`, `per_example.csv` and
    /// one `coreset_epoch<k>.csv` per refresh into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let create = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        MetricsRecord::write_csv(&self.metrics, create("metrics.csv")?)?;
        self.stats.write_selection_counts(create("selection_counts.csv")?)?;
        self.stats.write_per_example(create("per_example.csv")?)?;
        for (epoch, c) in &self.coresets {
            c.write_csv(create(&format!("coreset_epoch{epoch}.csv"))?)?;
        }
        Ok(())
    }
}

/// Re-bases `loss_residual` of every run on the lowest training loss seen by
/// any of them.
pub fn set_loss_reference(runs: &mut [RunResult]) {
    let best = runs.iter().map(RunResult::min_loss).fold(f64::INFINITY, f64::min);
    for r in runs {
        for m in &mut r.metrics {
            m.loss_residual = m.train_loss - best;
        }
    }
}

struct Selector {
    cfg: SelectionConfig,
    curvature: Option<SelectionCurvature>,
}

impl Selector {
    fn new(cfg: &SelectionConfig) -> Result<Self> {
        let curvature = match cfg.method {
            Method::AdaCore => {
                let mut c = SelectionCurvature::new(cfg.precond.clone(), cfg.source)?;
                c.unit_preconditioner = cfg.unit_preconditioner;
                Some(c)
            }
            _ => None,
        };
        Ok(Selector {
            cfg: cfg.clone(),
            curvature,
        })
    }

    fn select(
        &mut self,
        model: &dyn Model,
        data: &Dataset,
        w: &[f64],
        epoch: usize,
        rng: &mut SeededRng,
        bounds: &mut Vec<BoundRecord>,
    ) -> Result<Coreset> {
        let opts = SelectOptions {
            mode: self.cfg.greedy,
            dense_threshold: self.cfg.dense_threshold,
        };
        let fraction = self.cfg.fraction;
        let mode = match self.cfg.method {
            Method::Full => return Ok(Coreset::full(data.labels())),
            Method::Random => return random_select(data, fraction, rng),
            Method::ConvexOneShot => return convex_one_shot(data, fraction, opts, rng),
            Method::AdaCore => FeatureMode::Preconditioned,
            Method::CraigMode => FeatureMode::GradientOnly,
        };
        if let Some(c) = self.curvature.as_mut() {
            c.refresh(model, w, rng)?;
        }
        let curv = self.curvature.as_ref();
        per_class_select_inspect(
            data,
            |_, members| selection_features(model, data.features(), w, curv, mode, members),
            fraction,
            opts,
            rng,
            |feats, c| {
                bounds.push(BoundRecord {
                    epoch,
                    class: feats.class,
                    check: cover_check(feats, c)?,
                });
                Ok(())
            },
        )
    }
}

/// Runs one experiment. Selection happens at the start of every epoch that
/// is a multiple of the refresh period (only epoch 0 for the one-shot and
/// full methods).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let mut master = SeededRng::new(cfg.seed);
    let mut init_rng = master.fork(1);
    let mut select_rng = master.fork(2);
    let mut batch_rng = master.fork(3);
    let mut optim_rng = master.fork(4);

    let (train, test) = cfg.data.load(cfg.seed)?;
    let model = cfg.model.build(train.clone())?;
    let test_model = test.clone().map(|t| cfg.model.build(t)).transpose()?;
    let n = train.len();

    let w0 = model.init_params(&mut init_rng);
    let mut opt = OptimizerState::new(w0, cfg.optim.kind.clone(), cfg.optim.schedule.clone())?;
    let mut selector = Selector::new(&cfg.selection)?;
    let refresh_every = match cfg.selection.method {
        Method::Full | Method::ConvexOneShot => usize::MAX,
        _ => cfg.selection.refresh,
    };

    let mut stats = PerExampleStats::new(n);
    let mut coresets: Vec<(usize, Coreset)> = Vec::new();
    let mut bounds = Vec::new();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut current = Coreset::default();
    let mut seconds = 0.0;
    let mut selection_seconds = 0.0;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        if epoch == 0 || epoch % refresh_every == 0 {
            current = selector.select(model.as_ref(), &train, &opt.w, epoch, &mut select_rng, &mut bounds)?;
            stats.record_selection(&current);
            coresets.push((epoch, current.clone()));
            selection_seconds += start.elapsed().as_secs_f64();
            debug!("epoch {epoch}: selected {} of {n}", current.len());
        }
        seconds += start.elapsed().as_secs_f64();
        // Gradient error of the coreset at the iterate it is first applied
        // to (the selection point on refresh epochs). Not timed.
        let (grad_diff, grad_vanished) = normalized_grad_diff(model.as_ref(), &opt.w, &current)?;

        let start = Instant::now();
        let mut order = current.weighted();
        batch_rng.shuffle(&mut order);
        let bs = if cfg.batch_size == 0 { order.len() } else { cfg.batch_size };
        for batch in order.chunks(bs) {
            opt.step(model.as_ref(), batch, epoch, &mut optim_rng)?;
        }
        seconds += start.elapsed().as_secs_f64();

        let w = opt.w.as_slice();
        let train_loss = mean_loss(model.as_ref(), w);
        if !train_loss.is_finite() {
            return Err(Error::State(format!("training loss diverged at epoch {epoch}")));
        }
        let test_acc = match (&test_model, &test) {
            (Some(tm), Some(t)) => accuracy(tm.as_ref(), w, t.labels()),
            _ => f64::NAN,
        };
        if cfg.track_examples {
            let preds: Vec<Vector> = (0..n).map(|i| model.predict_proba_i(w, i)).collect();
            let labels: Vec<usize> = preds.iter().map(|p| crate::models::argmax(p)).collect();
            forgetting_update(&mut stats, &labels, train.labels())?;
            stats.entropy = uncertainty(&preds)?;
        }
        metrics.push(MetricsRecord {
            epoch,
            seconds,
            selection_seconds,
            train_loss,
            loss_residual: 0.0,
            test_acc,
            grad_diff,
            grad_vanished,
            distinct_frac: stats.distinct_selected() as f64 / n as f64,
        });
    }

    let mut result = RunResult {
        metrics,
        stats,
        coresets,
        bounds,
        final_w: opt.w,
    };
    set_loss_reference(std::slice::from_mut(&mut result));
    info!(
        "{}: final loss {:.6} after {} epochs ({:.3}s)",
        cfg.selection.method.name(),
        result.final_loss(),
        cfg.epochs,
        seconds
    );
    if let Some(dir) = &cfg.output_dir {
        result.write_outputs(dir)?;
    }
    Ok(result)
}

/// One selection at the model's initial parameters, exactly as the first
/// epoch of [`run_experiment`] would make it.
pub fn select_once(cfg: &ExperimentConfig) -> Result<Coreset> {
    cfg.validate()?;
    let mut master = SeededRng::new(cfg.seed);
    let mut init_rng = master.fork(1);
    let mut select_rng = master.fork(2);
    let (train, _) = cfg.data.load(cfg.seed)?;
    let model = cfg.model.build(train.clone())?;
    let w0 = model.init_params(&mut init_rng);
    Selector::new(&cfg.selection)?.select(model.as_ref(), &train, &w0, 0, &mut select_rng, &mut Vec::new())
}

/// Share of examples whose most probable class is `labels[i]`.
pub fn accuracy(model: &dyn Model, w: &[f64], labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| model.predict_i(w, i) == y)
        .count();
    correct as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(method: Method) -> ExperimentConfig {
        ExperimentConfig {
            data: DataConfig {
                source: DataSource::Synthetic(SyntheticSpec::imbalanced_binary(400, 3)),
                test_fraction: 0.25,
                standardize: false,
                divisor: None,
            },
            model: ModelConfig::Logistic { mu: 1e-3 },
            optim: OptimConfig {
                kind: OptimizerKind::Sgd { momentum: 0.9 },
                schedule: Schedule::Constant(0.1),
            },
            selection: SelectionConfig {
                method,
                fraction: 0.2,
                ..Default::default()
            },
            epochs: 4,
            batch_size: 16,
            seed: 9,
            track_examples: true,
            output_dir: None,
        }
    }

    fn comparable(r: &RunResult) -> Vec<(f64, f64, f64, f64)> {
        r.metrics
            .iter()
            .map(|m| (m.train_loss, m.test_acc, m.grad_diff, m.distinct_frac))
            .collect()
    }

    #[test]
    fn full_training_has_no_gradient_error() {
        let r = run_experiment(&base(Method::Full)).unwrap();
        assert_eq!(r.metrics.len(), 4);
        assert!(r.metrics.iter().all(|m| m.grad_diff < 1e-12));
        assert_eq!(r.coresets.len(), 1);
        assert!(r.metrics.iter().all(|m| m.distinct_frac == 1.0));
    }

    #[test]
    fn seeded_runs_repeat() {
        let a = run_experiment(&base(Method::Random)).unwrap();
        let b = run_experiment(&base(Method::Random)).unwrap();
        assert_eq!(comparable(&a), comparable(&b));
        let c = run_experiment(&base(Method::AdaCore)).unwrap();
        let d = run_experiment(&base(Method::AdaCore)).unwrap();
        assert_eq!(comparable(&c), comparable(&d));
        assert_eq!(c.final_w, d.final_w);
    }

    #[test]
    fn unit_preconditioner_reproduces_gradient_only_selection() {
        let mut ada = base(Method::AdaCore);
        ada.selection.unit_preconditioner = true;
        ada.selection.precond.beta1 = 0.0;
        ada.selection.precond.hessian_power = 0.0;
        let craig = base(Method::CraigMode);
        let a = run_experiment(&ada).unwrap();
        let b = run_experiment(&craig).unwrap();
        for ((ea, ca), (eb, cb)) in a.coresets.iter().zip(&b.coresets) {
            assert_eq!(ea, eb);
            assert_eq!(ca.indices, cb.indices);
            assert_eq!(ca.weights, cb.weights);
        }
    }

    #[test]
    fn select_once_matches_first_refresh() {
        for method in [Method::AdaCore, Method::Random, Method::CraigMode] {
            let cfg = base(method);
            let run = run_experiment(&cfg).unwrap();
            let (once, first) = (select_once(&cfg).unwrap(), &run.coresets[0].1);
            assert_eq!((&once.indices, &once.weights), (&first.indices, &first.weights));
            assert_eq!(once.residual.to_bits(), first.residual.to_bits());
        }
    }

    #[test]
    fn refresh_schedule_and_bounds() {
        let mut cfg = base(Method::AdaCore);
        cfg.selection.refresh = 2;
        let r = run_experiment(&cfg).unwrap();
        let epochs: Vec<usize> = r.coresets.iter().map(|c| c.0).collect();
        assert_eq!(epochs, vec![0, 2]);
        assert_eq!(r.bounds.len(), 4);
        assert!(r.bounds.iter().all(|b| b.check.holds()));
        assert!(r.metrics.windows(2).all(|m| m[0].distinct_frac <= m[1].distinct_frac));
        for (_, c) in &r.coresets {
            assert_eq!(c.total_weight(), 300.0);
        }
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let mut cfg = base(Method::AdaCore);
        cfg.selection.fraction = 1.5;
        match run_experiment(&cfg).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "selection.fraction"),
            e => panic!("{e}"),
        }
        let mut cfg = base(Method::ConvexOneShot);
        cfg.model = ModelConfig::Mlp {
            hidden: 4,
            weight_decay: 0.0,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn outputs_land_in_the_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base(Method::AdaCore);
        cfg.output_dir = Some(dir.path().to_path_buf());
        cfg.selection.refresh = 3;
        run_experiment(&cfg).unwrap();
        for f in ["metrics.csv", "selection_counts.csv", "per_example.csv", "coreset_epoch0.csv", "coreset_epoch3.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().count(), 5);
    }
}
