//! TOML run configuration, `--set` overrides and conversion into the
//! library's experiment types.

use std::path::{Path, PathBuf};

use adacore::coreset::{GreedyMode, DEFAULT_DENSE_THRESHOLD};
use adacore::curvature::{CurvatureSource, PreconditionerConfig};
use adacore::data::SyntheticSpec;
use adacore::harness::{DataConfig, DataSource, ExperimentConfig, Method, ModelConfig, OptimConfig, SelectionConfig};
use adacore::numerics::SeededRng;
use adacore::optim::{OptimizerKind, Schedule};
use serde::Deserialize;
use toml::{Table, Value};

/// A configuration problem; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn bad(field: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("configuration error in `{field}`: {msg}"))
}

/// Every accepted key, by section. Bare `--set key=value` overrides are
/// resolved against this table.
pub const KEYS: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "source",
            "preset",
            "n",
            "d",
            "classes",
            "separation",
            "seed",
            "train",
            "test",
            "dim",
            "test_fraction",
            "standardize",
            "divisor",
            "cache_dir",
        ],
    ),
    ("model", &["kind", "mu", "lambda", "hidden", "weight_decay"]),
    (
        "optim",
        &[
            "kind",
            "lr",
            "schedule",
            "decay",
            "milestones",
            "factor",
            "warmup",
            "momentum",
            "hessian_power",
            "beta1",
            "beta2",
            "hutchinson_samples",
        ],
    ),
    (
        "selection",
        &["method", "fraction", "refresh", "greedy", "sample_size", "dense_threshold", "curvature"],
    ),
    (
        "precond",
        &["delta_floor", "hessian_batch", "hutchinson_samples", "hessian_power", "beta1", "beta2"],
    ),
    ("run", &["epochs", "batch_size", "seed", "track_examples"]),
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub precond: PrecondSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `synthetic` or `libsvm`.
    pub source: String,
    /// Synthetic generator: `imbalanced_binary` or `blobs`.
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Feature count for `blobs`.
    #[serde(default = "default_d")]
    pub d: usize,
    /// Class count for `blobs`; classes have equal shares.
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Spread of the `blobs` class means relative to unit noise.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Generator seed for synthetic data.
    #[serde(default)]
    pub seed: u64,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub dim: Option<usize>,
    #[serde(default)]
    pub test_fraction: f64,
    #[serde(default)]
    pub standardize: bool,
    pub divisor: Option<f64>,
    /// Where `synth` writes generated files.
    pub cache_dir: Option<PathBuf>,
}

fn default_preset() -> String {
    "imbalanced_binary".into()
}
fn default_n() -> usize {
    5000
}
fn default_d() -> usize {
    8
}
fn default_classes() -> usize {
    3
}
fn default_separation() -> f64 {
    2.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `logistic`, `ridge` or `mlp`.
    pub kind: String,
    pub mu: f64,
    pub lambda: f64,
    pub hidden: usize,
    pub weight_decay: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: "logistic".into(),
            mu: 1e-3,
            lambda: 1e-2,
            hidden: 16,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    /// `sgd`, `newton` or `diag_newton`.
    pub kind: String,
    pub lr: f64,
    /// `constant`, `exp` or `step`.
    pub schedule: String,
    pub decay: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
    /// Linear warm-up epochs; 0 disables.
    pub warmup: usize,
    pub momentum: f64,
    pub hessian_power: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub hutchinson_samples: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection {
            kind: "sgd".into(),
            lr: 0.1,
            schedule: "constant".into(),
            decay: 0.9,
            milestones: Vec::new(),
            factor: 0.1,
            warmup: 0,
            momentum: 0.9,
            hessian_power: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            hutchinson_samples: 1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub method: String,
    pub fraction: f64,
    pub refresh: usize,
    /// `lazy`, `naive` or `stochastic`.
    pub greedy: String,
    pub sample_size: Option<usize>,
    pub dense_threshold: usize,
    /// `shared`, `per_example` or `full_hessian`.
    pub curvature: String,
}

impl Default for SelectionSection {
    fn default() -> Self {
        SelectionSection {
            method: "adacore".into(),
            fraction: 0.1,
            refresh: 1,
            greedy: "lazy".into(),
            sample_size: None,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
            curvature: "shared".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrecondSection {
    pub delta_floor: f64,
    pub hessian_batch: usize,
    pub hutchinson_samples: usize,
    pub hessian_power: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for PrecondSection {
    fn default() -> Self {
        let p = PreconditionerConfig::default();
        PrecondSection {
            delta_floor: p.delta_floor,
            hessian_batch: p.hessian_batch,
            hutchinson_samples: p.hutchinson_samples,
            hessian_power: p.hessian_power,
            beta1: p.beta1,
            beta2: p.beta2,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub epochs: usize,
    /// 0 trains on the whole coreset as one batch.
    pub batch_size: usize,
    pub seed: u64,
    pub track_examples: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            epochs: 10,
            batch_size: 32,
            seed: 0,
            track_examples: false,
        }
    }
}

/// Parses a `--set` value as a TOML value, falling back to a plain string
/// so `method=random` works without quotes.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Resolves `section.key` or a bare `key` that names exactly one field.
fn resolve_key(key: &str) -> Result<(String, String), ConfigError> {
    if let Some((section, field)) = key.split_once('.') {
        let known = KEYS.iter().find(|(s, _)| *s == section);
        return match known {
            Some((_, fields)) if fields.contains(&field) => Ok((section.into(), field.into())),
            Some(_) => Err(bad(key, "unknown key")),
            None => Err(bad(key, "unknown section")),
        };
    }
    let owners: Vec<&str> = KEYS.iter().filter(|(_, f)| f.contains(&key)).map(|(s, _)| *s).collect();
    match owners.as_slice() {
        [one] => Ok((one.to_string(), key.to_string())),
        [] => Err(bad(key, "unknown key")),
        many => Err(bad(key, format!("ambiguous; qualify with one of {many:?}"))),
    }
}

/// Applies `key=value` overrides to a parsed table.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<(), ConfigError> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("override `{item}` is not key=value")))?;
        let (section, field) = resolve_key(key.trim())?;
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(sec) = entry else {
            return Err(bad(&section, "is not a table"));
        };
        sec.insert(field, parse_value(raw.trim()));
    }
    Ok(())
}

/// Reads, overrides and type-checks a configuration file.
pub fn load(path: &Path, overrides: &[String]) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, overrides)
}

pub fn parse(text: &str, overrides: &[String]) -> Result<FileConfig, ConfigError> {
    let mut table: Table = text.parse().map_err(|e| ConfigError(format!("invalid config: {e}")))?;
    apply_overrides(&mut table, overrides)?;
    table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError(format!("invalid config: {}", e.message())))
}

impl DataSection {
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec, ConfigError> {
        match self.preset.as_str() {
            "imbalanced_binary" => Ok(SyntheticSpec::imbalanced_binary(self.n, self.seed)),
            "blobs" => {
                if self.classes < 2 {
                    return Err(bad("data.classes", "must be >= 2"));
                }
                let mut rng = SeededRng::new(self.seed ^ 0xb10b);
                let means = (0..self.classes)
                    .map(|_| (0..self.d).map(|_| self.separation * rng.normal()).collect())
                    .collect();
                Ok(SyntheticSpec {
                    n: self.n,
                    d: self.d,
                    class_fractions: vec![1.0 / self.classes as f64; self.classes],
                    cluster_means: means,
                    cluster_scales: vec![vec![1.0; self.d]; self.classes],
                    seed: self.seed,
                })
            }
            other => Err(bad("data.preset", format!("unknown preset `{other}`"))),
        }
    }

    /// File stem used by `synth` for this synthetic dataset.
    pub fn cache_stem(&self) -> String {
        match self.preset.as_str() {
            "blobs" => format!(
                "blobs_n{}_d{}_c{}_sep{}_s{}",
                self.n, self.d, self.classes, self.separation, self.seed
            ),
            p => format!("{p}_n{}_s{}", self.n, self.seed),
        }
    }

    fn to_config(&self) -> Result<DataConfig, ConfigError> {
        let source = match self.source.as_str() {
            "synthetic" => DataSource::Synthetic(self.synthetic_spec()?),
            "libsvm" => DataSource::Libsvm {
                train: self
                    .train
                    .clone()
                    .ok_or_else(|| bad("data.train", "required for libsvm data"))?,
                test: self.test.clone(),
                dim_hint: self.dim,
            },
            other => return Err(bad("data.source", format!("unknown source `{other}`"))),
        };
        Ok(DataConfig {
            source,
            test_fraction: self.test_fraction,
            standardize: self.standardize,
            divisor: self.divisor,
        })
    }
}

impl FileConfig {
    /// The library configuration; `output_dir` is filled in by the caller.
    pub fn to_experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let m = &self.model;
        let model = match m.kind.as_str() {
            "logistic" => ModelConfig::Logistic { mu: m.mu },
            "ridge" => ModelConfig::Ridge { lambda: m.lambda },
            "mlp" => ModelConfig::Mlp {
                hidden: m.hidden,
                weight_decay: m.weight_decay,
            },
            other => return Err(bad("model.kind", format!("unknown model `{other}`"))),
        };

        let o = &self.optim;
        let kind = match o.kind.as_str() {
            "sgd" => OptimizerKind::Sgd { momentum: o.momentum },
            "newton" => OptimizerKind::Newton,
            "diag_newton" => OptimizerKind::DiagNewton {
                hessian_power: o.hessian_power,
                beta1: o.beta1,
                beta2: o.beta2,
                hutchinson_samples: o.hutchinson_samples,
            },
            other => return Err(bad("optim.kind", format!("unknown optimizer `{other}`"))),
        };
        let base = match o.schedule.as_str() {
            "constant" => Schedule::Constant(o.lr),
            "exp" => Schedule::ExpDecay {
                base: o.lr,
                rate: o.decay,
            },
            "step" => Schedule::StepDecay {
                base: o.lr,
                milestones: o.milestones.clone(),
                factor: o.factor,
            },
            other => return Err(bad("optim.schedule", format!("unknown schedule `{other}`"))),
        };
        let schedule = if o.warmup > 0 {
            Schedule::Warmup {
                epochs: o.warmup,
                inner: Box::new(base),
            }
        } else {
            base
        };

        let s = &self.selection;
        let method =
            Method::parse(&s.method).ok_or_else(|| bad("selection.method", format!("unknown method `{}`", s.method)))?;
        let greedy = match s.greedy.as_str() {
            "lazy" => GreedyMode::Lazy,
            "naive" => GreedyMode::Naive,
            "stochastic" => GreedyMode::Stochastic {
                sample_size: s.sample_size,
            },
            other => return Err(bad("selection.greedy", format!("unknown greedy mode `{other}`"))),
        };
        let source = match s.curvature.as_str() {
            "shared" => CurvatureSource::SharedDiagonal,
            "per_example" => CurvatureSource::PerExampleDiagonal,
            "full_hessian" => CurvatureSource::FullHessian,
            other => return Err(bad("selection.curvature", format!("unknown curvature source `{other}`"))),
        };
        let p = &self.precond;
        let selection = SelectionConfig {
            method,
            fraction: s.fraction,
            refresh: s.refresh,
            greedy,
            dense_threshold: s.dense_threshold,
            precond: PreconditionerConfig {
                delta_floor: p.delta_floor,
                hessian_batch: p.hessian_batch,
                hutchinson_samples: p.hutchinson_samples,
                hessian_power: p.hessian_power,
                beta1: p.beta1,
                beta2: p.beta2,
            },
            source,
            unit_preconditioner: false,
        };

        let cfg = ExperimentConfig {
            data: self.data.to_config()?,
            model,
            optim: OptimConfig { kind, schedule },
            selection,
            epochs: self.run.epochs,
            batch_size: self.run.batch_size,
            seed: self.run.seed,
            track_examples: self.run.track_examples,
            output_dir: None,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\nsource = \"synthetic\"\nn = 200\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.run.epochs, 10);
        let exp = cfg.to_experiment().unwrap();
        assert_eq!(exp.selection.method, Method::AdaCore);
        assert_eq!(exp.selection.fraction, 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("[data]\nsource = \"synthetic\"\nn_examples = 5\n", &[]).unwrap_err();
        assert!(err.0.contains("n_examples"), "{err}");
        let err = parse("[data]\nsource = \"synthetic\"\n[selection]\nfracton = 0.2\n", &[]).unwrap_err();
        assert!(err.0.contains("fracton"), "{err}");
        assert!(parse("[data]\nsource = \"synthetic\"\n[extra]\n", &[]).is_err());
    }

    #[test]
    fn overrides_qualified_and_bare() {
        let sets = vec!["run.epochs=3".to_string(), "method=random".to_string(), "fraction = 0.25".to_string()];
        let cfg = parse(MINIMAL, &sets).unwrap();
        assert_eq!(cfg.run.epochs, 3);
        assert_eq!(cfg.selection.method, "random");
        assert_eq!(cfg.selection.fraction, 0.25);
        let err = parse(MINIMAL, &["kind=newton".into()]).unwrap_err();
        assert!(err.0.contains("ambiguous"), "{err}");
        assert!(parse(MINIMAL, &["optim.kind=newton".into()]).is_ok());
        assert!(parse(MINIMAL, &["run.epoch=3".into()]).is_err());
        assert!(parse(MINIMAL, &["epochs".into()]).is_err());
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let values = |key: &str| match key {
            "source" => "\"synthetic\"".to_string(),
            "preset" => "\"blobs\"".into(),
            "kind" | "schedule" | "method" | "greedy" | "curvature" => String::new(),
            "train" | "test" | "cache_dir" => "\"x\"".into(),
            "milestones" => "[1, 2]".into(),
            "standardize" | "track_examples" => "false".into(),
            "n" | "d" | "classes" | "seed" | "dim" | "hidden" | "warmup" | "hutchinson_samples" | "refresh"
            | "sample_size" | "dense_threshold" | "hessian_batch" | "epochs" | "batch_size" => "4".into(),
            _ => "0.5".into(),
        };
        for (section, fields) in KEYS {
            for field in *fields {
                let v = values(field);
                if v.is_empty() {
                    continue;
                }
                let sets = vec![format!("{section}.{field}={v}")];
                assert!(parse(MINIMAL, &sets).is_ok(), "{section}.{field}");
            }
        }
    }

    #[test]
    fn validation_errors_name_the_field() {
        let cfg = parse(MINIMAL, &["selection.fraction=1.5".into()]).unwrap();
        let err = cfg.to_experiment().unwrap_err();
        assert!(err.0.contains("selection.fraction"), "{err}");
        let cfg = parse(MINIMAL, &["model.kind=\"svm\"".into()]).unwrap();
        assert!(cfg.to_experiment().unwrap_err().0.contains("model.kind"));
    }

    #[test]
    fn blobs_preset_is_seeded() {
        let cfg = parse("[data]\nsource = \"synthetic\"\npreset = \"blobs\"\nn = 90\n", &[]).unwrap();
        let a = cfg.data.synthetic_spec().unwrap();
        let b = cfg.data.synthetic_spec().unwrap();
        assert_eq!(a.cluster_means, b.cluster_means);
        assert_eq!(a.class_fractions.len(), 3);
    }
}
