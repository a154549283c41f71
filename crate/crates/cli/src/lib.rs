//! Command implementations for the `adacore` binary. Each returns a
//! [`CliError`] whose [`CliError::exit_code`] is the process status.

pub mod config;
pub mod verify;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use adacore::data::{generate_synthetic, write_libsvm};
use adacore::harness::{run_experiment, select_once};

pub use config::{ConfigError, FileConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<adacore::Error> for CliError {
    fn from(e: adacore::Error) -> Self {
        match e {
            adacore::Error::Config { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Trains per the configuration and writes every CSV into `output`.
pub fn cmd_run(config: &Path, overrides: &[String], output: &Path) -> Result<String, CliError> {
    let file = config::load(config, overrides)?;
    let mut exp = file.to_experiment()?;
    exp.output_dir = Some(output.to_path_buf());
    let result = run_experiment(&exp)?;
    let last = result.metrics.last().expect("at least one epoch");
    Ok(format!(
        "{} epochs, final train loss {:.6}, {:.3}s; outputs in {}",
        result.metrics.len(),
        last.train_loss,
        last.seconds,
        output.display()
    ))
}

/// Selects once at the initial parameters and writes `coreset.csv`.
pub fn cmd_select(config: &Path, overrides: &[String], output: &Path) -> Result<PathBuf, CliError> {
    let file = config::load(config, overrides)?;
    let exp = file.to_experiment()?;
    let coreset = select_once(&exp)?;
    fs::create_dir_all(output)?;
    let path = output.join("coreset.csv");
    let mut out = BufWriter::new(File::create(&path)?);
    coreset.write_csv(&mut out)?;
    out.flush()?;
    Ok(path)
}

/// Writes the configured synthetic dataset as a LIBSVM file, reusing an
/// existing file of the same name.
pub fn cmd_synth(config: &Path, overrides: &[String], output: &Path) -> Result<(PathBuf, bool), CliError> {
    let file = config::load(config, overrides)?;
    let data = &file.data;
    if data.source != "synthetic" {
        return Err(CliError::Config(
            "configuration error in `data.source`: synth needs synthetic data".into(),
        ));
    }
    let spec = data.synthetic_spec()?;
    let dir = data.cache_dir.clone().unwrap_or_else(|| output.to_path_buf());
    let path = dir.join(format!("{}.libsvm", data.cache_stem()));
    if path.exists() {
        return Ok((path, true));
    }
    let ds = generate_synthetic(&spec)?;
    fs::create_dir_all(&dir)?;
    let mut out = BufWriter::new(File::create(&path)?);
    write_libsvm(&ds, &mut out)?;
    out.flush()?;
    Ok((path, false))
}

/// Runs the property suite; the report lists every property and fails if
/// any of them did.
pub fn cmd_verify(verbose: bool, faults: verify::Faults, mut out: impl Write) -> Result<(), CliError> {
    let reports = verify::run_all(faults);
    for r in &reports {
        let status = if r.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status} {:<24} {}", r.name, r.detail)?;
        if verbose {
            writeln!(out, "     {:<24} {:.3}s", r.name, r.seconds)?;
        }
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("properties failed: {}", failed.join(", "))))
    }
}
