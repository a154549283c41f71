use std::path::PathBuf;
use std::process::ExitCode;

use adacore_cli::{cmd_run, cmd_select, cmd_synth, cmd_verify, verify::Faults, CliError};
use clap::{Args, Parser, Subcommand};

/// Coreset selection and training experiments.
#[derive(Parser)]
#[command(name = "adacore", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a configuration value: `section.key=value`, or a bare key
    /// that belongs to a single section.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for every output file.
    #[arg(long, short, env = "ADACORE_OUTPUT_DIR", default_value = "adacore-out")]
    output: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics, selection counts and coresets.
    Run(Common),
    /// Select one coreset at the initial parameters and write coreset.csv.
    Select(Common),
    /// Run the brute-force property checks.
    Verify {
        /// Print per-property timing.
        #[arg(long, short)]
        verbose: bool,
        /// Self-test: corrupt the Hessian oracle input.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Generate the configured synthetic dataset as a LIBSVM file.
    Synth(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(c) => cmd_run(&c.config, &c.overrides, &c.output).map(|msg| println!("{msg}")),
        Command::Select(c) => {
            cmd_select(&c.config, &c.overrides, &c.output).map(|p| println!("wrote {}", p.display()))
        }
        Command::Synth(c) => cmd_synth(&c.config, &c.overrides, &c.output).map(|(p, cached)| {
            println!("{} {}", if cached { "cached" } else { "wrote" }, p.display())
        }),
        Command::Verify { verbose, inject_fault } => cmd_verify(
            verbose,
            Faults {
                flip_hessian_sign: inject_fault,
            },
            std::io::stdout(),
        ),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            report_exit(&e)
        }
    }
}

fn report_exit(e: &CliError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
