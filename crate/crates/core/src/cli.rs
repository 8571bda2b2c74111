//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::report::COLLAPSE_RATIO;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "minvar", version, about = "Minimal-variation embeddings of the two-moons dataset")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; every key has a default.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override any config key, e.g. `--set epochs=200`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    pub overrides: Vec<(String, String)>,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in '{s}'"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the two-moons dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the feature network on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Objective: ssl, graph or dirichlet (overrides `objective`).
        #[arg(long)]
        objective: Option<String>,
        /// Penalty weight or "auto" (overrides `lambda`).
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Print the fully resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Exact spectral embedding of the training split.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Probe, align and diagnose trained checkpoints.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint(s) to evaluate, one per seed; defaults to the train outputs.
        #[arg(long, value_name = "PATH")]
        checkpoint: Vec<PathBuf>,
        /// Oracle embedding file from `oracle` to align against.
        #[arg(long, value_name = "PATH")]
        oracle: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a regular grid for plotting.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

impl Common {
    fn resolve(&self, extra: Vec<(String, String)>) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        if let Some(seed) = self.seed {
            overrides.push(("seed".to_string(), seed.to_string()));
        }
        if let Some(out) = &self.out {
            overrides.push(("out".to_string(), toml::Value::String(out.display().to_string()).to_string()));
        }
        overrides.extend(self.overrides.iter().cloned());
        overrides.extend(extra);
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn quoted(s: &str) -> String {
    s.parse::<f64>().map(|_| s.to_string()).unwrap_or_else(|_| toml::Value::String(s.to_string()).to_string())
}

pub fn exit_code(error: &Error) -> i32 {
    if error.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Runs one parsed command, printing progress to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let say = |out: &mut dyn Write, msg: String| {
        let _ = writeln!(out, "{msg}");
    };
    match cli.command {
        Command::Generate { common } => {
            let config = common.resolve(vec![])?;
            let path = commands::generate(&config)?;
            say(out, format!("wrote {}", path.display()));
        }
        Command::Train { common, objective, lambda, epochs, print_config } => {
            let mut extra = Vec::new();
            if let Some(o) = objective {
                extra.push(("objective".to_string(), quoted(&o)));
            }
            if let Some(l) = lambda {
                extra.push(("lambda".to_string(), quoted(&l)));
            }
            if let Some(e) = epochs {
                extra.push(("epochs".to_string(), e.to_string()));
            }
            let config = common.resolve(extra)?;
            if print_config {
                let _ = write!(out, "{}", config.to_toml_string());
                return Ok(());
            }
            for s in commands::train(&config)? {
                say(
                    out,
                    format!(
                        "seed {}: lambda {:e}, objective {:.6e}, penalty {:.6e}, {}",
                        s.seed,
                        s.lambda,
                        s.final_energy.objective,
                        s.final_energy.penalty,
                        commands::checkpoint_path(&config, s.seed).display()
                    ),
                );
                if s.collapsed {
                    say(out, format!("seed {}: collapse detected (top covariance eigenvalue ratio {:.3e} < {COLLAPSE_RATIO:e})", s.seed, s.collapse_ratio));
                }
            }
        }
        Command::Oracle { common } => {
            let config = common.resolve(vec![])?;
            let oracle = commands::oracle(&config)?;
            let shown: Vec<String> = oracle.eigenvalues.iter().take(config.p + 1).map(|v| format!("{v:.6e}")).collect();
            say(out, format!("eigenvalues {}", shown.join(" ")));
            say(out, format!("wrote {}", config.out.join(commands::EMBEDDING_FILE).display()));
        }
        Command::Eval { common, checkpoint, oracle } => {
            let config = common.resolve(vec![])?;
            let report = commands::eval(&config, &checkpoint, oracle.as_deref())?;
            say(out, format!("probe accuracy {}", report.probe_accuracy));
            say(out, format!("shuffled labels {}", report.shuffled_label_accuracy));
            say(out, format!("random features {}", report.random_feature_accuracy));
            if let Some(o) = report.oracle_probe_accuracy {
                say(out, format!("oracle features {o}"));
            }
            say(out, format!("alignment {:?}", report.mean_alignment));
            say(out, format!("wrote {}", config.out.join(commands::REPORT_FILE).display()));
        }
        Command::Grid { common, checkpoint } => {
            let config = common.resolve(vec![])?;
            let path = commands::grid(&config, checkpoint.as_deref())?;
            say(out, format!("wrote {}", path.display()));
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
