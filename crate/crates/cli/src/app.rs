//! Argument parsing and dispatch for the `plausicf` binary.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_diagnose, cmd_explain, cmd_fit, parse_vector, ExplainArgs};
use crate::config::{ExperimentConfig, ModelKind};
use crate::error::{CliError, CliResult};
use crate::experiment::{run_experiment, to_json, write_outputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "plausicf", version, about = "Density-constrained counterfactual explanations")]
pub struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit per-fold models, mixtures and KDEs and write them as JSON.
    Fit(ConfigArgs),
    /// Compute one counterfactual from fitted artifacts; prints JSON.
    Explain(ExplainCli),
    /// Run the cross-validated comparison and write the result table.
    Experiment(ConfigArgs),
    /// Local sufficiency flags and softmax-vs-tree counterfactual spread.
    Diagnose(DiagnoseCli),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset CSV (overrides the config).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Number of PCA components; 0 disables the projection.
    #[arg(long)]
    pub pca: Option<usize>,
    #[arg(long)]
    pub delta_quantile: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if cfg.dataset.as_os_str().is_empty() {
            return Err(CliError::Usage("no dataset given (use --config or --dataset)".into()));
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(k) = self.pca {
            cfg.pca_components = (k > 0).then_some(k);
        }
        if let Some(q) = self.delta_quantile {
            cfg.delta_quantile = q;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ExplainCli {
    /// Model artifact written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Mixture artifact of the target class; enables the density constraint.
    #[arg(long)]
    pub density: Option<PathBuf>,
    /// KDE artifact of the target class, for the audit block.
    #[arg(long)]
    pub kde: Option<PathBuf>,
    /// Query point, e.g. `5.1,3.5,1.4,0.2` or `[5.1, 3.5, 1.4, 0.2]`.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "x_file", required_unless_present = "x_file")]
    pub x: Option<String>,
    /// File holding the query point in the same format.
    #[arg(long)]
    pub x_file: Option<PathBuf>,
    #[arg(long)]
    pub target: usize,
    /// Ignore the density artifact and return the unconstrained counterfactual.
    #[arg(long)]
    pub baseline: bool,
    /// Override the density threshold.
    #[arg(long, conflicts_with = "log_delta")]
    pub delta: Option<f64>,
    /// Override the density threshold by its logarithm.
    #[arg(long, allow_hyphen_values = true)]
    pub log_delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseCli {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Dataset rows to diagnose, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub samples: Vec<usize>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> CliResult<i32> {
    let print = |out: &mut dyn Write, text: &str| writeln!(out, "{text}").map_err(|e| CliError::io("<stdout>", e));
    match &cli.command {
        Command::Fit(args) => {
            let cfg = args.resolve()?;
            for p in cmd_fit(&cfg)? {
                print(stdout, &p.display().to_string())?;
            }
            Ok(EXIT_OK)
        }
        Command::Experiment(args) => {
            let cfg = args.resolve()?;
            let outcome = run_experiment(&cfg)?;
            write_outputs(&cfg, &outcome)?;
            stdout.write_all(outcome.table.to_csv().as_bytes()).map_err(|e| CliError::io("<stdout>", e))?;
            Ok(EXIT_OK)
        }
        Command::Diagnose(args) => {
            let cfg = args.config.resolve()?;
            let report = cmd_diagnose(&cfg, &args.samples)?;
            print(stdout, &to_json(&report)?)?;
            Ok(EXIT_OK)
        }
        Command::Explain(args) => {
            let text = match (&args.x, &args.x_file) {
                (Some(x), _) => x.clone(),
                (None, Some(p)) => fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
                (None, None) => return Err(CliError::Usage("missing --x or --x-file".into())),
            };
            let explain = ExplainArgs {
                model: args.model.clone(),
                density: args.density.clone(),
                kde: args.kde.clone(),
                x: parse_vector(&text)?,
                target: args.target,
                baseline: args.baseline,
                delta: args.delta,
                log_delta: args.log_delta,
            };
            let result = cmd_explain(&explain)?;
            print(stdout, &to_json(&result)?)?;
            Ok(if result.is_found() { EXIT_OK } else { EXIT_INFEASIBLE })
        }
    }
}

/// Log level from the repeat count, unless `RUST_LOG` is set.
pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}
