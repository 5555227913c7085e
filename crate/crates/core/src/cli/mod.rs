//! Command-line surface: argument parsing, setting resolution and exit codes.
//!
//! Settings resolve in this order, later wins: built-in defaults, the
//! `FCLR_OUTPUT_DIR` environment variable (output directory only), the
//! `--config` TOML file, command-line flags.

pub mod commands;
pub mod config;
pub mod ingest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{DataFiles, Status};
pub use config::{FileConfig, RunConfig};
pub use ingest::{export_panel, ingest_dataset, BlocksSpec, GridPolicy};

use crate::error::Result;
use crate::simulation::MethodKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fclr", version, about = "Sparse functional log-contrast regression")]
pub struct Cli {
    /// TOML file with run settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $FCLR_OUTPUT_DIR, else ./fclr-out].
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Seed for folds, resamples and simulated data [default: 1].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format CSV with header `unit,time,series,value`.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML blocks spec mapping series to roles.
    #[arg(long)]
    pub blocks: PathBuf,
    /// How to treat unit/time cells missing from the data [default: intersect].
    #[arg(long, value_parser = ["intersect", "error"])]
    pub grid_policy: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct TuningArgs {
    /// `loo` or a number of folds [default: 10].
    #[arg(long)]
    pub folds: Option<String>,
    /// Fixed penalty; skips cross-validation.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fixed basis size [default with --lambda: 5].
    #[arg(long)]
    pub k: Option<usize>,
    /// Candidate basis sizes, comma separated [default: 4,5,6,7,8].
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    /// Length of the λ path [default: 50].
    #[arg(long)]
    pub n_lambda: Option<usize>,
    /// Smallest λ as a fraction of λ_max [default: 1e-3].
    #[arg(long)]
    pub lambda_min_ratio: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune and fit on a dataset; writes coefficients, curves and diagnostics.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: TuningArgs,
    },
    /// Cross-validation table over (λ, k).
    Cv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: TuningArgs,
    },
    /// Bootstrap selection proportions.
    Bootstrap {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: TuningArgs,
        /// Number of resamples [default: 500].
        #[arg(long, short = 'B')]
        replicates: Option<usize>,
    },
    /// Replicated simulation study.
    Simulate {
        /// Scenario name such as `table3-row1`, or `all`; repeatable.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        /// Replicates per scenario [default: 100].
        #[arg(long)]
        replicates: Option<usize>,
        /// Methods, comma separated [default: cgl,bgl].
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Folds of the cross-validation inside each replicate [default: 10].
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        tuning: SimTuningArgs,
    },
    /// Relative magnitude of each block over time windows.
    Importance {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: TuningArgs,
        /// Windows as `start:end,start:end` [default: consecutive grid intervals].
        #[arg(long)]
        windows: Option<String>,
    },
    /// Validate and summarize a dataset.
    IngestCheck {
        #[command(flatten)]
        data: DataArgs,
        /// Also write the panel back as `panel.csv` and `blocks.toml`.
        #[arg(long)]
        export: bool,
    },
}

#[derive(Debug, Args, Default)]
pub struct SimTuningArgs {
    /// Candidate basis sizes, comma separated [default: 4,5,6,7,8].
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    /// Length of the λ path [default: 50].
    #[arg(long)]
    pub n_lambda: Option<usize>,
    /// Smallest λ as a fraction of λ_max [default: 1e-3].
    #[arg(long)]
    pub lambda_min_ratio: Option<f64>,
}

fn apply_tuning(cfg: &mut RunConfig, t: &TuningArgs) -> Result<()> {
    if let Some(f) = &t.folds {
        cfg.folds = config::parse_folds(f)?;
    }
    if t.lambda.is_some() {
        cfg.lambda = t.lambda;
    }
    if t.k.is_some() {
        cfg.k = t.k;
    }
    if let Some(g) = &t.k_grid {
        cfg.cv.k_grid = g.clone();
    }
    cfg.set_lambda_grid(t.n_lambda, t.lambda_min_ratio);
    Ok(())
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) -> Result<DataFiles> {
    if let Some(p) = &d.grid_policy {
        cfg.grid_policy = GridPolicy::parse(p)?;
    }
    Ok(DataFiles {
        data: d.data.clone(),
        blocks: d.blocks.clone(),
    })
}

/// Resolves defaults, environment, config file and flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(dir) = config::env_output() {
        cfg.output = dir;
    }
    if let Some(path) = &cli.config {
        cfg.apply_file(FileConfig::read(path)?)?;
    }
    if let Some(o) = &cli.output {
        cfg.output = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    match &cli.command {
        Command::Fit { data, tuning } | Command::Cv { data, tuning } => {
            apply_data(&mut cfg, data)?;
            apply_tuning(&mut cfg, tuning)?;
        }
        Command::Bootstrap {
            data,
            tuning,
            replicates,
        } => {
            apply_data(&mut cfg, data)?;
            apply_tuning(&mut cfg, tuning)?;
            if let Some(b) = replicates {
                cfg.bootstrap_replicates = *b;
            }
        }
        Command::Simulate {
            scenarios,
            replicates,
            methods,
            folds,
            tuning,
        } => {
            if !scenarios.is_empty() {
                cfg.scenarios = scenarios.clone();
            }
            if replicates.is_some() {
                cfg.replicates = *replicates;
            }
            if let Some(m) = methods {
                cfg.methods = m.iter().map(|s| MethodKind::parse(s)).collect::<Result<_>>()?;
            }
            if let Some(f) = folds {
                cfg.study_folds = *f;
            }
            if let Some(g) = &tuning.k_grid {
                cfg.cv.k_grid = g.clone();
            }
            cfg.set_lambda_grid(tuning.n_lambda, tuning.lambda_min_ratio);
        }
        Command::Importance {
            data,
            tuning,
            windows,
        } => {
            apply_data(&mut cfg, data)?;
            apply_tuning(&mut cfg, tuning)?;
            if let Some(w) = windows {
                cfg.windows = Some(config::parse_windows(w)?);
            }
        }
        Command::IngestCheck { data, .. } => {
            apply_data(&mut cfg, data)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_files(cmd: &Command) -> Option<DataFiles> {
    let d = match cmd {
        Command::Fit { data, .. }
        | Command::Cv { data, .. }
        | Command::Bootstrap { data, .. }
        | Command::Importance { data, .. }
        | Command::IngestCheck { data, .. } => data,
        Command::Simulate { .. } => return None,
    };
    Some(DataFiles {
        data: d.data.clone(),
        blocks: d.blocks.clone(),
    })
}

/// Runs a parsed command with resolved settings.
pub fn execute(cli: &Cli, cfg: &RunConfig) -> Result<Status> {
    let files = data_files(&cli.command);
    let run = || -> Result<Status> {
        match &cli.command {
            Command::Fit { .. } => commands::cmd_fit(cfg, files.as_ref().expect("data args")),
            Command::Cv { .. } => commands::cmd_cv(cfg, files.as_ref().expect("data args")),
            Command::Bootstrap { .. } => commands::cmd_bootstrap(cfg, files.as_ref().expect("data args")),
            Command::Simulate { .. } => commands::cmd_simulate(cfg),
            Command::Importance { .. } => commands::cmd_importance(cfg, files.as_ref().expect("data args")),
            Command::IngestCheck { export, .. } => {
                let summary = commands::cmd_ingest_check(cfg, files.as_ref().expect("data args"), *export)?;
                print!("{summary}");
                Ok(Status::Converged)
            }
        }
    };
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| crate::Error::Config(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let outcome = resolve(&cli).and_then(|cfg| execute(&cli, &cfg));
    match outcome {
        Ok(Status::Converged) => EXIT_OK,
        Ok(Status::NotConverged) => {
            eprintln!("warning: the final fit did not converge; outputs are flagged in diagnostics");
            EXIT_NOT_CONVERGED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}
