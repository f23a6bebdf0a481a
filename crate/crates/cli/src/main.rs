//! `shel`: fits, post-selection inference and simulation studies from the command line.

mod config;
mod error;
mod fit;
mod infer;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shel_core::sim::{run_study, StudyConfig};

use crate::config::{check_inference, read_toml, FitConfig, InferMode, InferenceSection};
use crate::error::{CliError, CliResult};
use crate::fit::{create_file, run_fit, write_json, FitRecord};

#[derive(Parser)]
#[command(name = "shel", version, about = "Synthetic heterogeneous-effects LASSO for clustered data")]
struct Cli {
    /// Worker threads (0 uses every available core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for all outputs; created if missing.
    #[arg(long, global = true, default_value = "shel-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Screen, cross-validate and fit one dataset.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a replicated simulation study.
    Simulate {
        /// Study configuration; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Full-size grid: 400 clusters, 1000 covariates, 200 replications.
        #[arg(long)]
        paper_scale: bool,
        /// Write the effective configuration and stop.
        #[arg(long)]
        dry_run: bool,
    },
    /// Post-selection inference for a stored fit.
    Infer {
        /// Fit JSON written by `shel fit`.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Data CSV; defaults to the path recorded in the fit.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Si1,
    Si2,
    Debias,
}

impl From<ModeArg> for InferMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Si1 => InferMode::Si1,
            ModeArg::Si2 => InferMode::Si2,
            ModeArg::Debias => InferMode::Debias,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("shel: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| CliError::output(&cli.out_dir, e))?;
    match cli.command {
        Command::Fit { config } => cmd_fit(&config, cli.seed, &cli.out_dir),
        Command::Simulate {
            config,
            paper_scale,
            dry_run,
        } => cmd_simulate(config.as_deref(), cli.seed, paper_scale, dry_run, &cli.out_dir),
        Command::Infer { fit, mode, data, level } => {
            cmd_infer(&fit, mode.into(), data.as_deref(), level, cli.seed, &cli.out_dir)
        }
    }
}

fn cmd_fit(config: &Path, seed: Option<u64>, out_dir: &Path) -> CliResult<()> {
    let mut cfg = FitConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let fitted = run_fit(&cfg)?;
    let screening = out_dir.join("screening.csv");
    fitted
        .screening
        .write_csv(create_file(&screening)?)
        .map_err(|e| CliError::output(&screening, e))?;
    write_json(&out_dir.join("fit.json"), &FitRecord::new(&cfg, &fitted)?)?;
    if let Some(section) = &cfg.inference {
        infer::run_inference(&fitted, section, cfg.seed, cfg.fit.tol, out_dir)?;
    }
    Ok(())
}

fn cmd_simulate(
    config: Option<&Path>,
    seed: Option<u64>,
    paper_scale: bool,
    dry_run: bool,
    out_dir: &Path,
) -> CliResult<()> {
    let mut cfg: StudyConfig = match config {
        Some(p) => read_toml(p)?,
        None => StudyConfig::default(),
    };
    if paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(CliError::at("study configuration"))?;
    if dry_run {
        return write_json(&out_dir.join("config.json"), &cfg);
    }
    let result = run_study(&cfg).map_err(CliError::at("simulation study"))?;
    let metrics = out_dir.join("metrics.csv");
    result
        .write_csv(create_file(&metrics)?)
        .map_err(|e| CliError::output(&metrics, e))?;
    let summary = out_dir.join("summary.json");
    let mut w = create_file(&summary)?;
    result.write_summary_json(&mut w).map_err(|e| CliError::output(&summary, e))?;
    std::io::Write::write_all(&mut w, b"\n").map_err(|e| CliError::output(&summary, e))
}

fn cmd_infer(
    fit_path: &Path,
    mode: InferMode,
    data: Option<&Path>,
    level: f64,
    seed: Option<u64>,
    out_dir: &Path,
) -> CliResult<()> {
    let text = std::fs::read_to_string(fit_path)
        .map_err(|e| CliError::Config(format!("cannot read fit {}: {e}", fit_path.display())))?;
    let record: FitRecord = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{} is not a fit record: {e}", fit_path.display())))?;
    check_inference(mode, record.family, record.method)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::Config("--level must lie in (0, 1)".into()));
    }
    let fitted = infer::restore(&record, data)?;
    let section = InferenceSection {
        mode,
        level,
        ..record.config.inference.clone().unwrap_or(InferenceSection::new(mode, level))
    };
    infer::run_inference(
        &fitted,
        &section,
        seed.unwrap_or(record.config.seed),
        record.config.fit.tol,
        out_dir,
    )
}
