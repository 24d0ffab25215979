//! Command-line front door: dataset generation, training, evaluation,
//! theory certification and report emission.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure,
//! 4 acceptance-threshold miss.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nkemu::bench::{evaluate, train_model, EvalModel};
use nkemu::config::{builtin_profile, builtin_profiles, RunConfig};
use nkemu::error::NkError;
use nkemu::io;
use nkemu::nk::generate_training_data;
use nkemu::surrogate::ExpertEnsemble;

#[derive(Parser)]
#[command(name = "nkemu", about = "Solver emulation toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for per-draw parallel sections
    /// (default: env NKEMU_WORKERS or 1).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ConfigSource {
    /// Path to a run-config JSON file.
    #[arg(long, conflicts_with = "profile")]
    config: Option<PathBuf>,
    /// Name of a built-in profile (see `nkemu profiles`).
    #[arg(long)]
    profile: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<RunConfig, CliError> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            return RunConfig::from_json(&text).map_err(CliError::from_validation);
        }
        if let Some(name) = &self.profile {
            return builtin_profile(name)
                .ok_or_else(|| CliError::Validation(format!("unknown profile '{name}'")));
        }
        Err(CliError::Validation("pass --config FILE or --profile NAME".into()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training dataset (offline solver flow).
    GenData {
        #[command(flatten)]
        source: ConfigSource,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the number of training draws.
        #[arg(long)]
        draws: Option<usize>,
        /// Override the warm-up step count.
        #[arg(long)]
        n_warm: Option<usize>,
        /// Override the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the flow relaxation.
        #[arg(long)]
        lambda_flow: Option<f64>,
        /// Override the training relaxation set (comma-separated).
        #[arg(long, value_delimiter = ',')]
        lambda_train: Option<Vec<f64>>,
        /// Override the parameterization mode (direct | coefficients).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Fit the factor model to a dataset.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        /// Input dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Output model directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on fresh validation draws.
    Eval {
        #[command(flatten)]
        source: ConfigSource,
        /// Model directory (single-model evaluation).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Expert model directories (ensemble evaluation); defaults to the
        /// config's expert list.
        #[arg(long, value_delimiter = ',')]
        experts: Option<Vec<PathBuf>>,
        /// Output report path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV error-curve path.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Run the theory certification suite (nonzero exit on any failure).
    TheoryCheck {
        /// Seed for the certification draws.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Optional JSON output of the check rows.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge evaluation reports into summary tables (CSV + Markdown).
    Report {
        /// Report JSON files.
        reports: Vec<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out_csv: PathBuf,
        /// Output Markdown path.
        #[arg(long)]
        out_md: PathBuf,
    },
    /// List built-in profiles, or write them out as JSON config files.
    Profiles {
        /// Directory to write one JSON config per profile.
        #[arg(long)]
        emit_dir: Option<PathBuf>,
    },
}

enum CliError {
    Validation(String),
    Numerical(String),
    ThresholdMiss(String),
}

impl CliError {
    fn from_validation(e: NkError) -> Self {
        CliError::Validation(e.to_string())
    }

    fn from_numerical(e: NkError) -> Self {
        match e {
            NkError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }

    fn exit(&self) -> ExitCode {
        let (code, label, msg) = match self {
            CliError::Validation(m) => (2, "validation error", m),
            CliError::Numerical(m) => (3, "numerical failure", m),
            CliError::ThresholdMiss(m) => (4, "threshold miss", m),
        };
        eprintln!("error ({label}): {msg}");
        ExitCode::from(code)
    }
}

fn workers(cli_value: Option<usize>) -> usize {
    cli_value
        .or_else(|| std::env::var("NKEMU_WORKERS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(1)
        .max(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let w = workers(cli.workers);
    match run(cli.command, w) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.exit(),
    }
}

fn run(command: Command, workers: usize) -> Result<(), CliError> {
    match command {
        Command::GenData { source, out, draws, n_warm, seed, lambda_flow, lambda_train, mode } => {
            let mut cfg = source.load()?;
            if let Some(d) = draws {
                cfg.data.m_draws = d;
            }
            if let Some(n) = n_warm {
                cfg.data.n_warm = n;
            }
            if let Some(s) = seed {
                cfg.data.seed = s;
            }
            if let Some(l) = lambda_flow {
                cfg.data.lambda_flow = l;
            }
            if let Some(ls) = lambda_train {
                cfg.data.lambda_train = ls;
            }
            if let Some(m) = mode {
                cfg.mode = match m.as_str() {
                    "direct" => nkemu::nk::ParamMode::Direct,
                    "coefficients" => nkemu::nk::ParamMode::Coefficients,
                    other => {
                        return Err(CliError::Validation(format!("unknown mode '{other}'")))
                    }
                };
            }
            cfg.validate().map_err(CliError::from_validation)?;
            let spec = cfg.build_problem().map_err(CliError::from_numerical)?;
            let opts = cfg.generate_options(workers);
            let mut dataset =
                generate_training_data(&spec, &opts).map_err(CliError::from_numerical)?;
            dataset.manifest.config_hash = Some(cfg.hash());
            io::save_dataset(&out, &dataset).map_err(CliError::from_numerical)?;
            println!(
                "wrote {} records ({} jittered) to {}",
                dataset.manifest.record_count,
                dataset.manifest.jittered_records.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train { source, dataset, out } => {
            let cfg = source.load()?;
            let ds = io::load_dataset(&dataset).map_err(CliError::from_numerical)?;
            if ds.records.is_empty() {
                return Err(CliError::Validation("dataset is empty".into()));
            }
            let model = train_model(&cfg, &ds).map_err(CliError::from_numerical)?;
            let err = model.training_error().map_err(CliError::from_numerical)?;
            io::save_model(&out, &model, Some(cfg.hash())).map_err(CliError::from_numerical)?;
            println!(
                "trained on {} records; mean training Frobenius error {err:.3e}; model at {}",
                ds.records.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval { source, model, experts, out, curve } => {
            let cfg = source.load()?;
            let expert_dirs: Option<Vec<PathBuf>> = experts.or_else(|| {
                cfg.eval
                    .expert_models
                    .as_ref()
                    .map(|v| v.iter().map(PathBuf::from).collect())
            });
            let report = if let Some(model_dir) = model {
                let m = io::load_model(&model_dir).map_err(CliError::from_numerical)?;
                evaluate(&cfg, &EvalModel::Single(&m), workers)
                    .map_err(CliError::from_numerical)?
            } else if let Some(dirs) = expert_dirs {
                let mut loaded = Vec::new();
                for d in &dirs {
                    loaded.push(io::load_model(Path::new(d)).map_err(CliError::from_numerical)?);
                }
                let ensemble =
                    ExpertEnsemble::build(loaded).map_err(CliError::from_numerical)?;
                evaluate(&cfg, &EvalModel::Ensemble(&ensemble), workers)
                    .map_err(CliError::from_numerical)?
            } else {
                return Err(CliError::Validation(
                    "pass --model DIR or --experts DIR,DIR,...".into(),
                ));
            };
            io::save_report(&out, &report).map_err(CliError::from_numerical)?;
            if let Some(curve_path) = curve {
                io::save_error_curve_csv(&curve_path, &report.error_curve)
                    .map_err(CliError::from_numerical)?;
            }
            println!(
                "{}: median rel-L2 {:.3e} (q10 {:.3e}, q90 {:.3e}), median iterations {}",
                report.name,
                report.median_error,
                report.quantile10,
                report.quantile90,
                report.median_iterations
            );
            if let Some(target) = cfg.eval.target_median {
                // marching problems gate on the per-step error median
                let gate = report.per_step_median.unwrap_or(report.median_error);
                if !(gate <= target) {
                    return Err(CliError::ThresholdMiss(format!(
                        "median error {gate:.3e} exceeds target {target:.3e}"
                    )));
                }
            }
            Ok(())
        }
        Command::TheoryCheck { seed, out } => {
            let rows = nkemu::certify::theory_check(seed, workers)
                .map_err(CliError::from_numerical)?;
            let mut failed = 0;
            println!("{:<34} {:>12} {:>12}  result", "check", "value", "bound");
            for r in &rows {
                println!(
                    "{:<34} {:>12.4e} {:>12.4e}  {}  {}",
                    r.name,
                    r.value,
                    r.bound,
                    if r.pass { "PASS" } else { "FAIL" },
                    r.detail
                );
                if !r.pass {
                    failed += 1;
                }
            }
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&rows)
                    .map_err(|e| CliError::Numerical(e.to_string()))?;
                std::fs::write(&path, text)
                    .map_err(|e| CliError::Numerical(e.to_string()))?;
            }
            if failed > 0 {
                return Err(CliError::ThresholdMiss(format!("{failed} checks failed")));
            }
            println!("all {} checks passed", rows.len());
            Ok(())
        }
        Command::Report { reports, out_csv, out_md } => {
            if reports.is_empty() {
                return Err(CliError::Validation("pass at least one report".into()));
            }
            let mut loaded = Vec::new();
            for p in &reports {
                loaded.push(io::load_report(p).map_err(CliError::from_numerical)?);
            }
            let mut csv = String::from(
                "name,problem,config_hash,median_rel_l2,q10,q90,median_iterations,wall_clock_s\n",
            );
            let mut md = String::from(
                "| name | problem | config | median rel-L2 | q10 | q90 | median iters |\n|---|---|---|---|---|---|---|\n",
            );
            for r in &loaded {
                csv.push_str(&format!(
                    "{},{},{},{:e},{:e},{:e},{},{:.3}\n",
                    r.name,
                    r.problem,
                    r.config_hash,
                    r.median_error,
                    r.quantile10,
                    r.quantile90,
                    r.median_iterations,
                    r.wall_clock_seconds
                ));
                md.push_str(&format!(
                    "| {} | {} | {} | {:.2e} | {:.2e} | {:.2e} | {} |\n",
                    r.name,
                    r.problem,
                    r.config_hash,
                    r.median_error,
                    r.quantile10,
                    r.quantile90,
                    r.median_iterations
                ));
            }
            std::fs::write(&out_csv, csv).map_err(|e| CliError::Numerical(e.to_string()))?;
            std::fs::write(&out_md, md).map_err(|e| CliError::Numerical(e.to_string()))?;
            println!("wrote {} rows", loaded.len());
            Ok(())
        }
        Command::Profiles { emit_dir } => {
            match emit_dir {
                None => {
                    for cfg in builtin_profiles() {
                        println!("{:<32} {} [{}]", cfg.name, cfg.problem.name(), cfg.hash());
                    }
                }
                Some(dir) => {
                    std::fs::create_dir_all(&dir)
                        .map_err(|e| CliError::Numerical(e.to_string()))?;
                    for cfg in builtin_profiles() {
                        let path = dir.join(format!("{}.json", cfg.name));
                        std::fs::write(&path, cfg.to_json())
                            .map_err(|e| CliError::Numerical(e.to_string()))?;
                        println!("wrote {}", path.display());
                    }
                }
            }
            Ok(())
        }
    }
}
