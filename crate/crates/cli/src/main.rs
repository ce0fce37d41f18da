use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use qgpr::classical::{gram_matrix, kernel_matrix};
use qgpr::coherent::{coherent_gram, prepare_points, KernelConfig};
use qgpr::hamiltonian::{lcu_decompose, EvolutionOracle};
use qgpr::io::read_dataset;
use qgpr::pipeline::{
    classical_predict, compare, run_quantum, ComparisonReport, EigenvalueMode, KernelSource, RunConfig,
};
use qgpr::{Dataset, Error};

const EXIT_STAGE_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "qgpr", version, about = "Simulated quantum Gaussian process regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cholesky reference prediction only.
    Classical(RunArgs),
    /// Full simulated quantum pipeline.
    Quantum(RunArgs),
    /// Both, with absolute errors. `--data` may be a directory of datasets.
    Compare(RunArgs),
    /// Coherent-state kernel estimate against the exact Gram matrix.
    KernelCheck(RunArgs),
    /// Eigenvalue diagnostics of the kernel matrix.
    Spectrum(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Qpe,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Classical,
    Coherent,
}

#[derive(Clone, Copy, Debug)]
struct Auto<T>(Option<T>);

impl<T: FromStr> FromStr for Auto<T> {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" | "ideal" => Ok(Auto(None)),
            _ => s
                .parse()
                .map(|v| Auto(Some(v)))
                .map_err(|_| format!("`{s}` is not a number")),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Dataset file (CSV or JSON), or a directory for `compare`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    sigma2: f64,
    #[arg(long, default_value_t = 8)]
    qpe_bits: usize,
    /// Rotation constant, or `auto`.
    #[arg(long = "c", default_value = "auto")]
    c: Auto<f64>,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "classical")]
    kernel: KernelArg,
    /// Shot count, or `ideal`.
    #[arg(long, default_value = "ideal")]
    shots: Auto<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Phase-estimation time; defaults to 2π / (1.1 λ_max).
    #[arg(long)]
    evolution_time: Option<f64>,
    /// Include wall-clock timings in `compare` reports.
    #[arg(long)]
    timings: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            noise_variance: self.sigma2,
            qpe_bits: self.qpe_bits,
            rotation_constant: self.c.0,
            truncation_delta: self.delta,
            eigenvalue_mode: match self.mode {
                ModeArg::Exact => EigenvalueMode::Exact,
                ModeArg::Qpe => EigenvalueMode::Qpe,
            },
            kernel_source: match self.kernel {
                KernelArg::Classical => KernelSource::Classical,
                KernelArg::Coherent => KernelSource::Coherent,
            },
            shots: self.shots.0,
            seed: self.seed,
            evolution_time: self.evolution_time,
        }
    }
}

struct Failure {
    dataset: Option<String>,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure { dataset: None, error }
    }
}

fn to_json<S: Serialize>(v: &S) -> String {
    serde_json::to_string_pretty(v).expect("output serializes")
}

fn load(path: &Path) -> Result<Dataset<f64>, Failure> {
    read_dataset(path).map_err(|error| Failure {
        dataset: Some(path.display().to_string()),
        error,
    })
}

fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "csv" | "json"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn compare_one(path: &Path, cfg: &RunConfig, timings: bool) -> Result<ComparisonReport, Failure> {
    let d = load(path)?;
    let mut report = compare(&d, cfg, timings).map_err(|error| Failure {
        dataset: Some(path.display().to_string()),
        error,
    })?;
    report.dataset = path.file_name().map(|n| n.to_string_lossy().into_owned());
    Ok(report)
}

fn run(command: &Command) -> Result<String, Failure> {
    let (Command::Classical(args)
    | Command::Quantum(args)
    | Command::Compare(args)
    | Command::KernelCheck(args)
    | Command::Spectrum(args)) = command;
    let cfg = args.config();
    cfg.validate()?;

    match command {
        Command::Compare(_) if args.data.is_dir() => {
            let files = dataset_files(&args.data)?;
            let reports: Vec<ComparisonReport> = files
                .par_iter()
                .map(|p| compare_one(p, &cfg, args.timings))
                .collect::<Result<_, _>>()?;
            Ok(to_json(&reports))
        }
        Command::Compare(_) => Ok(compare_one(&args.data, &cfg, args.timings)?.to_json()),
        Command::Classical(_) => {
            let p = classical_predict(&load(&args.data)?, &cfg)?;
            Ok(to_json(
                &json!({ "mean": p.mean, "variance": p.variance, "config": cfg }),
            ))
        }
        Command::Quantum(_) => {
            let r = run_quantum(&load(&args.data)?, &cfg)?;
            Ok(to_json(&json!({
                "mean": r.prediction.mean,
                "variance": r.prediction.variance,
                "mean_interval": r.mean_interval.map(|(a, b)| [a, b]),
                "variance_interval": r.variance_interval.map(|(a, b)| [a, b]),
                "rotation_constant": r.rotation_constant,
                "evolution_time": r.evolution_time,
                "success_probabilities": r.success_probabilities,
                "config": cfg,
            })))
        }
        Command::KernelCheck(_) => {
            let d = load(&args.data)?;
            let kc = KernelConfig::new(cfg.truncation_delta);
            let prepared = prepare_points(d.inputs(), &kc)?;
            let estimate = coherent_gram(d.inputs(), &kc)?;
            let exact = gram_matrix(d.inputs());
            let deviation = (&estimate - &exact).abs().max();
            Ok(to_json(&json!({
                "points": d.len(),
                "delta": cfg.truncation_delta,
                "truncation": prepared.truncation,
                "max_deviation": deviation,
            })))
        }
        Command::Spectrum(_) => {
            let d = load(&args.data)?;
            let sys = kernel_matrix(&d)?;
            let lcu = lcu_decompose(sys.gram())?;
            Ok(to_json(&json!({
                "eigenvalues": sys.eigenvalues().iter().collect::<Vec<_>>(),
                "condition_number": sys.condition_number(),
                "regularized_condition_number":
                    (sys.max_eigenvalue() + cfg.noise_variance) / (sys.min_eigenvalue().max(0.0) + cfg.noise_variance),
                "default_evolution_time": EvolutionOracle::default_time(sys.max_eigenvalue()),
                "circulant": lcu.is_exact(),
                "circulant_residual": lcu.residual(),
            })))
        }
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    let (Command::Classical(args)
    | Command::Quantum(args)
    | Command::Compare(args)
    | Command::KernelCheck(args)
    | Command::Spectrum(args)) = &cli.command;

    match run(&cli.command) {
        Ok(text) => match &args.out {
            Some(path) => match fs::write(path, text + "\n") {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("cannot write {}: {e}", path.display());
                    ExitCode::from(EXIT_STAGE_FAILURE)
                }
            },
            None => {
                emit(&text);
                ExitCode::SUCCESS
            }
        },
        Err(Failure { dataset, error }) => {
            let body = json!({
                "error": {
                    "stage": error.stage(),
                    "kind": error.kind(),
                    "message": error.to_string(),
                    "dataset": dataset,
                }
            });
            emit(&to_json(&body));
            ExitCode::from(EXIT_STAGE_FAILURE)
        }
    }
}
