//! `credo`: fit, calibrate and evaluate credal-conformal regression intervals.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use credo_core::data::{self, TargetColumn};
use credo_core::harness::{
    self, BackendConfig, CalibrationFile, ExperimentConfig, GammaConfig, Method, ModelBundle, PlotKind,
    OUTPUT_DIR_ENV,
};
use credo_core::posterior::{BasisSpec, EnsembleConfig, Levels, NigPrior, DEFAULT_DRAWS};

const DEFAULT_OUTPUT_DIR: &str = "credo-output";

#[derive(Parser)]
#[command(name = "credo", version, about = "Credal-envelope conformal regression intervals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scenario to CSV.
    Generate(GenerateArgs),
    /// Fit a posterior backend and save a model bundle.
    Fit(FitArgs),
    /// Calibrate one method on held-out rows.
    Calibrate(CalibrateArgs),
    /// Predict intervals for new rows.
    Predict(PredictArgs),
    /// Run the repeated-split protocol from a JSON config.
    Experiment(ExperimentArgs),
    /// Turn a report's per-point table into plot CSVs.
    PlotData(PlotDataArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario id (1, 2 or 3).
    #[arg(long)]
    scenario: u8,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    ConjugateBlr,
    BootstrapEnsemble,
}

#[derive(Clone, Copy, ValueEnum)]
enum Basis {
    Linear,
    Rbf,
}

#[derive(Args)]
struct FitArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Target column name or 0-based index.
    #[arg(long, default_value = "y")]
    target: TargetColumn,
    #[arg(long, value_enum, default_value_t = Backend::ConjugateBlr)]
    backend: Backend,
    /// Posterior draws or ensemble members.
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    draws: usize,
    #[arg(long, value_enum, default_value_t = Basis::Linear)]
    basis: Basis,
    /// Number of RBF centers.
    #[arg(long, default_value_t = 24)]
    centers: usize,
    /// RBF bandwidth as a multiple of the median center spacing.
    #[arg(long, default_value_t = 1.0)]
    bandwidth_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha0: f64,
    /// Trimming level of the fixed-gamma method.
    #[arg(long, default_value_t = 0.425)]
    gamma: f64,
    /// Neighbour count for the scarcity score (default: heuristic).
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Calibration CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    target: TargetColumn,
    /// credo, credo-adaptive or cqr.
    #[arg(long, default_value = "credo-adaptive")]
    method: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calibration: PathBuf,
    /// Rows to predict; a target column, if present, adds coverage.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    target: TargetColumn,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PlotDataArgs {
    /// Directory holding points.csv, or the file itself.
    #[arg(long)]
    report: PathBuf,
    /// intervals, decomposition, gamma-profile or all.
    #[arg(long, default_value = "all")]
    kind: String,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn generate(args: GenerateArgs) -> Result<()> {
    let ds = data::generate_scenario(args.scenario, args.n, args.seed)?;
    data::write_csv(&ds, &args.out, "y")?;
    println!("wrote {} rows to {}", ds.len(), args.out.display());
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let train = data::load_csv(&args.data, &args.target)?;
    let basis = match args.basis {
        Basis::Linear => BasisSpec::Linear,
        Basis::Rbf => BasisSpec::Rbf {
            centers: args.centers,
            bandwidth_scale: args.bandwidth_scale,
        },
    };
    let backend = match args.backend {
        Backend::ConjugateBlr => BackendConfig::ConjugateBlr {
            prior: NigPrior::default(),
            n_draws: args.draws,
            basis,
        },
        Backend::BootstrapEnsemble => BackendConfig::BootstrapEnsemble {
            n_members: args.draws,
            basis,
            learning_rate: EnsembleConfig::default().learning_rate,
            epochs: EnsembleConfig::default().epochs,
        },
    };
    let gamma = GammaConfig {
        fixed: args.gamma,
        knn_k: args.knn_k,
        ..GammaConfig::default()
    };
    let levels = Levels::new(args.alpha, args.alpha0)?;
    let bundle = harness::fit_bundle(&train, &backend, levels, gamma, args.seed)?;
    write_json(&args.out, &bundle)?;
    println!(
        "fitted {} with {} draws on {} rows; bundle at {}",
        bundle.model.backend_name(),
        bundle.model.n_draws(),
        train.len(),
        args.out.display()
    );
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let bundle: ModelBundle = read_json(&args.model)?;
    let cal = data::load_csv(&args.data, &args.target)?;
    let method: Method = args.method.parse()?;
    let file = harness::calibrate_bundle(&bundle, &cal, method)?;
    write_json(&args.out, &file)?;
    let tau = file.calibration.tau_hat;
    println!(
        "{method}: tau_hat = {} from m = {} scores",
        if tau.is_finite() { tau.to_string() } else { "inf".into() },
        file.calibration.m()
    );
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn predict(args: PredictArgs) -> Result<()> {
    let bundle: ModelBundle = read_json(&args.model)?;
    let calibration: CalibrationFile = read_json(&args.calibration)?;
    let (features, names, targets) = data::load_feature_csv(&args.data, Some(&args.target))?;
    let rows = harness::predict_rows(&bundle, &calibration, &features, targets.as_deref())?;

    let mut writer = csv::Writer::from_path(&args.out)?;
    let mut header = names.clone();
    header.extend(
        [
            "lower", "upper", "base_lower", "base_upper", "gamma", "scarcity", "aleatoric", "epistemic",
            "slack",
        ]
        .map(String::from),
    );
    if targets.is_some() {
        header.extend(["y", "covered"].map(String::from));
    }
    writer.write_record(&header)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec: Vec<String> = features.row(i).iter().map(f64::to_string).collect();
        rec.extend([
            r.lower.to_string(),
            r.upper.to_string(),
            r.base_lower.to_string(),
            r.base_upper.to_string(),
            opt(r.gamma),
            opt(r.scarcity),
            opt(r.aleatoric),
            opt(r.epistemic),
            opt(r.slack),
        ]);
        if let (Some(y), Some(c)) = (r.y, r.covered) {
            rec.extend([y.to_string(), c.to_string()]);
        }
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    if targets.is_some() {
        let covered = rows.iter().filter(|r| r.covered == Some(true)).count();
        println!(
            "{} intervals written to {}; coverage {:.4}",
            rows.len(),
            args.out.display(),
            covered as f64 / rows.len() as f64
        );
    } else {
        println!("{} intervals written to {}", rows.len(), args.out.display());
    }
    Ok(())
}

fn output_dir(flag: Option<PathBuf>, config: Option<&PathBuf>) -> PathBuf {
    flag.or_else(|| config.cloned())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_json(
            &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => ExperimentConfig::default(),
    };
    if let Some(r) = args.repetitions {
        config.repetitions = r;
    }
    if let Some(s) = args.seed {
        config.base_seed = s;
    }
    if let Some(methods) = &args.methods {
        config.methods = methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    }
    if let Some(a) = args.alpha {
        config.levels.alpha = a;
    }
    if let Some(a) = args.alpha0 {
        config.levels.alpha0 = a;
    }
    let dir = output_dir(args.output, config.output_dir.as_ref());
    config.output_dir = Some(dir.clone());

    let report = harness::run_experiment(&config)?;
    harness::write_report(&report, &dir)?;
    for agg in &report.aggregates {
        let r = &agg.report;
        println!(
            "{:<15} AMC {:.3} ({:.3})  ACO {:.3} ({:.3})  SMIS {:.3} ({:.3})  ILR {:.3} ({:.3})",
            agg.method.name(),
            r.amc.mean,
            r.amc.two_sd,
            r.aco.mean,
            r.aco.two_sd,
            r.smis.mean,
            r.smis.two_sd,
            r.ilr.mean,
            r.ilr.two_sd
        );
    }
    if !report.failures.is_empty() {
        eprintln!("{} repetition(s) failed:", report.failures.len());
        for f in &report.failures {
            eprintln!("  repetition {} (seed {}): {}", f.repetition, f.seed, f.message);
        }
    }
    println!("report written to {}", dir.display());
    Ok(())
}

fn plot_data(args: PlotDataArgs) -> Result<()> {
    let points_path = if args.report.is_dir() {
        args.report.join("points.csv")
    } else {
        args.report.clone()
    };
    let points = harness::load_points(&points_path)?;
    let kinds: Vec<PlotKind> = if args.kind == "all" {
        PlotKind::ALL.to_vec()
    } else {
        vec![args.kind.parse()?]
    };
    let dir = match args.output {
        Some(d) => d,
        None => match points_path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        },
    };
    for kind in kinds {
        let path = harness::emit_plot_data(&points, kind, &dir)?;
        println!("{}: {}", kind.name(), path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Predict(a) => predict(a),
        Command::Experiment(a) => experiment(a),
        Command::PlotData(a) => plot_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
