//! Command-line front end for the quantum Gaussian process line-parameter
//! estimation pipeline: signal synthesis, fitting, prediction grids,
//! standalone HHL solves, and approximate circuit compilation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.
//! Errors are emitted as JSON on stderr.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::{BackendChoice, ExperimentConfig};
use qgp::aqc::{compile, AnsatzSpec, CompileOptions};
use qgp::hhl::{self, HhlConfig, RescaleMode};
use qgp::lpe::{
    add_noise, dense_grid, estimate, prediction_grid, sample_training, simulate_signals,
    EstimateReport, SignalBundle,
};
use qgp::numerics::{CMatrix, Complex64, RMatrix, RVector};

#[derive(Parser)]
#[command(name = "qgp", version, about = "quantum GP line parameter estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize clean and noisy signals and write them to CSV + JSON
    Simulate(SimulateArgs),
    /// Fit the nine hyperparameters and report estimated R and L
    Fit(FitArgs),
    /// Emit per-channel prediction grids from a completed fit report
    Predict(PredictArgs),
    /// Standalone HHL operations
    #[command(subcommand)]
    Hhl(HhlCommand),
    /// Approximate circuit compilation
    #[command(subcommand)]
    Aqc(AqcCommand),
    /// Summarize a fit report in human-readable form
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// output directory; overrides the config's `output`
    #[arg(long)]
    out: Option<PathBuf>,
    /// noise seed override
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    /// classical, hhl-exact, or hhl-sampled; overrides the config
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    shots: Option<u64>,
    /// sampling seed override
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// report.json produced by `qgp fit`
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum HhlCommand {
    /// Evaluate y^T A^{-1} y for an SPD matrix via the simulated circuit
    Solve(HhlSolveArgs),
}

#[derive(Args)]
struct HhlSolveArgs {
    /// CSV file holding the SPD matrix, one row per line
    #[arg(long)]
    matrix: PathBuf,
    /// CSV file holding the right-hand-side vector, one entry per line
    #[arg(long)]
    rhs: PathBuf,
    /// evaluation-register size; derived from the condition number if absent
    #[arg(long)]
    nl: Option<usize>,
    /// finite-shot readout instead of the exact statevector
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long, default_value = "exact")]
    rescale: String,
    #[arg(long)]
    seed: Option<u64>,
    /// write the result JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AqcCommand {
    /// Compress a target unitary into a fixed-CNOT-budget ansatz
    Compile(AqcCompileArgs),
}

#[derive(Args)]
struct AqcCompileArgs {
    /// JSON file {"re": [[..]], "im": [[..]]} holding the target unitary
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value_t = 3)]
    budget: usize,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
}

/// Everything needed to re-run the job: the resolved config (overrides
/// applied) plus the estimation outcome. Timestamps live only in the
/// side-car metadata file so this document is byte-stable per seed.
#[derive(Debug, Serialize, Deserialize)]
struct RunReport {
    version: String,
    config: ExperimentConfig,
    report: EstimateReport,
}

enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<qgp::lpe::LpeError> for CliError {
    fn from(e: qgp::lpe::LpeError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<qgp::engine::EngineError> for CliError {
    fn from(e: qgp::engine::EngineError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<qgp::hhl::HhlError> for CliError {
    fn from(e: qgp::hhl::HhlError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<qgp::aqc::AqcError> for CliError {
    fn from(e: qgp::aqc::AqcError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "kind": e.kind(), "error": e.message() })
            );
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Hhl(HhlCommand::Solve(a)) => cmd_hhl_solve(a),
        Command::Aqc(AqcCommand::Compile(a)) => cmd_aqc_compile(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Timestamp and timing live here, not in the data files, so the data files
/// diff clean across runs.
fn write_metadata(dir: &Path, command: &str, wall_time: f64) -> Result<(), CliError> {
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &dir.join("metadata.json"),
        &serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "timestamp_unix": timestamp,
            "wall_time_seconds": wall_time,
        }),
    )
}

fn build_bundle(cfg: &ExperimentConfig, noise_seed: u64) -> Result<SignalBundle, CliError> {
    let grid = dense_grid(&cfg.network, cfg.sampling.grid_points);
    let clean = simulate_signals(&cfg.network, &grid)?;
    let (s_ii, s_vj, s_vi) = cfg.noise.resolve(&cfg.network);
    Ok(add_noise(&clean, s_ii, s_vj, s_vi, noise_seed))
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let start = std::time::Instant::now();
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.noise.seed = seed;
    }
    let out = a.out.unwrap_or_else(|| cfg.output.clone());
    ensure_dir(&out)?;

    let bundle = build_bundle(&cfg, cfg.noise.seed)?;
    let mut csv = String::from("t,clean_ii,clean_vj,clean_vi,noisy_ii,noisy_vj,noisy_vi\n");
    for k in 0..bundle.grid.len() {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            bundle.grid[k],
            bundle.clean_ii[k],
            bundle.clean_vj[k],
            bundle.clean_vi[k],
            bundle.noisy_ii[k],
            bundle.noisy_vj[k],
            bundle.noisy_vi[k],
        )
        .expect("string write");
    }
    std::fs::write(out.join("signals.csv"), csv)?;
    write_json(&out.join("bundle.json"), &bundle)?;
    write_metadata(&out, "simulate", start.elapsed().as_secs_f64())?;
    println!("wrote {} rows to {}", bundle.grid.len(), out.display());
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<(), CliError> {
    let start = std::time::Instant::now();
    let mut cfg = load_config(&a.config)?;
    if let Some(b) = &a.backend {
        cfg.backend = b.parse::<BackendChoice>().map_err(CliError::Config)?;
    }
    if let Some(shots) = a.shots {
        cfg.shots = shots;
    }
    if let Some(seed) = a.seed {
        cfg.sampling.seed = seed;
    }
    let out = a.out.unwrap_or_else(|| cfg.output.clone());
    ensure_dir(&out)?;

    let bundle = build_bundle(&cfg, cfg.noise.seed)?;
    let backend = cfg.engine_backend();
    let report = estimate(
        &bundle,
        cfg.sampling.counts,
        cfg.sampling.jitter,
        cfg.sampling.seed,
        &backend,
        &cfg.optimizer,
    )?;

    let mut trace = String::from("evaluation,best_nlml\n");
    for (i, v) in report.fit.nlml_trace.iter().enumerate() {
        writeln!(trace, "{},{}", i + 1, v).expect("string write");
    }
    std::fs::write(out.join("trace.csv"), trace)?;
    let run = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg,
        report,
    };
    write_json(&out.join("report.json"), &run)?;
    write_metadata(&out, "fit", start.elapsed().as_secs_f64())?;
    println!(
        "R {} ({}%), L {} ({}%), report in {}",
        run.report.r_hat,
        run.report.error_r_percent,
        run.report.l_hat,
        run.report.error_l_percent,
        out.display()
    );
    Ok(())
}

fn load_report(path: &Path) -> Result<RunReport, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let start = std::time::Instant::now();
    let run = load_report(&a.report)?;
    let cfg = &run.config;
    let out = a
        .out
        .unwrap_or_else(|| a.report.parent().unwrap_or(Path::new(".")).to_path_buf());
    ensure_dir(&out)?;

    // the sampling pipeline is deterministic per seed, so the training set
    // is rebuilt from the config echo rather than stored verbatim
    let bundle = build_bundle(cfg, cfg.noise.seed)?;
    let data = sample_training(
        &bundle,
        cfg.sampling.counts,
        cfg.sampling.jitter,
        cfg.sampling.seed,
    )?;
    let grids = prediction_grid(&bundle, &data, &run.report.fit.theta_star, a.n_points)?;
    for cp in &grids {
        let mut csv = String::from("t,mean,variance,truth\n");
        for row in &cp.rows {
            writeln!(csv, "{},{},{},{}", row.t, row.mean, row.variance, row.truth)
                .expect("string write");
        }
        let name = format!("predictions_{}.csv", cp.channel.as_str());
        std::fs::write(out.join(name), csv)?;
    }
    write_metadata(&out, "predict", start.elapsed().as_secs_f64())?;
    println!(
        "wrote {} channels x {} rows to {}",
        grids.len(),
        a.n_points,
        out.display()
    );
    Ok(())
}

fn parse_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            // permit one non-numeric header row at the top
            Err(e) if lineno == 0 && rows.is_empty() => {
                let _ = e;
            }
            Err(e) => {
                return Err(CliError::Config(format!(
                    "{} line {}: {e}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(CliError::Config(format!("{}: ragged rows", path.display())));
    }
    Ok(rows)
}

fn cmd_hhl_solve(a: HhlSolveArgs) -> Result<(), CliError> {
    let rows = parse_matrix_csv(&a.matrix)?;
    let n = rows.len();
    if rows[0].len() != n {
        return Err(CliError::Config(format!(
            "matrix must be square, got {}x{}",
            n,
            rows[0].len()
        )));
    }
    let k = RMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let rhs_rows = parse_matrix_csv(&a.rhs)?;
    let y: Vec<f64> = if rhs_rows.len() == 1 {
        rhs_rows[0].clone()
    } else {
        rhs_rows
            .iter()
            .map(|r| {
                if r.len() == 1 {
                    Ok(r[0])
                } else {
                    Err(CliError::Config("rhs must be a vector".into()))
                }
            })
            .collect::<Result<_, _>>()?
    };
    if y.len() != n {
        return Err(CliError::Config(format!(
            "rhs length {} does not match matrix size {n}",
            y.len()
        )));
    }

    let rescale_mode = match a.rescale.as_str() {
        "exact" => RescaleMode::Exact,
        "dmin" => RescaleMode::Dmin,
        other => {
            return Err(CliError::Config(format!(
                "rescale: unknown value `{other}`, expected exact or dmin"
            )))
        }
    };
    let backend = match a.shots {
        Some(shots) => hhl::Backend::Sampled {
            shots,
            seed: a.seed.unwrap_or(0),
        },
        None => hhl::Backend::ExactStatevector,
    };
    let cfg = HhlConfig {
        eval_qubits: a.nl,
        backend,
        rescale_mode,
        ..HhlConfig::default()
    };
    let noise = RVector::zeros(n);
    let result = hhl::quadratic_form(&k, &noise, &RVector::from_vec(y), &cfg)?;
    match a.out {
        Some(path) => write_json(&path, &result)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&result).map_err(|e| CliError::Io(e.to_string()))?
        ),
    }
    Ok(())
}

#[derive(Deserialize)]
struct UnitaryFile {
    re: Vec<Vec<f64>>,
    im: Option<Vec<Vec<f64>>>,
}

fn cmd_aqc_compile(a: AqcCompileArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.target)
        .map_err(|e| CliError::Io(format!("{}: {e}", a.target.display())))?;
    let uf: UnitaryFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let n = uf.re.len();
    if n == 0 || uf.re.iter().any(|r| r.len() != n) {
        return Err(CliError::Config("target `re` must be square".into()));
    }
    if let Some(im) = &uf.im {
        if im.len() != n || im.iter().any(|r| r.len() != n) {
            return Err(CliError::Config(
                "target `im` must match the shape of `re`".into(),
            ));
        }
    }
    if !n.is_power_of_two() {
        return Err(CliError::Config(format!(
            "target dimension {n} is not a power of two"
        )));
    }
    let width = n.trailing_zeros() as usize;
    let target = CMatrix::from_fn(n, n, |i, j| {
        Complex64::new(uf.re[i][j], uf.im.as_ref().map_or(0.0, |im| im[i][j]))
    });
    let spec = AnsatzSpec::new(width, a.budget);
    let opts = CompileOptions {
        max_iters: a.max_iters,
        tolerance: a.tolerance,
        restarts: a.restarts,
        seed: a.seed,
    };
    let result = compile(&target, &spec, &opts)?;
    let gates = result.circuit.gates.len();
    let payload = serde_json::json!({
        "width": width,
        "cnot_budget": a.budget,
        "gate_count": gates,
        "result": result,
    });
    match a.out {
        Some(path) => write_json(&path, &payload)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&payload).map_err(|e| CliError::Io(e.to_string()))?
        ),
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let run = load_report(&a.report)?;
    println!("version: {}", run.version);
    println!("backend: {:?}", run.config.backend);
    println!(
        "R: {} estimated vs {} true ({}% error)",
        run.report.r_hat, run.report.r_true, run.report.error_r_percent
    );
    println!(
        "L: {} estimated vs {} true ({}% error)",
        run.report.l_hat, run.report.l_true, run.report.error_l_percent
    );
    println!(
        "objective evaluations: {}, final NLML: {}",
        run.report.fit.iterations,
        run.report
            .fit
            .nlml_trace
            .last()
            .copied()
            .unwrap_or(f64::NAN)
    );
    if let Some(stats) = &run.report.fit.backend_stats {
        println!(
            "quantum evaluations: {} (failed {}), eval qubits {}, circuit width {}",
            stats.quantum_evaluations,
            stats.failed_evaluations,
            stats.eval_qubits_used,
            stats.circuit_width
        );
    }
    Ok(())
}
