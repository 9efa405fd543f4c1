//! Run configs, solver dispatch and artifact writing for the `sln-me` binary.

pub mod config;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use sln_me::bath::{build_kernels, CorrelationKernel, KernelWarning};
use sln_me::hierarchy::{self, tractability_report, HierarchyConfig, Truncation};
use sln_me::noise::{validate_ensemble, NoiseFactors, NoisePath};
use sln_me::reference::{exact_oracle, solve_convolved, solve_lindblad, solve_tcl2};
use sln_me::series::{compare_series, DensityMatrixSeries, SeriesDistance};
use sln_me::sln::{ensemble_average, EnsembleConfig, Form};
use thiserror::Error;

pub use config::{BathConfig, PairingName, RunConfig, SolverName};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Core(#[from] sln_me::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),

    /// The run finished and wrote its artifacts, but failed a health check.
    #[error("unhealthy run: {}", reasons.join("; "))]
    Unhealthy { reasons: Vec<String>, output: PathBuf },
}

impl CliError {
    pub fn key(key: &str, message: impl Into<String>) -> Self {
        CliError::Config { key: key.to_string(), message: message.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Core(_) => "solver",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Threads(_) => "threads",
            CliError::Unhealthy { .. } => "unhealthy",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Unhealthy { .. } => 3,
            _ => 1,
        }
    }

    /// Machine-readable form written to stderr by the binary.
    pub fn to_json(&self) -> Value {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            CliError::Config { key, .. } => body["key"] = json!(key),
            CliError::Unhealthy { reasons, output } => {
                body["reasons"] = json!(reasons);
                body["output"] = json!(output);
            }
            _ => {}
        }
        json!({ "error": body })
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub solver: Option<SolverName>,
    pub trajectories: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub stride: Option<usize>,
    pub pairing: Option<PairingName>,
    pub threads: Option<usize>,
    pub validate_noise: bool,
    pub dump_noise: bool,
}

impl RunOptions {
    pub fn apply(&self, mut cfg: RunConfig) -> RunConfig {
        if let Some(s) = self.solver {
            cfg.solver = s;
        }
        if let Some(m) = self.trajectories {
            cfg.trajectories = Some(m);
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(out) = &self.output {
            cfg.output = Some(out.clone());
        }
        if let Some(s) = self.stride {
            cfg.stride = s;
        }
        if let Some(p) = self.pairing {
            cfg.pairing = p;
        }
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output: PathBuf,
    pub series: DensityMatrixSeries,
    pub summary: Value,
}

/// Loads `config_path`, applies `opts` and runs, optionally on a dedicated
/// pool of `opts.threads` workers.
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let cfg = opts.apply(RunConfig::load(config_path)?);
    match opts.threads {
        Some(0) => Err(CliError::key("threads", "must be >= 1")),
        Some(k) => rayon::ThreadPoolBuilder::new().num_threads(k).build()?.install(|| execute(&cfg, opts)),
        None => execute(&cfg, opts),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn kernel_for(cfg: &RunConfig) -> Result<CorrelationKernel, CliError> {
    let grid = cfg.grid()?;
    match (&cfg.bath, cfg.spectrum()?) {
        (BathConfig::Exponential { gamma, tau_c }, _) => {
            Ok(CorrelationKernel::exponential(*gamma, *tau_c, grid.dt, grid.n)?)
        }
        (_, Some(spec)) => Ok(build_kernels(&spec, grid.dt, grid.n)?),
        (_, None) => unreachable!("mode baths always yield a spectrum"),
    }
}

fn warnings_json(kernel: &CorrelationKernel) -> Value {
    kernel
        .warnings
        .iter()
        .map(|w| match w {
            KernelWarning::CoarseGrid { dt_omega_max } => json!({ "coarse_grid": { "dt_omega_max": dt_omega_max } }),
        })
        .collect()
}

/// Runs a resolved config and writes `series.csv`, `summary.json` and the
/// solver-specific artifacts into the output directory.
pub fn execute(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let started = Instant::now();
    cfg.validate()?;
    let output = cfg.output.clone().ok_or_else(|| CliError::key("output", "no output directory given"))?;
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    std::fs::create_dir_all(&output)?;

    let mut summary = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "solver": cfg.solver.as_str(),
        "master_seed": cfg.master_seed,
        "grid": { "dt": grid.dt, "n": grid.n, "t_max": grid.t_max() },
    });
    let mut flags: Vec<String> = Vec::new();
    let solve_started = Instant::now();

    let series = match cfg.solver {
        SolverName::Sln | SolverName::SlnPair => {
            let spec = cfg.spectrum()?.expect("validated: mode spectrum");
            let trajectories = cfg.trajectories.expect("validated: trajectories");
            if opts.validate_noise || opts.dump_noise {
                let factors = NoiseFactors::new(&spec, grid)?;
                if opts.dump_noise {
                    NoisePath::sample(&factors, cfg.master_seed, 0)
                        .tabulate()
                        .write_csv(create(&output, "noise.csv")?)?;
                }
                if opts.validate_noise {
                    let kernel = build_kernels(&spec, grid.dt, grid.n)?;
                    let report = validate_ensemble(&factors, &kernel, cfg.master_seed, trajectories)?;
                    report.write_csv(create(&output, "noise-stats.csv")?)?;
                    if !report.passed() {
                        flags.push(format!(
                            "noise statistics: {} entries beyond {} standard errors",
                            report.flagged(),
                            report.sigmas
                        ));
                    }
                    summary["noise_validation"] = json!({
                        "samples": report.samples,
                        "sigmas": report.sigmas,
                        "max_abs_deviation": report.max_abs_deviation(),
                        "max_z_score": report.max_z_score(),
                        "flagged": report.flagged(),
                        "passed": report.passed(),
                    });
                }
            }
            let form = if cfg.solver == SolverName::Sln { Form::Density } else { Form::Pair };
            let config = EnsembleConfig { trajectories, master_seed: cfg.master_seed, form };
            let stats = ensemble_average(&model, &spec, grid, config)?;
            if !stats.healthy() {
                flags.push(format!("{} of {} trajectories diverged", stats.divergent, stats.trajectories));
            }
            summary["ensemble"] = json!({
                "trajectories": stats.trajectories,
                "divergent": stats.divergent,
                "median_stderr": stats.median_stderr(),
            });
            stats.mean.write_stderr_csv(create(&output, "stderr.csv")?)?;
            stats.mean
        }
        SolverName::Hierarchy1 | SolverName::Hierarchy2 => {
            let kernel = kernel_for(cfg)?;
            summary["kernel_warnings"] = warnings_json(&kernel);
            let config = match cfg.solver {
                SolverName::Hierarchy1 => HierarchyConfig::class1(),
                _ => HierarchyConfig::class2(cfg.stride).with_pairing(cfg.pairing.into()),
            };
            let sol = hierarchy::solve(&model, &kernel, config)?;
            sol.weights.write_csv(create(&output, "weights.csv")?)?;
            let mut info = json!({
                "truncation": if config.truncation == Truncation::Class1 { "class1" } else { "class2" },
                "stride": config.stride,
                "max_trace_deviation": sol.max_trace_dev,
                "min_eigenvalue": sol.min_eigenvalue,
            });
            if config.truncation == Truncation::Class2 {
                let report = tractability_report(&sol.weights, cfg.thresholds());
                info["pairing"] = json!(cfg.pairing);
                summary["verdict"] = json!(report.verdict.as_str());
                summary["tractability"] = json!({
                    "max_ratio": report.max_ratio,
                    "max_ratio_time": report.max_ratio_time,
                    "error_estimate": report.error_estimate,
                    "undefined_steps": report.undefined_steps,
                    "valid_below": cfg.thresholds.valid_below,
                    "invalid_above": cfg.thresholds.invalid_above,
                });
            }
            if sol.trace_flagged() {
                flags.push(format!(
                    "trace deviation {:.3e} exceeds {:e}",
                    sol.max_trace_dev,
                    hierarchy::TRACE_TOLERANCE
                ));
            }
            summary["hierarchy"] = info;
            sol.series
        }
        SolverName::Convolved | SolverName::Tcl2 => {
            let kernel = kernel_for(cfg)?;
            summary["kernel_warnings"] = warnings_json(&kernel);
            if cfg.solver == SolverName::Convolved {
                solve_convolved(&model, &kernel)?
            } else {
                solve_tcl2(&model, &kernel)?
            }
        }
        SolverName::Lindblad => {
            let BathConfig::Exponential { gamma, .. } = cfg.bath else { unreachable!("validated: exponential bath") };
            solve_lindblad(&model, gamma, grid)?
        }
        SolverName::Oracle => {
            let spec = cfg.spectrum()?.expect("validated: mode spectrum");
            let result = exact_oracle(&model, &spec, grid, cfg.oracle_config())?;
            if cfg.oracle.check_convergence && !result.converged {
                flags.push(format!(
                    "oracle not converged at Fock cutoff {} (change {:.3e})",
                    cfg.oracle.fock_cutoff,
                    result.cutoff_change.unwrap_or(f64::NAN)
                ));
            }
            summary["oracle"] = json!({
                "fock_cutoff": cfg.oracle.fock_cutoff,
                "converged": result.converged,
                "cutoff_change": result.cutoff_change,
                "dimension": result.dimension,
                "norm_drift": result.norm_drift,
            });
            result.series
        }
    };
    let solve_seconds = solve_started.elapsed().as_secs_f64();

    series.write_csv(create(&output, "series.csv")?)?;
    summary["trace_deviation_max"] = json!(max_of(series.trace_deviation()));
    summary["hermiticity_deviation_max"] = json!(max_of(series.hermiticity_deviation()));
    summary["min_eigenvalue"] = json!(series.min_eigenvalues().into_iter().fold(f64::INFINITY, f64::min));
    summary["healthy"] = json!(flags.is_empty());
    summary["flags"] = json!(flags);
    summary["timings"] = json!({ "solve_seconds": solve_seconds, "total_seconds": started.elapsed().as_secs_f64() });
    summary["config"] = serde_json::to_value(cfg)?;
    serde_json::to_writer_pretty(create(&output, "summary.json")?, &summary)?;

    if !flags.is_empty() {
        return Err(CliError::Unhealthy { reasons: flags, output });
    }
    Ok(RunOutcome { output, series, summary })
}

/// Reads a series from `path`. A directory means its `series.csv`; standard
/// errors are picked up from a sibling `stderr.csv` when present.
pub fn load_series(path: &Path) -> Result<DensityMatrixSeries, CliError> {
    let file = if path.is_dir() { path.join("series.csv") } else { path.to_path_buf() };
    let series = DensityMatrixSeries::read_csv(File::open(&file)?)?;
    let stderr = file.with_file_name("stderr.csv");
    if file.file_name().is_some_and(|n| n == "series.csv") && stderr.exists() {
        return Ok(series.read_stderr_csv(File::open(stderr)?)?);
    }
    Ok(series)
}

pub fn distance_json(d: &SeriesDistance) -> Value {
    json!({
        "max": d.max,
        "l2": d.l2,
        "populations": d.populations,
        "coherences": d.coherences,
        "pooled_se_ratio": d.pooled_se_ratio,
        "max_z": d.max_z,
    })
}

/// Distances between two stored series.
pub fn compare(a: &Path, b: &Path) -> Result<SeriesDistance, CliError> {
    Ok(compare_series(&load_series(a)?, &load_series(b)?)?)
}
