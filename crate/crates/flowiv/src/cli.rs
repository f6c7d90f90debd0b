//! Command-line front end: `fit`, `simulate`, and `ftest` subcommands with
//! a flat TOML config file, flag overrides, and atomic file outputs.
//!
//! Every run is driven by one seed recorded in `report.json`, and reports
//! carry no timestamps, so identical configurations produce byte-identical
//! outputs (simulation runtime columns excepted).

use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{capacity_report, CapacityOptions, CapacityReport};
use crate::baselines::{weak_instrument_ftest, FtestReport};
use crate::error::{Error, Result, StageExt};
use crate::ingest::{
    build_lagged_instrument, read_detector_csv, ColumnMap, InstrumentOptions, InstrumentReport,
    SiteConfig,
};
use crate::npiv::{fit_np, fit_npiv, McmcConfig, MixtureSpec, SplinePriors};
use crate::simulation::{
    ovb_demo, reverse_causality_demo, run_mc_comparison, Estimator, OvbDemo,
    ReverseCausalityDemo, SimConfig,
};
use crate::splines::KnotVector;
use crate::summary::{error_density_grid, CurveBand, DensityGridSpec};

const SCHEMA_VERSION: u32 = 1;
const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Error-density grid resolution per axis and sizing in posterior sds.
const DENSITY_GRID: usize = 60;
const DENSITY_SPREAD: f64 = 3.0;

#[derive(Parser)]
#[command(
    name = "flowiv",
    version,
    about = "Instrumented flow-occupancy curve estimation for loop detector data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the instrumented and exogenous flow curves from a detector CSV.
    Fit(FitArgs),
    /// Run the Monte Carlo estimator comparison against the analytic truth.
    Simulate(SimArgs),
    /// Build the instrument and report binned first-stage F statistics.
    Ftest(FtestArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Flat TOML config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Detector CSV path.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Band miscoverage level in (0, 0.5].
    #[arg(long)]
    delta: Option<f64>,
    /// Interior knots per spline.
    #[arg(long)]
    knots: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Use the short sampler profile instead of the full-length one.
    #[arg(long)]
    desk_profile: bool,
    /// Occupancy split points for the F-test bins.
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<f64>>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample size per replication.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated estimators: 2sls_quadratic, 2sls_true, bayes_np, bayes_npiv.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Use the long thinned sampler profile instead of the short default.
    #[arg(long)]
    paper_profile: bool,
    /// Include the omitted-variable and reverse-causality demonstrations.
    #[arg(long)]
    appendix_a: bool,
}

#[derive(Args)]
struct FtestArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Occupancy split points, e.g. --bins 15 for the (<=15, >15) pair.
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<f64>>,
}

/// Flat config file keys. Unknown keys are rejected so typos surface.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    delta: Option<f64>,
    knots: Option<usize>,
    degree: Option<usize>,
    penalty_order: Option<usize>,
    draws: Option<usize>,
    burnin: Option<usize>,
    thin: Option<usize>,
    grid_points: Option<usize>,
    desk_profile: Option<bool>,
    bins: Option<Vec<f64>>,
    // Site selection.
    detectors: Option<Vec<String>>,
    window_start: Option<u32>,
    window_end: Option<u32>,
    workdays_only: Option<bool>,
    holidays: Option<Vec<NaiveDate>>,
    date_start: Option<NaiveDate>,
    date_end: Option<NaiveDate>,
    // Instrument construction.
    half_window: Option<u32>,
    lag_days: Option<u32>,
    max_missing: Option<f64>,
    // Spline priors.
    tau_shape: Option<f64>,
    tau_rate: Option<f64>,
    intercept_var: Option<f64>,
    // Error mixture.
    truncation: Option<usize>,
    mix_tau: Option<f64>,
    mix_shape: Option<f64>,
    zeta_shape: Option<f64>,
    zeta_rate: Option<f64>,
    // Simulation.
    n: Option<usize>,
    error_var: Option<f64>,
    estimators: Option<Vec<String>>,
    paper_profile: Option<bool>,
    appendix_a: Option<bool>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Parse the process arguments, run the request, and return the exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Testable entry point over explicit arguments.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version through this path with code 0.
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.cmd {
        Cmd::Fit(args) => dispatch_fit(args),
        Cmd::Simulate(args) => dispatch_simulate(args),
        Cmd::Ftest(args) => dispatch_ftest(args),
    };
    match outcome {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn required_input(flag: Option<PathBuf>, file: Option<PathBuf>) -> Result<PathBuf> {
    let path = flag
        .or(file)
        .ok_or_else(|| Error::Config("no input CSV given (-–input or config key)".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!(
            "input path {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

fn out_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> Result<PathBuf> {
    let dir = pick(flag, file, PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn check_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::Config(format!(
            "band level delta {delta} outside (0, 0.5]"
        )));
    }
    Ok(delta)
}

fn site_from(file: &FileConfig) -> Result<SiteConfig> {
    let date_range = match (file.date_start, file.date_end) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "date_start and date_end must be given together".into(),
            ))
        }
    };
    SiteConfig {
        name: "cli".into(),
        detectors: file.detectors.clone().unwrap_or_default(),
        window: (
            file.window_start.unwrap_or(0),
            file.window_end.unwrap_or(287),
        ),
        workdays_only: file.workdays_only.unwrap_or(true),
        date_range,
        holidays: file.holidays.clone().unwrap_or_default(),
    }
    .validated()
}

fn instrument_from(file: &FileConfig) -> InstrumentOptions {
    let d = InstrumentOptions::default();
    InstrumentOptions {
        half_window: file.half_window.unwrap_or(d.half_window),
        lag_days: file.lag_days.unwrap_or(d.lag_days),
        max_missing: file.max_missing.unwrap_or(d.max_missing),
    }
}

fn priors_from(file: &FileConfig) -> SplinePriors {
    let d = SplinePriors::default();
    SplinePriors {
        tau_shape: file.tau_shape.unwrap_or(d.tau_shape),
        tau_rate: file.tau_rate.unwrap_or(d.tau_rate),
        intercept_var: file.intercept_var.unwrap_or(d.intercept_var),
        penalty_order: file.penalty_order.unwrap_or(d.penalty_order),
    }
}

fn mixture_from(file: &FileConfig) -> MixtureSpec {
    let d = MixtureSpec::default();
    MixtureSpec {
        tau: file.mix_tau.unwrap_or(d.tau),
        shape: file.mix_shape.unwrap_or(d.shape),
        zeta_shape: file.zeta_shape.unwrap_or(d.zeta_shape),
        zeta_rate: file.zeta_rate.unwrap_or(d.zeta_rate),
        truncation: file.truncation.unwrap_or(d.truncation),
        ..d
    }
}

fn mcmc_from(
    file: &FileConfig,
    desk: bool,
    seed: u64,
    delta: f64,
    draws: Option<usize>,
    burnin: Option<usize>,
    thin: Option<usize>,
) -> McmcConfig {
    let mut cfg = if desk {
        McmcConfig::desk(seed)
    } else {
        McmcConfig::paper(seed)
    };
    cfg.delta = delta;
    if let Some(d) = draws.or(file.draws) {
        cfg.draws = d;
    }
    if let Some(b) = burnin.or(file.burnin) {
        cfg.burn_in = b;
    }
    if let Some(t) = thin.or(file.thin) {
        cfg.thin = t;
    }
    if let Some(g) = file.grid_points {
        cfg.grid_points = g;
    }
    cfg
}

// ---------------------------------------------------------------- fit ----

#[derive(Serialize)]
struct ConfigEcho {
    knots: usize,
    degree: usize,
    bins: Vec<f64>,
    mcmc: McmcConfig,
    priors: SplinePriors,
    mixture: MixtureSpec,
    density_grid: usize,
    density_spread: f64,
}

#[derive(Serialize)]
struct IngestStats {
    rows_accepted: usize,
    rows_rejected: usize,
}

#[derive(Serialize)]
struct BandStats {
    lambda: f64,
    delta: f64,
}

#[derive(Serialize)]
struct EstimatorSection {
    capacity: CapacityReport,
    flow_band: BandStats,
    first_stage_band: Option<BandStats>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct DensitySummary {
    coverage: f64,
    truncated: bool,
}

#[derive(Serialize)]
struct FitReport {
    schema_version: u32,
    software_version: String,
    seed: u64,
    config: ConfigEcho,
    ingest: IngestStats,
    instrument: InstrumentReport,
    instrumented: EstimatorSection,
    exogenous: EstimatorSection,
    first_stage_f: FtestReport,
    error_density: DensitySummary,
}

fn dispatch_fit(args: FitArgs) -> Result<Vec<PathBuf>> {
    let file = FileConfig::load(args.config.as_deref()).stage("config")?;
    let input = required_input(args.input, file.input.clone()).stage("config")?;
    let out = out_dir(args.out, file.out.clone()).stage("config")?;
    let seed = pick(args.seed, file.seed, 1);
    let delta = check_delta(pick(args.delta, file.delta, 0.05)).stage("config")?;
    let knots = pick(args.knots, file.knots, 20);
    let degree = file.degree.unwrap_or(3);
    let bins = pick(args.bins, file.bins.clone(), vec![15.0]);
    let desk = args.desk_profile || file.desk_profile.unwrap_or(false);
    let mcmc = mcmc_from(&file, desk, seed, delta, args.draws, args.burnin, args.thin)
        .validated()
        .stage("config")?;
    let site = site_from(&file).stage("config")?;
    let instrument = instrument_from(&file);
    let priors = priors_from(&file);
    let mixture = mixture_from(&file);

    let (records, ingest_report) =
        read_detector_csv(&input, &ColumnMap::default()).stage("ingest")?;
    let (sample, instr_report) =
        build_lagged_instrument(&records, &site, &instrument).stage("instrument")?;

    let knots_s = KnotVector::from_data(&sample.o, knots, degree).stage("fit")?;
    let knots_h = KnotVector::from_data(&sample.z, knots, degree).stage("fit")?;

    // The two fits are independent given the sample; run them side by side.
    let mcmc_np = McmcConfig {
        seed: seed.wrapping_add(1),
        ..mcmc.clone()
    };
    let (iv_fit, np_fit) = rayon::join(
        || fit_npiv(&sample, knots_s.clone(), knots_h.clone(), &priors, &mixture, &mcmc),
        || fit_np(&sample, knots_s.clone(), &priors, &mixture, &mcmc_np),
    );
    let iv_fit = iv_fit.stage("fit-instrumented")?;
    let np_fit = np_fit.stage("fit-exogenous")?;

    let iv_band = iv_fit.structural_band().stage("summary")?;
    let iv_first = iv_fit
        .first_stage_band()
        .stage("summary")?
        .expect("instrumented fit has a first stage");
    let np_band = np_fit.structural_band().stage("summary")?;

    let capacity_opts = CapacityOptions::default();
    let iv_capacity = capacity_report(&iv_band, &sample.o, &capacity_opts).stage("analysis")?;
    let np_capacity = capacity_report(&np_band, &sample.o, &capacity_opts).stage("analysis")?;

    let ftest = weak_instrument_ftest(&sample, &bins).stage("ftest")?;

    let density_spec =
        DensityGridSpec::from_draws(&iv_fit.mixture, DENSITY_GRID, DENSITY_GRID, DENSITY_SPREAD)
            .stage("summary")?;
    let density = error_density_grid(&iv_fit.mixture, &density_spec).stage("summary")?;

    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        software_version: SOFTWARE_VERSION.to_string(),
        seed,
        config: ConfigEcho {
            knots,
            degree,
            bins: bins.clone(),
            mcmc: mcmc.clone(),
            priors: priors.clone(),
            mixture: mixture.clone(),
            density_grid: DENSITY_GRID,
            density_spread: DENSITY_SPREAD,
        },
        ingest: IngestStats {
            rows_accepted: ingest_report.accepted,
            rows_rejected: ingest_report.rejected.len(),
        },
        instrument: instr_report,
        instrumented: EstimatorSection {
            capacity: iv_capacity,
            flow_band: BandStats {
                lambda: iv_band.lambda,
                delta: iv_band.delta,
            },
            first_stage_band: Some(BandStats {
                lambda: iv_first.lambda,
                delta: iv_first.delta,
            }),
            warnings: iv_fit.warnings.clone(),
        },
        exogenous: EstimatorSection {
            capacity: np_capacity,
            flow_band: BandStats {
                lambda: np_band.lambda,
                delta: np_band.delta,
            },
            first_stage_band: None,
            warnings: np_fit.warnings.clone(),
        },
        first_stage_f: ftest,
        error_density: DensitySummary {
            coverage: density.coverage,
            truncated: density.truncated,
        },
    };

    let curves = curves_csv(&[
        ("bayes_npiv", "s", &iv_band),
        ("bayes_npiv", "h", &iv_first),
        ("bayes_np", "s", &np_band),
    ])
    .stage("write")?;
    let density_csv = density_csv(&density).stage("write")?;
    let report_json = to_json(&report).stage("write")?;

    write_all(
        &out,
        vec![
            ("curves.csv", curves),
            ("error_density.csv", density_csv),
            ("report.json", report_json),
        ],
    )
    .stage("write")
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Numeric {
        context: "report serialization".into(),
        detail: e.to_string(),
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn curves_csv(bands: &[(&str, &str, &CurveBand)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "estimator", "curve", "grid", "mean", "pw_lo", "pw_hi", "sim_lo", "sim_hi",
    ])
    .map_err(Error::from)?;
    for (estimator, curve, band) in bands {
        for j in 0..band.len() {
            w.write_record([
                estimator.to_string(),
                curve.to_string(),
                band.grid[j].to_string(),
                band.mean[j].to_string(),
                band.pw_lo[j].to_string(),
                band.pw_hi[j].to_string(),
                band.sim_lo[j].to_string(),
                band.sim_hi[j].to_string(),
            ])
            .map_err(Error::from)?;
        }
    }
    w.into_inner().map_err(|e| Error::Numeric {
        context: "csv buffer".into(),
        detail: e.to_string(),
    })
}

fn density_csv(grid: &crate::summary::DensityGrid) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["e1", "e2", "density"]).map_err(Error::from)?;
    for (i, &e1) in grid.e1.iter().enumerate() {
        for (j, &e2) in grid.e2.iter().enumerate() {
            w.write_record([
                e1.to_string(),
                e2.to_string(),
                grid.density[i * grid.e2.len() + j].to_string(),
            ])
            .map_err(Error::from)?;
        }
    }
    w.into_inner().map_err(|e| Error::Numeric {
        context: "csv buffer".into(),
        detail: e.to_string(),
    })
}

// ----------------------------------------------------------- simulate ----

#[derive(Serialize)]
struct SummaryRow {
    estimator: String,
    rmse: Option<f64>,
    runtime_secs: f64,
    error: Option<String>,
}

#[derive(Serialize)]
struct AppendixA {
    omitted_variable: Vec<OvbDemo>,
    reverse_causality: Vec<ReverseCausalityDemo>,
}

#[derive(Serialize)]
struct SimReport {
    schema_version: u32,
    software_version: String,
    seed: u64,
    config: SimConfig,
    summary: Vec<SummaryRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    appendix_a: Option<AppendixA>,
}

fn dispatch_simulate(args: SimArgs) -> Result<Vec<PathBuf>> {
    let file = FileConfig::load(args.config.as_deref()).stage("config")?;
    let out = out_dir(args.out, file.out.clone()).stage("config")?;
    let seed = pick(args.seed, file.seed, 1);
    let names = args.estimators.or_else(|| file.estimators.clone());
    let estimators = match names {
        Some(list) => list
            .iter()
            .map(|s| Estimator::parse(s))
            .collect::<Result<Vec<_>>>()
            .stage("config")?,
        None => Estimator::ALL.to_vec(),
    };
    let defaults = SimConfig::default();
    let cfg = SimConfig {
        n: pick(args.n, file.n, defaults.n),
        seed,
        error_var: file.error_var.unwrap_or(defaults.error_var),
        estimators,
        paper_profile: args.paper_profile || file.paper_profile.unwrap_or(false),
        grid_points: file.grid_points.unwrap_or(defaults.grid_points),
        ..defaults
    };
    let appendix = args.appendix_a || file.appendix_a.unwrap_or(false);

    let result = run_mc_comparison(&cfg).stage("simulate")?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["estimator", "grid", "fitted", "truth"])
        .map_err(Error::from)
        .stage("write")?;
    for row in &result.rows {
        let Some(fitted) = &row.fitted else { continue };
        for (j, &g) in result.grid.iter().enumerate() {
            w.write_record([
                row.estimator.label().to_string(),
                g.to_string(),
                fitted[j].to_string(),
                result.truth[j].to_string(),
            ])
            .map_err(Error::from)
            .stage("write")?;
        }
    }
    let comparison = w
        .into_inner()
        .map_err(|e| Error::Numeric {
            context: "csv buffer".into(),
            detail: e.to_string(),
        })
        .stage("write")?;

    let appendix_a = if appendix {
        Some(AppendixA {
            omitted_variable: vec![
                ovb_demo(20_000, 3.0, 2.0, 0.8, seed.wrapping_add(101)).stage("simulate")?,
                ovb_demo(20_000, 3.0, 0.0, 0.8, seed.wrapping_add(102)).stage("simulate")?,
                ovb_demo(20_000, 3.0, 2.0, -0.8, seed.wrapping_add(103)).stage("simulate")?,
            ],
            reverse_causality: vec![
                reverse_causality_demo(20_000, 0.5, 0.5, seed.wrapping_add(104))
                    .stage("simulate")?,
                reverse_causality_demo(20_000, 0.5, 0.0, seed.wrapping_add(105))
                    .stage("simulate")?,
            ],
        })
    } else {
        None
    };

    let report = SimReport {
        schema_version: SCHEMA_VERSION,
        software_version: SOFTWARE_VERSION.to_string(),
        seed,
        config: result.config.clone(),
        summary: result
            .rows
            .iter()
            .map(|r| SummaryRow {
                estimator: r.estimator.label().to_string(),
                rmse: r.rmse,
                runtime_secs: r.runtime_secs,
                error: r.error.clone(),
            })
            .collect(),
        appendix_a,
    };
    let report_json = to_json(&report).stage("write")?;

    write_all(
        &out,
        vec![("comparison.csv", comparison), ("report.json", report_json)],
    )
    .stage("write")
}

// -------------------------------------------------------------- ftest ----

#[derive(Serialize)]
struct FtestRunReport {
    schema_version: u32,
    software_version: String,
    config: FtestEcho,
    ingest: IngestStats,
    instrument: InstrumentReport,
    first_stage_f: FtestReport,
}

#[derive(Serialize)]
struct FtestEcho {
    bins: Vec<f64>,
}

fn dispatch_ftest(args: FtestArgs) -> Result<Vec<PathBuf>> {
    let file = FileConfig::load(args.config.as_deref()).stage("config")?;
    let input = required_input(args.input, file.input.clone()).stage("config")?;
    let out = out_dir(args.out, file.out.clone()).stage("config")?;
    let bins = pick(args.bins, file.bins.clone(), vec![15.0]);
    let site = site_from(&file).stage("config")?;
    let instrument = instrument_from(&file);

    let (records, ingest_report) =
        read_detector_csv(&input, &ColumnMap::default()).stage("ingest")?;
    let (sample, instr_report) =
        build_lagged_instrument(&records, &site, &instrument).stage("instrument")?;
    let ftest = weak_instrument_ftest(&sample, &bins).stage("ftest")?;

    let report = FtestRunReport {
        schema_version: SCHEMA_VERSION,
        software_version: SOFTWARE_VERSION.to_string(),
        config: FtestEcho { bins },
        ingest: IngestStats {
            rows_accepted: ingest_report.accepted,
            rows_rejected: ingest_report.rejected.len(),
        },
        instrument: instr_report,
        first_stage_f: ftest,
    };
    let report_json = to_json(&report).stage("write")?;
    write_all(&out, vec![("report.json", report_json)]).stage("write")
}

// ----------------------------------------------------------- outputs ----

/// Write every file atomically; on any failure remove files written so far
/// so a run leaves either complete outputs or none.
fn write_all(dir: &Path, files: Vec<(&str, Vec<u8>)>) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        match write_atomic(&path, &bytes) {
            Ok(()) => written.push(path),
            Err(e) => {
                for path in &written {
                    let _ = std::fs::remove_file(path);
                }
                return Err(e);
            }
        }
    }
    Ok(written)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    tmp.write_all(bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}
