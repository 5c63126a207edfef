//! Command-line entry point: scenario configuration, command dispatch, and
//! deterministic report emission. Every command is a pure function of
//! (config, flags); repeated runs produce byte-identical output.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qwli::experiments::{
    calibration_workflow, find_offset_for_bias, fringe_doubling_check, histogram_to_csv,
    run_montecarlo, split_calibration_scenarios, systematics_scan, systematics_to_csv,
    trials_to_csv, ExperimentError, SystematicsAxis,
};
use qwli::fitting::{fit_classical, fit_classical_second_order, fit_quantum, FitResult};
use qwli::interferogram::{
    classical_from_csv, classical_to_csv, normalize_classical, normalize_quantum, photon_budget,
    quantum_from_csv, quantum_to_csv, synth_classical, synth_quantum,
};
use qwli::phase::{classical_fit_phase_offset, noon_fit_phase_offset};
use qwli::scenario::{Method, Scenario};

const EXIT_CONFIG: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;
const EXIT_UNUSABLE: u8 = 4;

#[derive(Debug)]
enum CliError {
    /// Invalid configuration or arguments → exit 2.
    Config(String),
    /// Fit did not converge or could not be performed → exit 3.
    Fit(String),
    /// Report produced but flagged unusable → exit 4.
    Unusable(String),
    /// I/O and other runtime failures → exit 1.
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Fit(_) => EXIT_NO_CONVERGENCE,
            CliError::Unusable(_) => EXIT_UNUSABLE,
            CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Fit(m) | CliError::Unusable(m) | CliError::Other(m) => {
                m
            }
        }
    }
}

impl From<qwli::scenario::ScenarioError> for CliError {
    fn from(e: qwli::scenario::ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<qwli::fitting::FitError> for CliError {
    fn from(e: qwli::fitting::FitError) -> Self {
        CliError::Fit(e.to_string())
    }
}

impl From<qwli::phase::PhaseError> for CliError {
    fn from(e: qwli::phase::PhaseError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<qwli::interferogram::InterferogramError> for CliError {
    fn from(e: qwli::interferogram::InterferogramError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Fit(f) => CliError::Fit(f.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario config: a JSON file path or a preset name
    /// (`paper-classical`, `paper-quantum`). Default: paper-classical.
    #[arg(long, default_value = "paper-classical")]
    config: String,
    /// Override the scenario's master seed and synthesis RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format where a choice exists.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for parallel sections (1 forces sequential; default:
    /// available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Print the effective (defaults-resolved) config JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Debug, Parser)]
#[command(
    name = "qwli",
    version,
    about = "Spectrally-resolved white-light interferometry simulator: \
             classical and two-photon N00N-state dispersion measurement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a spectrogram and write it as CSV (or JSON).
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a previously simulated spectrogram; emits a fit-result JSON.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Spectrogram CSV produced by `simulate`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Repeat synth+fit over independent seeds and report the D statistics.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Fit method override: classical, classical-2nd-order, quantum.
        #[arg(long)]
        method: Option<String>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Also write the D histogram CSV to this path.
        #[arg(long)]
        histogram_out: Option<PathBuf>,
    },
    /// Sweep one systematic axis and report classical/quantum D biases, or
    /// solve for the offset explaining a target bias.
    Systematics {
        #[command(flatten)]
        common: Common,
        /// Axis: spectrometer-offset (nm) or arm-imbalance (m).
        #[arg(long)]
        axis: String,
        /// Scan bound; offsets span [-max, max].
        #[arg(long)]
        max: f64,
        /// Number of scan points (forced odd so 0 is included).
        #[arg(long, default_value_t = 9)]
        points: usize,
        /// Instead of scanning, bisect on [0, max] for the offset whose
        /// attributed classical bias reaches this value.
        #[arg(long)]
        target_bias: Option<f64>,
        /// Bias tolerance for --target-bias.
        #[arg(long, default_value_t = 5e-4)]
        bias_tol: f64,
    },
    /// Quantum bare-interferometer calibration: fit bare and loaded
    /// scenarios, subtract, and report the corrected D.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Fraction of the loaded dispersion contributed by the bare setup.
        #[arg(long, default_value_t = 0.10)]
        bare_fraction: f64,
    },
    /// Count fringes of the noiseless classical and quantum patterns and
    /// report their ratio.
    Fringecheck {
        #[command(flatten)]
        common: Common,
    },
}

fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Re-quantize every number in a JSON tree to 9 significant digits so that
/// report files are stable golden artifacts.
fn round9_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.is_f64() {
                    let r: f64 = fmt9(f).parse().expect("9-digit float reparses");
                    if let Some(num) = serde_json::Number::from_f64(r) {
                        *n = num;
                    }
                }
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round9_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round9_json),
        _ => {}
    }
}

fn to_pretty_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::Other(e.to_string()))?;
    round9_json(&mut v);
    serde_json::to_string_pretty(&v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Other(e.to_string()))
}

fn load_scenario(common: &Common) -> Result<Scenario, CliError> {
    let mut scenario = match Scenario::preset(&common.config) {
        Ok(s) => s,
        Err(qwli::scenario::ScenarioError::UnknownPreset(_)) => {
            let text = std::fs::read_to_string(&common.config).map_err(|e| {
                CliError::Config(format!("cannot read config `{}`: {e}", common.config))
            })?;
            Scenario::from_json(&text)?
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(seed) = common.seed {
        scenario.master_seed = seed;
        scenario.noise.rng_seed = seed;
    }
    scenario.validate()?;
    Ok(scenario)
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// True when parallel sections should use the thread pool.
fn parallel_requested(common: &Common) -> bool {
    cfg!(feature = "parallel") && common.threads != Some(1)
}

fn configure_threads(common: &Common) -> Result<(), CliError> {
    #[cfg(feature = "parallel")]
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let _ = common;
    Ok(())
}

/// Shared preamble: thread pool, scenario load, `--dump-config` handling.
/// Returns `None` when the config was dumped and the command should stop.
fn prepare(common: &Common) -> Result<Option<Scenario>, CliError> {
    configure_threads(common)?;
    let scenario = load_scenario(common)?;
    if common.dump_config {
        write_output(&common.out, &(scenario.to_json_pretty() + "\n"))?;
        return Ok(None);
    }
    Ok(Some(scenario))
}

fn method_for(scenario: &Scenario, flag: &Option<String>) -> Result<Method, CliError> {
    match flag {
        Some(text) => text.parse().map_err(CliError::Config),
        None => Ok(scenario.fit.method),
    }
}

fn cmd_simulate(common: &Common) -> Result<(), CliError> {
    let Some(scenario) = prepare(common)? else {
        return Ok(());
    };
    let parallel = parallel_requested(common);
    let geometry = scenario.resolved_geometry()?;
    let (_, total_photons) = photon_budget(
        &scenario.source,
        &scenario.grid,
        scenario.integration_time_s,
    )?;
    let text = match scenario.fit.method {
        Method::Classical | Method::Classical2ndOrder => {
            let s = synth_classical(
                &scenario.truth_model,
                &geometry,
                &scenario.grid,
                &scenario.source,
                scenario.integration_time_s,
                &scenario.noise,
                &scenario.systematics,
                parallel,
            )?;
            match common.format {
                Format::Csv => classical_to_csv(&s),
                Format::Json => to_pretty_json(&s)?,
            }
        }
        Method::Quantum => {
            let s = synth_quantum(
                &scenario.truth_model,
                &geometry,
                &scenario.grid,
                &scenario.source,
                scenario.integration_time_s,
                scenario.pump_wavelength_nm,
                &scenario.noise,
                &scenario.systematics,
                parallel,
            )?;
            match common.format {
                Format::Csv => quantum_to_csv(&s),
                Format::Json => to_pretty_json(&s)?,
            }
        }
    };
    write_output(&common.out, &text)?;
    eprintln!("total_photons: {}", fmt9(total_photons));
    Ok(())
}

fn fit_loaded(scenario: &Scenario, csv_text: &str) -> Result<FitResult, CliError> {
    let geometry = scenario.resolved_geometry()?;
    let options = scenario.fit.options();
    match scenario.fit.method {
        Method::Classical | Method::Classical2ndOrder => {
            let s = classical_from_csv(csv_text)?;
            let data = normalize_classical(&s);
            let phase_offset = classical_fit_phase_offset(
                &geometry,
                &scenario.truth_model,
                scenario.geometry.spp_wavelength_nm,
            )?;
            let result = if scenario.fit.method == Method::Classical {
                fit_classical(
                    &data,
                    geometry.sample_length_m,
                    phase_offset,
                    scenario.noise.visibility,
                    scenario.fit.init_classical,
                    &options,
                )?
            } else {
                fit_classical_second_order(
                    &data,
                    geometry.sample_length_m,
                    phase_offset,
                    scenario.noise.visibility,
                    scenario.fit.init_classical,
                    &options,
                )?
            };
            Ok(result)
        }
        Method::Quantum => {
            let s = quantum_from_csv(csv_text)?;
            let data = normalize_quantum(&s);
            let star = scenario.lambda_star_nm();
            let phase_offset =
                noon_fit_phase_offset(&geometry, &scenario.truth_model, star)?;
            let d3n = scenario.truth_model.evaluate(star)?.d3n_dlambda3;
            Ok(fit_quantum(
                &data,
                geometry.sample_length_m,
                scenario.pump_wavelength_nm,
                phase_offset,
                scenario.noise.visibility,
                d3n,
                scenario.fit.include_third_order,
                scenario.fit.init_quantum,
                &options,
            )?)
        }
    }
}

fn cmd_fit(common: &Common, data: &PathBuf) -> Result<(), CliError> {
    let Some(scenario) = prepare(common)? else {
        return Ok(());
    };
    let csv_text = std::fs::read_to_string(data)
        .map_err(|e| CliError::Other(format!("cannot read spectrogram `{}`: {e}", data.display())))?;
    let result = fit_loaded(&scenario, &csv_text)?;
    let mut json = result.to_json();
    round9_json(&mut json);
    let text = serde_json::to_string_pretty(&json)
        .map_err(|e| CliError::Other(e.to_string()))?
        + "\n";
    write_output(&common.out, &text)?;
    if !result.converged {
        return Err(CliError::Fit(
            "fit did not converge (result JSON emitted)".into(),
        ));
    }
    Ok(())
}

fn cmd_montecarlo(
    common: &Common,
    method: &Option<String>,
    trials: usize,
    histogram_out: &Option<PathBuf>,
) -> Result<(), CliError> {
    let Some(scenario) = prepare(common)? else {
        return Ok(());
    };
    let method = method_for(&scenario, method)?;
    let report = run_montecarlo(&scenario, method, trials, parallel_requested(common))?;
    let text = match common.format {
        Format::Csv => trials_to_csv(&report),
        Format::Json => to_pretty_json(&report)?,
    };
    write_output(&common.out, &text)?;
    if let Some(path) = histogram_out {
        std::fs::write(path, histogram_to_csv(&report.histogram))?;
    }
    eprintln!(
        "method: {}  trials: {}  mean_D: {}  std_D: {}  failed: {}",
        report.method,
        trials,
        fmt9(report.mean_d),
        fmt9(report.std_d),
        report.failed_trials
    );
    if report.unusable {
        return Err(CliError::Unusable(format!(
            "{} of {} trials failed; report is unusable",
            report.failed_trials, trials
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_systematics(
    common: &Common,
    axis: &str,
    max: f64,
    points: usize,
    target_bias: Option<f64>,
    bias_tol: f64,
) -> Result<(), CliError> {
    let Some(scenario) = prepare(common)? else {
        return Ok(());
    };
    let axis: SystematicsAxis = axis.parse().map_err(CliError::Config)?;
    let parallel = parallel_requested(common);
    if let Some(target) = target_bias {
        let (offset, achieved) =
            find_offset_for_bias(&scenario, axis, target, max, bias_tol, parallel)?;
        let report = serde_json::json!({
            "axis": axis.label(),
            "target_bias": target,
            "offset": offset,
            "achieved_bias": achieved,
        });
        let mut json = report;
        round9_json(&mut json);
        let text = serde_json::to_string_pretty(&json)
            .map_err(|e| CliError::Other(e.to_string()))?
            + "\n";
        return write_output(&common.out, &text);
    }
    if points < 3 || !(max > 0.0) {
        return Err(CliError::Config(
            "systematics scan needs --points >= 3 and --max > 0".into(),
        ));
    }
    // Symmetric scan with an odd point count so zero is always sampled.
    let n = if points % 2 == 0 { points + 1 } else { points };
    let half = (n - 1) / 2;
    let offsets: Vec<f64> = (0..n)
        .map(|i| (i as f64 - half as f64) / half as f64 * max)
        .map(|o| if o == 0.0 { 0.0 } else { o })
        .collect();
    let report = systematics_scan(&scenario, axis, &offsets, parallel)?;
    let text = match common.format {
        Format::Csv => systematics_to_csv(&report),
        Format::Json => to_pretty_json(&report)?,
    };
    write_output(&common.out, &text)
}

fn cmd_calibrate(common: &Common, bare_fraction: f64) -> Result<(), CliError> {
    let Some(scenario) = prepare(common)? else {
        return Ok(());
    };
    let (bare, loaded) = split_calibration_scenarios(&scenario, bare_fraction)?;
    let report = calibration_workflow(&bare, &loaded, parallel_requested(common))?;
    let text = match common.format {
        Format::Json => to_pretty_json(&report)?,
        Format::Csv => {
            let mut out = String::from(
                "d_total, d_total_sigma, d_bare, d_bare_sigma, d_corrected, bare_fraction\n",
            );
            let _ = writeln!(
                out,
                "{}, {}, {}, {}, {}, {}",
                fmt9(report.d_total),
                fmt9(report.d_total_sigma),
                fmt9(report.d_bare),
                fmt9(report.d_bare_sigma),
                fmt9(report.d_corrected),
                fmt9(report.bare_fraction)
            );
            out
        }
    };
    write_output(&common.out, &text)
}

fn cmd_fringecheck(common: &Common) -> Result<(), CliError> {
    let Some(scenario) = prepare(common)? else {
        return Ok(());
    };
    let report = fringe_doubling_check(&scenario, parallel_requested(common))?;
    let text = match common.format {
        Format::Json => to_pretty_json(&report)?,
        Format::Csv => format!(
            "classical_crossings, quantum_crossings, ratio\n{}, {}, {}\n",
            report.classical_crossings,
            report.quantum_crossings,
            fmt9(report.ratio)
        ),
    };
    write_output(&common.out, &text)?;
    eprintln!("fringe ratio (quantum/classical): {}", fmt9(report.ratio));
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { common } => cmd_simulate(common),
        Command::Fit { common, data } => cmd_fit(common, data),
        Command::Montecarlo {
            common,
            method,
            trials,
            histogram_out,
        } => cmd_montecarlo(common, method, *trials, histogram_out),
        Command::Systematics {
            common,
            axis,
            max,
            points,
            target_bias,
            bias_tol,
        } => cmd_systematics(common, axis, *max, *points, *target_bias, *bias_tol),
        Command::Calibrate {
            common,
            bare_fraction,
        } => cmd_calibrate(common, *bare_fraction),
        Command::Fringecheck { common } => cmd_fringecheck(common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
