//! Orchestrated studies: Monte Carlo precision, photon-normalized precision,
//! systematics scans with offset attribution, fringe-doubling checks, and
//! the bare-interferometer calibration workflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::{
    count_fringe_crossings, fit_classical, fit_classical_second_order, fit_quantum,
    subtract_calibration, FitError, FitResult,
};
use crate::interferogram::{
    normalize_classical, normalize_quantum, photon_budget, synth_classical, synth_quantum,
    InterferogramError, NoiseSettings,
};
use crate::phase::{
    classical_fit_phase_offset, classical_phase_exact, model_dispersion_at,
    noon_fit_phase_offset, noon_phase, PhaseError,
};
use crate::scenario::{Method, Scenario, ScenarioError};
use crate::{map_indexed, mix_seed};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Interferogram(#[from] InterferogramError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("need at least {needed} trials, got {got}")]
    TooFewTrials { needed: usize, got: usize },
    #[error("too few converged trials ({0}) for statistics")]
    TooFewConverged(usize),
    #[error("fringe check needs >= 4 fringes in each pattern (classical {0}, quantum {1} half-fringes)")]
    TooFewFringes(usize, usize),
    #[error("bisection target {target} not bracketed on [0, {max}] (f(max) = {at_max})")]
    NotBracketed { target: f64, max: f64, at_max: f64 },
    #[error("calibration scenarios disagree: {0}")]
    CalibrationMismatch(String),
    #[error("invalid experiment input: {0}")]
    Invalid(String),
}

/// Synthesize one spectrogram with the given RNG seed and fit it with the
/// scenario's settings. The fitter is handed the φ_off the experimenter
/// would know: the intrinsic stationary-point offset of the nominal
/// (imbalance-free) geometry.
pub fn run_trial(
    scenario: &Scenario,
    method: Method,
    seed: u64,
    parallel: bool,
) -> Result<FitResult, ExperimentError> {
    let geo = scenario.resolved_geometry()?;
    let noise = NoiseSettings {
        rng_seed: seed,
        ..scenario.noise
    };
    let options = scenario.fit.options();
    match method {
        Method::Classical | Method::Classical2ndOrder => {
            let s = synth_classical(
                &scenario.truth_model,
                &geo,
                &scenario.grid,
                &scenario.source,
                scenario.integration_time_s,
                &noise,
                &scenario.systematics,
                parallel,
            )?;
            let data = normalize_classical(&s);
            let po = classical_fit_phase_offset(
                &geo,
                &scenario.truth_model,
                scenario.geometry.spp_wavelength_nm,
            )?;
            let res = match method {
                Method::Classical => fit_classical(
                    &data,
                    geo.sample_length_m,
                    po,
                    noise.visibility,
                    scenario.fit.init_classical,
                    &options,
                )?,
                _ => fit_classical_second_order(
                    &data,
                    geo.sample_length_m,
                    po,
                    noise.visibility,
                    scenario.fit.init_classical,
                    &options,
                )?,
            };
            Ok(res)
        }
        Method::Quantum => {
            let s = synth_quantum(
                &scenario.truth_model,
                &geo,
                &scenario.grid,
                &scenario.source,
                scenario.integration_time_s,
                scenario.pump_wavelength_nm,
                &noise,
                &scenario.systematics,
                parallel,
            )?;
            let data = normalize_quantum(&s);
            let star = scenario.lambda_star_nm();
            let po = noon_fit_phase_offset(&geo, &scenario.truth_model, star)?;
            let d3n = scenario.truth_model.evaluate(star)?.d3n_dlambda3;
            Ok(fit_quantum(
                &data,
                geo.sample_length_m,
                scenario.pump_wavelength_nm,
                po,
                noise.visibility,
                d3n,
                scenario.fit.include_third_order,
                scenario.fit.init_quantum,
                &options,
            )?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub d: f64,
    pub d_sigma: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_left: Vec<f64>,
    pub bin_right: Vec<f64>,
    pub count: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub method: String,
    pub truth_d: f64,
    pub trials: Vec<TrialRecord>,
    pub mean_d: f64,
    pub std_d: f64,
    pub histogram: Histogram,
    pub n_photons_per_trial: f64,
    pub failed_trials: usize,
    pub unusable: bool,
    /// Normality diagnostics of the converged-trial distribution.
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Freedman–Diaconis histogram of the converged trial values.
pub fn freedman_diaconis_histogram(values: &[f64]) -> Histogram {
    if values.is_empty() {
        return Histogram {
            bin_left: vec![],
            bin_right: vec![],
            count: vec![],
        };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    let n_bins = if width > 0.0 && max > min {
        (((max - min) / width).ceil() as usize).clamp(1, 10_000)
    } else {
        1
    };
    let span = if max > min { max - min } else { 1.0 };
    let w = span / n_bins as f64;
    let mut count = vec![0u64; n_bins];
    for &v in values {
        let idx = (((v - min) / w) as usize).min(n_bins - 1);
        count[idx] += 1;
    }
    Histogram {
        bin_left: (0..n_bins).map(|i| min + i as f64 * w).collect(),
        bin_right: (0..n_bins).map(|i| min + (i + 1) as f64 * w).collect(),
        count,
    }
}

/// Run `n_trials` independent synthesize-and-fit trials. Trial k derives
/// its RNG seed deterministically from (master seed, k), so reports are
/// bit-identical across runs and thread schedules.
pub fn run_montecarlo(
    scenario: &Scenario,
    method: Method,
    n_trials: usize,
    parallel: bool,
) -> Result<MonteCarloReport, ExperimentError> {
    if n_trials < 2 {
        return Err(ExperimentError::TooFewTrials {
            needed: 2,
            got: n_trials,
        });
    }
    scenario.validate()?;
    let (_, n_photons) = photon_budget(
        &scenario.source,
        &scenario.grid,
        scenario.integration_time_s,
    )?;
    let results = map_indexed(n_trials, parallel, |k| {
        let seed = mix_seed(scenario.master_seed, k as u64, 0x7 + 1);
        // Trials are parallel over k; keep per-trial synthesis sequential
        // to avoid nested pools fighting over the same threads.
        (seed, run_trial(scenario, method, seed, false))
    });
    let mut trials = Vec::with_capacity(n_trials);
    let mut failed = 0usize;
    for (k, (seed, res)) in results.into_iter().enumerate() {
        match res {
            Ok(fit) => {
                if !fit.converged {
                    failed += 1;
                }
                trials.push(TrialRecord {
                    trial: k,
                    seed,
                    d: fit.d_ps_nm_km,
                    d_sigma: fit.d_sigma,
                    converged: fit.converged,
                });
            }
            Err(_) => {
                failed += 1;
                trials.push(TrialRecord {
                    trial: k,
                    seed,
                    d: f64::NAN,
                    d_sigma: f64::NAN,
                    converged: false,
                });
            }
        }
    }
    let ok: Vec<f64> = trials
        .iter()
        .filter(|t| t.converged)
        .map(|t| t.d)
        .collect();
    if ok.len() < 2 {
        return Err(ExperimentError::TooFewConverged(ok.len()));
    }
    let n = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / n;
    let var = ok.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    let (skew, kurt) = if std > 0.0 {
        let m3 = ok.iter().map(|d| ((d - mean) / std).powi(3)).sum::<f64>() / n;
        let m4 = ok.iter().map(|d| ((d - mean) / std).powi(4)).sum::<f64>() / n;
        (m3, m4 - 3.0)
    } else {
        (0.0, 0.0)
    };
    Ok(MonteCarloReport {
        method: method.label().to_string(),
        truth_d: scenario.truth_dispersion(method)?,
        mean_d: mean,
        std_d: std,
        histogram: freedman_diaconis_histogram(&ok),
        n_photons_per_trial: n_photons,
        failed_trials: failed,
        unusable: failed * 10 > n_trials,
        skewness: skew,
        excess_kurtosis: kurt,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionBudget {
    pub method: String,
    pub n_photons: f64,
    /// std_D × √N, in ps/(nm·km)·√photons.
    pub delta_d_sqrt_n: f64,
}

/// Photon-normalized precision ΔD·√N of a Monte Carlo report.
pub fn precision_per_photon(report: &MonteCarloReport) -> Result<PrecisionBudget, ExperimentError> {
    let converged = report.trials.iter().filter(|t| t.converged).count();
    if converged < 2 {
        return Err(ExperimentError::TooFewConverged(converged));
    }
    if !(report.n_photons_per_trial > 0.0) {
        return Err(ExperimentError::Invalid("non-positive photon count".into()));
    }
    Ok(PrecisionBudget {
        method: report.method.clone(),
        n_photons: report.n_photons_per_trial,
        delta_d_sqrt_n: report.std_d * report.n_photons_per_trial.sqrt(),
    })
}

/// Standard error of the difference of two n-trial means with per-trial
/// scatters σ_a and σ_b: sqrt((σ_a² + σ_b²)/n).
pub fn expected_mean_difference(sigma_a: f64, sigma_b: f64, n_trials: usize) -> f64 {
    ((sigma_a * sigma_a + sigma_b * sigma_b) / n_trials as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystematicsAxis {
    SpectrometerOffset,
    ArmImbalance,
}

impl SystematicsAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SystematicsAxis::SpectrometerOffset => "spectrometer_offset",
            SystematicsAxis::ArmImbalance => "arm_imbalance",
        }
    }
}

impl std::str::FromStr for SystematicsAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spectrometer-offset" | "spectrometer_offset" => {
                Ok(SystematicsAxis::SpectrometerOffset)
            }
            "arm-imbalance" | "arm_imbalance" => Ok(SystematicsAxis::ArmImbalance),
            other => Err(format!(
                "unknown axis `{other}` (spectrometer-offset, arm-imbalance)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystematicsPoint {
    pub offset: f64,
    /// D_fit − D_truth at the design wavelength.
    pub classical_bias: f64,
    /// D_truth(λ₀_fit) − D_truth(λ_design): the part of the bias explained
    /// by the stationary point landing at a shifted wavelength, which is
    /// how a wavelength-axis systematic manifests.
    pub classical_bias_attributed: f64,
    pub quantum_bias: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystematicsReport {
    pub axis: String,
    pub points: Vec<SystematicsPoint>,
}

/// Noiseless scenario clone for bias studies: deterministic synthesis with
/// ideal visibility and no background, fits with the constant offset phase
/// as a nuisance parameter (a systematic of the wavelength axis or arm
/// length also perturbs the offset the experimenter would assume).
fn bias_scenario(scenario: &Scenario) -> Scenario {
    let mut s = scenario.clone();
    s.noise = NoiseSettings::noiseless();
    s.fit.fit_phase_offset = true;
    s
}

fn scan_point(
    scenario: &Scenario,
    axis: SystematicsAxis,
    offset: f64,
    parallel: bool,
) -> Result<SystematicsPoint, ExperimentError> {
    let mut s = bias_scenario(scenario);
    match axis {
        SystematicsAxis::SpectrometerOffset => s.systematics.spectrometer_offset_nm = offset,
        SystematicsAxis::ArmImbalance => s.systematics.arm_imbalance_m = offset,
    }
    let truth_classical = s.truth_dispersion(Method::Classical)?;
    let truth_quantum = s.truth_dispersion(Method::Quantum)?;
    let c = run_trial(&s, Method::Classical, s.master_seed, parallel);
    let q = run_trial(&s, Method::Quantum, s.master_seed, parallel);
    match (c, q) {
        (Ok(c), Ok(q)) if c.converged && q.converged => {
            let lambda0_fit = c.params["lambda0_nm"];
            let attributed =
                model_dispersion_at(&s.truth_model, lambda0_fit)? - truth_classical;
            Ok(SystematicsPoint {
                offset,
                classical_bias: c.d_ps_nm_km - truth_classical,
                classical_bias_attributed: attributed,
                quantum_bias: q.d_ps_nm_km - truth_quantum,
                ok: true,
            })
        }
        _ => Ok(SystematicsPoint {
            offset,
            classical_bias: f64::NAN,
            classical_bias_attributed: f64::NAN,
            quantum_bias: f64::NAN,
            ok: false,
        }),
    }
}

/// Sweep one systematic axis over the given offsets (must include 0) and
/// record the classical and quantum D biases of noiseless fits.
pub fn systematics_scan(
    scenario: &Scenario,
    axis: SystematicsAxis,
    offsets: &[f64],
    parallel: bool,
) -> Result<SystematicsReport, ExperimentError> {
    if !offsets.iter().any(|o| *o == 0.0) {
        return Err(ExperimentError::Invalid(
            "systematics scan offsets must include 0".into(),
        ));
    }
    let points = offsets
        .iter()
        .map(|&o| scan_point(scenario, axis, o, parallel))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SystematicsReport {
        axis: axis.label().to_string(),
        points,
    })
}

/// Inverse systematics problem: bisect on [0, max_offset] for the offset at
/// which the attributed classical bias reaches `target_bias`. Returns the
/// offset and the achieved bias.
pub fn find_offset_for_bias(
    scenario: &Scenario,
    axis: SystematicsAxis,
    target_bias: f64,
    max_offset: f64,
    bias_tol: f64,
    parallel: bool,
) -> Result<(f64, f64), ExperimentError> {
    let eval = |off: f64| -> Result<f64, ExperimentError> {
        let p = scan_point(scenario, axis, off, parallel)?;
        if !p.ok {
            return Err(ExperimentError::Invalid(format!(
                "fit failed at offset {off}"
            )));
        }
        Ok(p.classical_bias_attributed)
    };
    let f_lo = eval(0.0)?;
    let f_hi = eval(max_offset)?;
    // Endpoints already within tolerance count as solutions; only a true
    // miss beyond tolerance is a bracketing failure.
    if (f_lo - target_bias).abs() <= bias_tol {
        return Ok((0.0, f_lo));
    }
    if (f_hi - target_bias).abs() <= bias_tol {
        return Ok((max_offset, f_hi));
    }
    if (f_lo - target_bias).signum() == (f_hi - target_bias).signum() {
        return Err(ExperimentError::NotBracketed {
            target: target_bias,
            max: max_offset,
            at_max: f_hi,
        });
    }
    let mut lo = 0.0;
    let mut hi = max_offset;
    let mut flo = f_lo;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let fm = eval(mid)?;
        if (fm - target_bias).abs() <= bias_tol {
            return Ok((mid, fm));
        }
        if (fm - target_bias).signum() == (flo - target_bias).signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let fm = eval(mid)?;
    Ok((mid, fm))
}

/// Wavelength of slowest fringe oscillation of the classical pattern: the
/// grid point where the exact phase changes least between neighbours.
fn classical_center_nm(
    scenario: &Scenario,
    geometry: &crate::phase::InterferometerGeometry,
) -> Result<f64, ExperimentError> {
    let lambdas = scenario.grid.wavelengths();
    let mut best = (f64::INFINITY, lambdas[0]);
    let mut prev = classical_phase_exact(geometry, &scenario.truth_model, lambdas[0])?;
    for pair in lambdas.windows(2) {
        let next = classical_phase_exact(geometry, &scenario.truth_model, pair[1])?;
        let slope = (next - prev).abs();
        if slope < best.0 {
            best = (slope, 0.5 * (pair[0] + pair[1]));
        }
        prev = next;
    }
    Ok(best.1)
}

/// Keep only bins within the largest window symmetric about `center_nm`.
fn restrict_symmetric(
    data: &crate::interferogram::NormalizedSpectrogram,
    center_nm: f64,
) -> crate::interferogram::NormalizedSpectrogram {
    let lo = data.lambda_nm.first().copied().unwrap_or(center_nm);
    let hi = data.lambda_nm.last().copied().unwrap_or(center_nm);
    let half = (center_nm - lo).min(hi - center_nm).max(0.0);
    let keep: Vec<usize> = (0..data.lambda_nm.len())
        .filter(|&i| (data.lambda_nm[i] - center_nm).abs() <= half + 1e-9)
        .collect();
    crate::interferogram::NormalizedSpectrogram {
        lambda_nm: keep.iter().map(|&i| data.lambda_nm[i]).collect(),
        value: keep.iter().map(|&i| data.value[i]).collect(),
        sigma: keep.iter().map(|&i| data.sigma[i]).collect(),
        valid: keep.iter().map(|&i| data.valid[i]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeCheckReport {
    /// Half-fringe (zero-crossing) counts of the noiseless patterns.
    pub classical_crossings: usize,
    pub quantum_crossings: usize,
    pub ratio: f64,
}

/// Count fringes of noiseless classical and quantum patterns on the same
/// grid and return their ratio (≈ 2 for a second-order-dominated sample).
pub fn fringe_doubling_check(
    scenario: &Scenario,
    parallel: bool,
) -> Result<FringeCheckReport, ExperimentError> {
    let mut s = scenario.clone();
    s.noise = NoiseSettings::noiseless();
    let geo = s.resolved_geometry()?;
    let c = synth_classical(
        &s.truth_model,
        &geo,
        &s.grid,
        &s.source,
        s.integration_time_s,
        &s.noise,
        &s.systematics,
        parallel,
    )?;
    let q = synth_quantum(
        &s.truth_model,
        &geo,
        &s.grid,
        &s.source,
        s.integration_time_s,
        s.pump_wavelength_nm,
        &s.noise,
        &s.systematics,
        parallel,
    )?;
    // A lopsided span biases the count: fringe density grows with distance
    // from the stationary wavelength, and faster on the short-wavelength
    // side of the N00N pattern. Counting on the largest sub-window that is
    // symmetric about each pattern's own stationary wavelength keeps the
    // ratio a clean measure of the doubled phase sensitivity.
    let nc = restrict_symmetric(
        &normalize_classical(&c),
        classical_center_nm(&s, &geo)?,
    );
    let nq = restrict_symmetric(&normalize_quantum(&q), s.lambda_star_nm());
    let cc = count_fringe_crossings(&nc);
    let qc = count_fringe_crossings(&nq);
    // 4 fringes = 8 zero crossings.
    if cc < 8 || qc < 8 {
        return Err(ExperimentError::TooFewFringes(cc, qc));
    }
    Ok(FringeCheckReport {
        classical_crossings: cc,
        quantum_crossings: qc,
        ratio: qc as f64 / cc as f64,
    })
}

/// Total phase excursions (max − min over the grid) of the noiseless
/// classical and quantum phase functions. Unlike fringe counting this stays
/// meaningful when one pattern barely modulates, e.g. for the third-order
/// cancellation study with d²n/dλ² = 0.
pub fn phase_excursions(scenario: &Scenario) -> Result<(f64, f64), ExperimentError> {
    let geo = scenario.resolved_geometry()?;
    let star = scenario.lambda_star_nm();
    let sample_star = scenario.truth_model.evaluate(star)?;
    let geo_noon = crate::phase::InterferometerGeometry {
        phase_offset_rad: noon_fit_phase_offset(&geo, &scenario.truth_model, star)?,
        ..geo
    };
    let mut c_min = f64::INFINITY;
    let mut c_max = f64::NEG_INFINITY;
    let mut q_min = f64::INFINITY;
    let mut q_max = f64::NEG_INFINITY;
    for l in scenario.grid.wavelengths() {
        let pc = classical_phase_exact(&geo, &scenario.truth_model, l)?;
        let pq = noon_phase(&geo_noon, &sample_star, l - star, true)?;
        c_min = c_min.min(pc);
        c_max = c_max.max(pc);
        q_min = q_min.min(pq);
        q_max = q_max.max(pq);
    }
    Ok((c_max - c_min, q_max - q_min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub d_total: f64,
    pub d_total_sigma: f64,
    pub d_bare: f64,
    pub d_bare_sigma: f64,
    pub d_corrected: f64,
    pub bare_fraction: f64,
}

/// Quantum calibration workflow: fit the bare interferometer and the loaded
/// interferometer, subtract, and report the bare fraction. Both scenarios
/// must share pump and grid.
pub fn calibration_workflow(
    scenario_bare: &Scenario,
    scenario_with_sut: &Scenario,
    parallel: bool,
) -> Result<CalibrationReport, ExperimentError> {
    if scenario_bare.pump_wavelength_nm != scenario_with_sut.pump_wavelength_nm {
        return Err(ExperimentError::CalibrationMismatch(format!(
            "pump {} nm vs {} nm",
            scenario_bare.pump_wavelength_nm, scenario_with_sut.pump_wavelength_nm
        )));
    }
    if scenario_bare.grid != scenario_with_sut.grid {
        return Err(ExperimentError::CalibrationMismatch("grids differ".into()));
    }
    let bare = run_trial(
        scenario_bare,
        Method::Quantum,
        scenario_bare.master_seed,
        parallel,
    )?;
    if !bare.converged {
        return Err(ExperimentError::Invalid(
            "bare-interferometer fit did not converge".into(),
        ));
    }
    let total = run_trial(
        scenario_with_sut,
        Method::Quantum,
        scenario_with_sut.master_seed,
        parallel,
    )?;
    if !total.converged {
        return Err(ExperimentError::Invalid(
            "loaded-interferometer fit did not converge".into(),
        ));
    }
    let star = scenario_with_sut.lambda_star_nm();
    let corrected = subtract_calibration(total.d_ps_nm_km, star, bare.d_ps_nm_km, star)?;
    Ok(CalibrationReport {
        d_total: total.d_ps_nm_km,
        d_total_sigma: total.d_sigma,
        d_bare: bare.d_ps_nm_km,
        d_bare_sigma: bare.d_sigma,
        d_corrected: corrected,
        bare_fraction: bare.d_ps_nm_km / total.d_ps_nm_km,
    })
}

/// Split one scenario into (bare, loaded) calibration scenarios such that
/// the bare contribution is `bare_fraction` of the loaded total. Requires a
/// Taylor truth model; the second and third derivatives are scaled, leaving
/// n and dn/dλ untouched.
pub fn split_calibration_scenarios(
    scenario: &Scenario,
    bare_fraction: f64,
) -> Result<(Scenario, Scenario), ExperimentError> {
    if !(0.0..1.0).contains(&bare_fraction) {
        return Err(ExperimentError::Invalid(
            "bare fraction must be in [0, 1)".into(),
        ));
    }
    let crate::phase::RefractiveIndexModel::Taylor {
        anchor_nm,
        n,
        dn_dlambda,
        d2n_dlambda2,
        d3n_dlambda3,
    } = scenario.truth_model
    else {
        return Err(ExperimentError::Invalid(
            "calibration split requires a taylor truth model".into(),
        ));
    };
    let scale_total = 1.0 / (1.0 - bare_fraction);
    let mk = |factor: f64, seed_salt: u64| {
        let mut s = scenario.clone();
        s.truth_model = crate::phase::RefractiveIndexModel::Taylor {
            anchor_nm,
            n,
            dn_dlambda,
            d2n_dlambda2: d2n_dlambda2 * factor,
            d3n_dlambda3: d3n_dlambda3 * factor,
        };
        s.master_seed = mix_seed(scenario.master_seed, seed_salt, 77);
        s
    };
    let loaded = mk(scale_total, 1);
    let bare = mk(scale_total * bare_fraction, 2);
    Ok((bare, loaded))
}

fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

/// CSV with one row per trial: `trial, seed, D, D_sigma, converged`.
pub fn trials_to_csv(report: &MonteCarloReport) -> String {
    let mut out = String::from("trial, seed, D, D_sigma, converged\n");
    for t in &report.trials {
        out.push_str(&format!(
            "{}, {}, {}, {}, {}\n",
            t.trial,
            t.seed,
            fmt9(t.d),
            fmt9(t.d_sigma),
            t.converged
        ));
    }
    out
}

/// Histogram CSV: `bin_left, bin_right, count`.
pub fn histogram_to_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_left, bin_right, count\n");
    for i in 0..h.count.len() {
        out.push_str(&format!(
            "{}, {}, {}\n",
            fmt9(h.bin_left[i]),
            fmt9(h.bin_right[i]),
            h.count[i]
        ));
    }
    out
}

/// Systematics bias curve CSV.
pub fn systematics_to_csv(r: &SystematicsReport) -> String {
    let mut out = String::from(
        "offset, classical_bias, classical_bias_attributed, quantum_bias, ok\n",
    );
    for p in &r.points {
        out.push_str(&format!(
            "{}, {}, {}, {}, {}\n",
            fmt9(p.offset),
            fmt9(p.classical_bias),
            fmt9(p.classical_bias_attributed),
            fmt9(p.quantum_bias),
            p.ok
        ));
    }
    out
}
