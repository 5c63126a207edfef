//! Spectrogram synthesis: classical intensity interferograms and two-photon
//! coincidence interferograms on a spectral grid, with photon budgets,
//! Poisson noise, dark counts, visibility loss, systematics injection, and
//! the two normalization procedures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phase::{
    classical_phase_exact, noon_fit_phase_offset, noon_phase, InterferometerGeometry,
    PhaseError, RefractiveIndexModel, C_M_PER_S, H_PLANCK_JS,
};
use crate::{map_indexed, mix_seed};

#[derive(Debug, Error)]
pub enum InterferogramError {
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("invalid noise settings: {0}")]
    InvalidNoise(String),
    #[error("invalid systematics: {0}")]
    InvalidSystematics(String),
    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Uniform spectral grid. Bin spacing doubles as the resolution bandwidth
/// (pure binning, no line-shape convolution).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralGrid {
    pub start_nm: f64,
    pub stop_nm: f64,
    pub step_nm: f64,
}

impl SpectralGrid {
    pub fn bin_count(&self) -> usize {
        ((self.stop_nm - self.start_nm) / self.step_nm).floor() as usize + 1
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.bin_count())
            .map(|i| self.start_nm + i as f64 * self.step_nm)
            .collect()
    }

    /// Structural validation. Degenerate single-bin grids are permitted for
    /// budgeting and simulation; fitting enforces its own minimum bin count.
    pub fn validate(&self) -> Result<(), InterferogramError> {
        if !(self.step_nm > 0.0) {
            return Err(InterferogramError::InvalidGrid(format!(
                "step must be positive, got {}",
                self.step_nm
            )));
        }
        if !(self.start_nm <= self.stop_nm) {
            return Err(InterferogramError::InvalidGrid(format!(
                "start {} must not exceed stop {}",
                self.start_nm, self.stop_nm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumShape {
    Flat,
    Gaussian,
}

/// Source spectrum at the interferometer output. The shape function is
/// normalized to unit average over the grid, so `spectral_intensity_w_per_nm`
/// is the grid-average spectral intensity regardless of shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpectrum {
    pub shape: SpectrumShape,
    pub center_nm: f64,
    pub fwhm_nm: f64,
    pub spectral_intensity_w_per_nm: f64,
}

impl SourceSpectrum {
    pub fn validate(&self) -> Result<(), InterferogramError> {
        if !(self.spectral_intensity_w_per_nm > 0.0) {
            return Err(InterferogramError::InvalidSource(
                "spectral intensity must be positive".into(),
            ));
        }
        if self.shape == SpectrumShape::Gaussian && !(self.fwhm_nm > 0.0) {
            return Err(InterferogramError::InvalidSource(
                "gaussian fwhm must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Unnormalized shape function.
    fn raw_shape(&self, lambda_nm: f64) -> f64 {
        match self.shape {
            SpectrumShape::Flat => 1.0,
            SpectrumShape::Gaussian => {
                let x = (lambda_nm - self.center_nm) / self.fwhm_nm;
                (-4.0 * std::f64::consts::LN_2 * x * x).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSettings {
    pub poisson_enabled: bool,
    /// Fringe visibility in (0, 1].
    pub visibility: f64,
    /// Expected dark counts per bin per channel over the integration time.
    pub dark_counts_per_bin: f64,
    /// RMS of a per-bin Gaussian phase jitter, rad.
    pub phase_jitter_rms: f64,
    pub rng_seed: u64,
}

impl NoiseSettings {
    pub fn noiseless() -> Self {
        NoiseSettings {
            poisson_enabled: false,
            visibility: 1.0,
            dark_counts_per_bin: 0.0,
            phase_jitter_rms: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), InterferogramError> {
        if !(self.visibility > 0.0 && self.visibility <= 1.0) {
            return Err(InterferogramError::InvalidNoise(format!(
                "visibility must be in (0, 1], got {}",
                self.visibility
            )));
        }
        if !(self.dark_counts_per_bin >= 0.0) {
            return Err(InterferogramError::InvalidNoise(
                "dark counts must be non-negative".into(),
            ));
        }
        if !(self.phase_jitter_rms >= 0.0) {
            return Err(InterferogramError::InvalidNoise(
                "phase jitter must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Instrumental systematics. The spectrometer offset shifts the wavelength
/// labels of the classical optical spectrum analyzer; the quantum detection
/// chain references its wavelength axis to the pump and is not affected by
/// it. The arm imbalance is extra geometric path added to the reference arm
/// after stationary-phase-point balancing, and affects both methods (the
/// quantum pattern only through its constant offset phase).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystematicsSettings {
    pub spectrometer_offset_nm: f64,
    pub arm_imbalance_m: f64,
}

impl SystematicsSettings {
    pub fn none() -> Self {
        SystematicsSettings {
            spectrometer_offset_nm: 0.0,
            arm_imbalance_m: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), InterferogramError> {
        if !(self.spectrometer_offset_nm.abs() <= 5.0) {
            return Err(InterferogramError::InvalidSystematics(format!(
                "|spectrometer offset| must be <= 5 nm, got {}",
                self.spectrometer_offset_nm
            )));
        }
        if !(self.arm_imbalance_m.abs() <= 1e-3) {
            return Err(InterferogramError::InvalidSystematics(format!(
                "|arm imbalance| must be <= 1 mm, got {}",
                self.arm_imbalance_m
            )));
        }
        Ok(())
    }
}

/// Classical intensity spectrogram plus the two single-arm reference
/// spectrograms used for normalization. Counts are Poisson samples when
/// sampling is enabled, otherwise exact means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSpectrogram {
    pub grid: SpectralGrid,
    /// Wavelength labels as reported by the spectrometer (may be offset).
    pub lambda_nm: Vec<f64>,
    pub counts: Vec<f64>,
    pub ref_a: Vec<f64>,
    pub ref_b: Vec<f64>,
}

/// Two-photon coincidence spectrogram: N00N-component coincidences
/// (near-zero arrival-time difference) and opposite-path coincidences used
/// for on-the-fly normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceSpectrogram {
    pub grid: SpectralGrid,
    pub lambda_nm: Vec<f64>,
    pub noon_counts: Vec<f64>,
    pub non_noon_counts: Vec<f64>,
}

/// Normalized fringe values with per-bin Poisson standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSpectrogram {
    pub lambda_nm: Vec<f64>,
    pub value: Vec<f64>,
    pub sigma: Vec<f64>,
    pub valid: Vec<bool>,
}

impl NormalizedSpectrogram {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Expected photons per bin and their total, for a source observed through
/// the grid over `integration_time_s`. Per-bin mean =
/// intensity(λ)·step·t·λ/(h·c) with the shape normalized to unit grid
/// average.
pub fn photon_budget(
    source: &SourceSpectrum,
    grid: &SpectralGrid,
    integration_time_s: f64,
) -> Result<(Vec<f64>, f64), InterferogramError> {
    grid.validate()?;
    source.validate()?;
    if !(integration_time_s > 0.0) {
        return Err(InterferogramError::InvalidSource(
            "integration time must be positive".into(),
        ));
    }
    let lambdas = grid.wavelengths();
    let shape: Vec<f64> = lambdas.iter().map(|&l| source.raw_shape(l)).collect();
    let shape_mean = shape.iter().sum::<f64>() / shape.len() as f64;
    let per_bin: Vec<f64> = lambdas
        .iter()
        .zip(&shape)
        .map(|(&l, &s)| {
            let intensity = source.spectral_intensity_w_per_nm * s / shape_mean;
            // photon energy h·c/λ with λ in metres
            let e_photon = H_PLANCK_JS * C_M_PER_S / (l * 1e-9);
            intensity * grid.step_nm * integration_time_s / e_photon
        })
        .collect();
    let total = per_bin.iter().sum();
    Ok((per_bin, total))
}

fn poisson_or_mean(mean: f64, poisson_enabled: bool, rng: &mut ChaCha8Rng) -> f64 {
    if !poisson_enabled {
        return mean;
    }
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive finite Poisson mean").sample(rng)
}

fn phase_jitter(rms: f64, rng: &mut ChaCha8Rng) -> f64 {
    if rms <= 0.0 {
        0.0
    } else {
        Normal::new(0.0, rms).expect("valid jitter sigma").sample(rng)
    }
}

/// Synthesize a classical intensity spectrogram. `geometry` is expected to
/// be stationary-phase-point balanced already; `systematics.arm_imbalance_m`
/// is added to the reference arm on top of that, then spectra are computed,
/// then the spectrometer offset shifts the bin labels.
pub fn synth_classical(
    model: &RefractiveIndexModel,
    geometry: &InterferometerGeometry,
    grid: &SpectralGrid,
    source: &SourceSpectrum,
    integration_time_s: f64,
    noise: &NoiseSettings,
    systematics: &SystematicsSettings,
    parallel: bool,
) -> Result<ClassicalSpectrogram, InterferogramError> {
    noise.validate()?;
    systematics.validate()?;
    let (per_bin, _) = photon_budget(source, grid, integration_time_s)?;
    let geo = InterferometerGeometry {
        reference_length_m: geometry.reference_length_m + systematics.arm_imbalance_m,
        ..*geometry
    };
    geo.validate()?;
    let lambdas_true = grid.wavelengths();
    let phases: Vec<f64> = lambdas_true
        .iter()
        .map(|&l| classical_phase_exact(&geo, model, l))
        .collect::<Result<_, _>>()?;
    let rows = map_indexed(lambdas_true.len(), parallel, |i| {
        let mut rng_phase = ChaCha8Rng::seed_from_u64(mix_seed(noise.rng_seed, i as u64, 3));
        let phi = phases[i] + phase_jitter(noise.phase_jitter_rms, &mut rng_phase);
        let envelope = per_bin[i];
        let mean_counts =
            envelope * 0.5 * (1.0 + noise.visibility * phi.cos()) + noise.dark_counts_per_bin;
        let mean_ref = envelope / 2.0 + noise.dark_counts_per_bin;
        let mut rng_c = ChaCha8Rng::seed_from_u64(mix_seed(noise.rng_seed, i as u64, 0));
        let mut rng_a = ChaCha8Rng::seed_from_u64(mix_seed(noise.rng_seed, i as u64, 1));
        let mut rng_b = ChaCha8Rng::seed_from_u64(mix_seed(noise.rng_seed, i as u64, 2));
        (
            poisson_or_mean(mean_counts, noise.poisson_enabled, &mut rng_c),
            poisson_or_mean(mean_ref, noise.poisson_enabled, &mut rng_a),
            poisson_or_mean(mean_ref, noise.poisson_enabled, &mut rng_b),
        )
    });
    Ok(ClassicalSpectrogram {
        grid: *grid,
        lambda_nm: lambdas_true
            .iter()
            .map(|l| l + systematics.spectrometer_offset_nm)
            .collect(),
        counts: rows.iter().map(|r| r.0).collect(),
        ref_a: rows.iter().map(|r| r.1).collect(),
        ref_b: rows.iter().map(|r| r.2).collect(),
    })
}

/// Synthesize a two-photon coincidence spectrogram around the degenerate
/// wavelength λ* = 2λ_p. Photon pairs (half the photon budget) split evenly
/// between the N00N and opposite-path channels; the N00N channel carries the
/// interference. The arm imbalance enters only through the constant offset
/// phase; the classical spectrometer offset does not apply because the
/// quantum detection axis is referenced to the pump.
pub fn synth_quantum(
    model: &RefractiveIndexModel,
    geometry: &InterferometerGeometry,
    grid: &SpectralGrid,
    source: &SourceSpectrum,
    integration_time_s: f64,
    pump_nm: f64,
    noise: &NoiseSettings,
    systematics: &SystematicsSettings,
    parallel: bool,
) -> Result<CoincidenceSpectrogram, InterferogramError> {
    noise.validate()?;
    systematics.validate()?;
    let (per_bin, _) = photon_budget(source, grid, integration_time_s)?;
    let geo = InterferometerGeometry {
        reference_length_m: geometry.reference_length_m + systematics.arm_imbalance_m,
        ..*geometry
    };
    geo.validate()?;
    let lambda_star = 2.0 * pump_nm;
    let sample_star = model.evaluate(lambda_star)?;
    // All arm-length information collapses into the constant offset.
    let geo_noon = InterferometerGeometry {
        phase_offset_rad: noon_fit_phase_offset(&geo, model, lambda_star)?,
        ..geo
    };
    let lambdas = grid.wavelengths();
    let phases: Vec<f64> = lambdas
        .iter()
        .map(|&l| noon_phase(&geo_noon, &sample_star, l - lambda_star, true))
        .collect::<Result<_, _>>()?;
    let rows = map_indexed(lambdas.len(), parallel, |i| {
        let mut rng_phase = ChaCha8Rng::seed_from_u64(mix_seed(noise.rng_seed, i as u64, 3));
        let phi = phases[i] + phase_jitter(noise.phase_jitter_rms, &mut rng_phase);
        let pairs = per_bin[i] / 2.0;
        let mean_noon =
            pairs / 2.0 * 0.5 * (1.0 + noise.visibility * phi.cos()) + noise.dark_counts_per_bin;
        let mean_non_noon = pairs / 4.0 + noise.dark_counts_per_bin;
        let mut rng_n = ChaCha8Rng::seed_from_u64(mix_seed(noise.rng_seed, i as u64, 0));
        let mut rng_nn = ChaCha8Rng::seed_from_u64(mix_seed(noise.rng_seed, i as u64, 1));
        (
            poisson_or_mean(mean_noon, noise.poisson_enabled, &mut rng_n),
            poisson_or_mean(mean_non_noon, noise.poisson_enabled, &mut rng_nn),
        )
    });
    Ok(CoincidenceSpectrogram {
        grid: *grid,
        lambda_nm: lambdas,
        noon_counts: rows.iter().map(|r| r.0).collect(),
        non_noon_counts: rows.iter().map(|r| r.1).collect(),
    })
}

/// Normalize a classical spectrogram by the sum of the two single-arm
/// reference spectrograms: value = counts/(ref_a + ref_b). Zero-reference
/// bins are flagged invalid.
pub fn normalize_classical(s: &ClassicalSpectrogram) -> NormalizedSpectrogram {
    let n = s.counts.len();
    let mut value = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let denom = s.ref_a[i] + s.ref_b[i];
        if denom > 0.0 {
            value[i] = s.counts[i] / denom;
            sigma[i] = s.counts[i].max(1.0).sqrt() / denom;
            valid[i] = true;
        }
    }
    NormalizedSpectrogram {
        lambda_nm: s.lambda_nm.clone(),
        value,
        sigma,
        valid,
    }
}

/// Normalize a coincidence spectrogram on the fly by twice the opposite-path
/// coincidences: value = noon/(2·non_noon). Zero-denominator bins are
/// flagged invalid.
pub fn normalize_quantum(s: &CoincidenceSpectrogram) -> NormalizedSpectrogram {
    let n = s.noon_counts.len();
    let mut value = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        let denom = 2.0 * s.non_noon_counts[i];
        if denom > 0.0 {
            value[i] = s.noon_counts[i] / denom;
            sigma[i] = s.noon_counts[i].max(1.0).sqrt() / denom;
            valid[i] = true;
        }
    }
    NormalizedSpectrogram {
        lambda_nm: s.lambda_nm.clone(),
        value,
        sigma,
        valid,
    }
}

/// Raw fringe visibility (max−min)/(max+min) of a normalized pattern.
pub fn raw_visibility(norm: &NormalizedSpectrogram) -> f64 {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (v, ok) in norm.value.iter().zip(&norm.valid) {
        if *ok {
            min = min.min(*v);
            max = max.max(*v);
        }
    }
    (max - min) / (max + min)
}

fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn classical_to_csv(s: &ClassicalSpectrogram) -> String {
    let mut out = String::from("lambda_nm, counts, ref_a, ref_b\n");
    for i in 0..s.counts.len() {
        out.push_str(&format!(
            "{}, {}, {}, {}\n",
            fmt_float(s.lambda_nm[i]),
            fmt_float(s.counts[i]),
            fmt_float(s.ref_a[i]),
            fmt_float(s.ref_b[i])
        ));
    }
    out
}

pub fn quantum_to_csv(s: &CoincidenceSpectrogram) -> String {
    let mut out = String::from("lambda_nm, noon, non_noon\n");
    for i in 0..s.noon_counts.len() {
        out.push_str(&format!(
            "{}, {}, {}\n",
            fmt_float(s.lambda_nm[i]),
            fmt_float(s.noon_counts[i]),
            fmt_float(s.non_noon_counts[i])
        ));
    }
    out
}

fn parse_csv_rows(
    text: &str,
    expected_header: &[&str],
) -> Result<Vec<Vec<f64>>, InterferogramError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(InterferogramError::CsvParse {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != expected_header {
        return Err(InterferogramError::CsvParse {
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                expected_header.join(", "),
                header
            ),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != expected_header.len() {
            return Err(InterferogramError::CsvParse {
                line: idx + 1,
                message: format!(
                    "expected {} columns, found {}",
                    expected_header.len(),
                    fields.len()
                ),
            });
        }
        let mut row = Vec::with_capacity(fields.len());
        for f in fields {
            row.push(f.parse::<f64>().map_err(|e| InterferogramError::CsvParse {
                line: idx + 1,
                message: format!("bad float `{f}`: {e}"),
            })?);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn grid_from_lambdas(lambda_nm: &[f64]) -> SpectralGrid {
    let start = lambda_nm.first().copied().unwrap_or(0.0);
    let stop = lambda_nm.last().copied().unwrap_or(start);
    let step = if lambda_nm.len() > 1 {
        (stop - start) / (lambda_nm.len() - 1) as f64
    } else {
        1.0
    };
    SpectralGrid {
        start_nm: start,
        stop_nm: stop,
        step_nm: step,
    }
}

pub fn classical_from_csv(text: &str) -> Result<ClassicalSpectrogram, InterferogramError> {
    let rows = parse_csv_rows(text, &["lambda_nm", "counts", "ref_a", "ref_b"])?;
    let lambda_nm: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    Ok(ClassicalSpectrogram {
        grid: grid_from_lambdas(&lambda_nm),
        lambda_nm,
        counts: rows.iter().map(|r| r[1]).collect(),
        ref_a: rows.iter().map(|r| r[2]).collect(),
        ref_b: rows.iter().map(|r| r[3]).collect(),
    })
}

pub fn quantum_from_csv(text: &str) -> Result<CoincidenceSpectrogram, InterferogramError> {
    let rows = parse_csv_rows(text, &["lambda_nm", "noon", "non_noon"])?;
    let lambda_nm: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    Ok(CoincidenceSpectrogram {
        grid: grid_from_lambdas(&lambda_nm),
        lambda_nm,
        noon_counts: rows.iter().map(|r| r[1]).collect(),
        non_noon_counts: rows.iter().map(|r| r[2]).collect(),
    })
}
