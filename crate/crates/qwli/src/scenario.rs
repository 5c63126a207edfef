//! Scenario configuration: one validated, serializable description of a
//! measurement — truth model, geometry, grid, source, acquisition settings,
//! noise, systematics, and fit settings — plus the two shipped presets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::{ClassicalFitParams, FitOptions, QuantumFitParams, SolverConfig};
use crate::interferogram::{
    InterferogramError, NoiseSettings, SourceSpectrum, SpectralGrid, SpectrumShape,
    SystematicsSettings,
};
use crate::phase::{
    ground_truth_model, stationary_phase_point_length, InterferometerGeometry, PhaseError,
    RefractiveIndexModel, LAMBDA_MAX_NM, LAMBDA_MIN_NM,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Interferogram(#[from] InterferogramError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown preset `{0}` (available: paper-classical, paper-quantum)")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Classical,
    #[serde(rename = "classical_2nd_order")]
    Classical2ndOrder,
    Quantum,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Classical => "classical",
            Method::Classical2ndOrder => "classical_2nd_order",
            Method::Quantum => "quantum",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classical" => Ok(Method::Classical),
            "classical-2nd-order" | "classical_2nd_order" => Ok(Method::Classical2ndOrder),
            "quantum" => Ok(Method::Quantum),
            other => Err(format!(
                "unknown method `{other}` (classical, classical-2nd-order, quantum)"
            )),
        }
    }
}

/// Interferometer geometry configuration. With `auto_spp` the reference arm
/// is balanced to the stationary phase point of the truth model at
/// `spp_wavelength_nm`; otherwise `reference_length_m` must be given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub sample_length_m: f64,
    pub phase_offset_rad: f64,
    pub auto_spp: bool,
    pub spp_wavelength_nm: f64,
    #[serde(default)]
    pub reference_length_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSettings {
    pub method: Method,
    pub weighted: bool,
    /// Fit the constant offset phase as a nuisance parameter.
    pub fit_phase_offset: bool,
    /// Include the known residual fourth-power third-order term in the
    /// quantum fitting function (one free parameter either way).
    pub include_third_order: bool,
    pub solver: SolverConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_classical: Option<ClassicalFitParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_quantum: Option<QuantumFitParams>,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            method: Method::Classical,
            weighted: true,
            fit_phase_offset: false,
            include_third_order: true,
            solver: SolverConfig::default(),
            init_classical: None,
            init_quantum: None,
        }
    }
}

impl FitSettings {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            weighted: self.weighted,
            fit_phase_offset: self.fit_phase_offset,
            solver: self.solver,
        }
    }
}

/// Complete measurement scenario. Unknown JSON keys are rejected at load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub truth_model: RefractiveIndexModel,
    pub geometry: GeometryConfig,
    pub grid: SpectralGrid,
    pub source: SourceSpectrum,
    pub integration_time_s: f64,
    pub pump_wavelength_nm: f64,
    pub noise: NoiseSettings,
    pub systematics: SystematicsSettings,
    pub fit: FitSettings,
    pub master_seed: u64,
}

impl Scenario {
    pub fn lambda_star_nm(&self) -> f64 {
        2.0 * self.pump_wavelength_nm
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.truth_model.validate()?;
        self.grid.validate()?;
        self.source.validate()?;
        self.noise.validate()?;
        self.systematics.validate()?;
        if !(self.geometry.sample_length_m > 0.0) {
            return Err(ScenarioError::Invalid(
                "geometry.sample_length_m must be positive".into(),
            ));
        }
        if !self.geometry.phase_offset_rad.is_finite() {
            return Err(ScenarioError::Invalid(
                "geometry.phase_offset_rad must be finite".into(),
            ));
        }
        if !self.geometry.auto_spp && self.geometry.reference_length_m.is_none() {
            return Err(ScenarioError::Invalid(
                "geometry.reference_length_m required when auto_spp is false".into(),
            ));
        }
        if !(self.integration_time_s > 0.0) {
            return Err(ScenarioError::Invalid(
                "integration_time_s must be positive".into(),
            ));
        }
        let star = self.lambda_star_nm();
        if !(star >= LAMBDA_MIN_NM && star <= LAMBDA_MAX_NM) {
            return Err(ScenarioError::Invalid(format!(
                "2×pump_wavelength_nm = {star} nm outside the model range"
            )));
        }
        if self.geometry.auto_spp
            && !(self.geometry.spp_wavelength_nm >= LAMBDA_MIN_NM
                && self.geometry.spp_wavelength_nm <= LAMBDA_MAX_NM)
        {
            return Err(ScenarioError::Invalid(
                "geometry.spp_wavelength_nm outside the model range".into(),
            ));
        }
        // Resolve the geometry once to surface model evaluation errors.
        self.resolved_geometry()?;
        Ok(())
    }

    /// Geometry with the reference arm resolved (stationary-phase-point
    /// balanced when `auto_spp`). Systematics are NOT applied here; the
    /// synthesis functions add the arm imbalance on top.
    pub fn resolved_geometry(&self) -> Result<InterferometerGeometry, ScenarioError> {
        let reference_length_m = if self.geometry.auto_spp {
            stationary_phase_point_length(
                &self.truth_model,
                self.geometry.spp_wavelength_nm,
                self.geometry.sample_length_m,
            )?
        } else {
            self.geometry.reference_length_m.ok_or_else(|| {
                ScenarioError::Invalid("reference_length_m missing".into())
            })?
        };
        Ok(InterferometerGeometry {
            sample_length_m: self.geometry.sample_length_m,
            reference_length_m,
            phase_offset_rad: self.geometry.phase_offset_rad,
        })
    }

    /// Truth dispersion coefficient at the wavelength the given method
    /// reports: the SPP design wavelength for classical fits, λ* for the
    /// quantum fit.
    pub fn truth_dispersion(&self, method: Method) -> Result<f64, ScenarioError> {
        let lambda = match method {
            Method::Classical | Method::Classical2ndOrder => self.geometry.spp_wavelength_nm,
            Method::Quantum => self.lambda_star_nm(),
        };
        Ok(crate::phase::model_dispersion_at(&self.truth_model, lambda)?)
    }

    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| ScenarioError::Invalid(format!("config parse: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn preset(name: &str) -> Result<Scenario, ScenarioError> {
        match name {
            "paper-classical" => Ok(paper_classical()),
            "paper-quantum" => Ok(paper_quantum()),
            other => Err(ScenarioError::UnknownPreset(other.to_string())),
        }
    }
}

/// Classical preset: broadband source of 125 pW/nm observed from 1450 to
/// 1650 nm at 0.5 nm resolution for 0.1 s, 1 m sample, interferometer
/// balanced at the design stationary point. Shot-noise-limited by default
/// (visibility 1, no dark counts, no phase jitter); degrade via the noise
/// knobs for realism studies.
pub fn paper_classical() -> Scenario {
    Scenario {
        truth_model: ground_truth_model(),
        geometry: GeometryConfig {
            sample_length_m: 1.0,
            phase_offset_rad: 0.0,
            auto_spp: true,
            spp_wavelength_nm: 1560.493,
            reference_length_m: None,
        },
        grid: SpectralGrid {
            start_nm: 1450.0,
            stop_nm: 1650.0,
            step_nm: 0.5,
        },
        source: SourceSpectrum {
            shape: SpectrumShape::Flat,
            center_nm: 1550.0,
            fwhm_nm: 200.0,
            spectral_intensity_w_per_nm: 125e-12,
        },
        integration_time_s: 0.1,
        pump_wavelength_nm: 780.246,
        noise: NoiseSettings {
            poisson_enabled: true,
            visibility: 1.0,
            dark_counts_per_bin: 0.0,
            phase_jitter_rms: 0.0,
            rng_seed: 0,
        },
        systematics: SystematicsSettings::none(),
        fit: FitSettings {
            method: Method::Classical,
            ..FitSettings::default()
        },
        master_seed: 1,
    }
}

/// Quantum preset: photon-pair source of 25 fW/nm singles intensity with a
/// 140 nm FWHM Gaussian spectrum centred on λ* = 2λ_p, 8 s integration,
/// same grid and sample as the classical preset, interferometer balanced at
/// λ*.
pub fn paper_quantum() -> Scenario {
    let pump = 780.246;
    Scenario {
        truth_model: ground_truth_model(),
        geometry: GeometryConfig {
            sample_length_m: 1.0,
            phase_offset_rad: 0.0,
            auto_spp: true,
            spp_wavelength_nm: 2.0 * pump,
            reference_length_m: None,
        },
        grid: SpectralGrid {
            start_nm: 1450.0,
            stop_nm: 1650.0,
            step_nm: 0.5,
        },
        source: SourceSpectrum {
            shape: SpectrumShape::Gaussian,
            center_nm: 2.0 * pump,
            fwhm_nm: 140.0,
            spectral_intensity_w_per_nm: 25e-15,
        },
        integration_time_s: 8.0,
        pump_wavelength_nm: pump,
        noise: NoiseSettings {
            poisson_enabled: true,
            visibility: 1.0,
            dark_counts_per_bin: 0.0,
            phase_jitter_rms: 0.0,
            rng_seed: 0,
        },
        systematics: SystematicsSettings::none(),
        fit: FitSettings {
            method: Method::Quantum,
            ..FitSettings::default()
        },
        master_seed: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn presets_validate() {
        paper_classical().validate().unwrap();
        paper_quantum().validate().unwrap();
    }

    #[test]
    fn preset_truth_dispersion_is_near_17() {
        let d = paper_quantum().truth_dispersion(Method::Quantum).unwrap();
        assert_relative_eq!(d, 17.035, max_relative = 1e-4);
    }

    #[test]
    fn json_round_trip_is_identical() {
        let s = paper_quantum();
        let back = Scenario::from_json(&s.to_json_pretty()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&paper_classical().to_json_pretty()).unwrap();
        v.as_object_mut()
            .unwrap()
            .insert("bogus".into(), serde_json::json!(1));
        assert!(Scenario::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn invalid_fields_are_rejected() {
        let mut s = paper_classical();
        s.integration_time_s = 0.0;
        assert!(s.validate().is_err());
        let mut s = paper_classical();
        s.pump_wavelength_nm = 1000.0; // λ* = 2000 nm out of range
        assert!(s.validate().is_err());
        let mut s = paper_classical();
        s.geometry.auto_spp = false;
        s.geometry.reference_length_m = None;
        assert!(s.validate().is_err());
    }

    #[test]
    fn unknown_preset_errors() {
        assert!(Scenario::preset("nope").is_err());
        assert!(Scenario::preset("paper-classical").is_ok());
    }

    #[test]
    fn auto_spp_resolves_reference_arm() {
        let s = paper_classical();
        let g = s.resolved_geometry().unwrap();
        let expected = stationary_phase_point_length(
            &s.truth_model,
            s.geometry.spp_wavelength_nm,
            1.0,
        )
        .unwrap();
        assert_eq!(g.reference_length_m, expected);
    }
}
