//! Refractive-index models, analytic dispersion derivatives, and the phase
//! functions of classical and two-photon (N00N) spectral interferometry.
//!
//! Units are fixed across the crate: wavelengths in nm, physical lengths in
//! m, phases in rad. The only place where mixed units appear is the
//! conversion to the chromatic dispersion coefficient `D` in ps/(nm·km).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in m/s.
pub const C_M_PER_S: f64 = 2.997_924_58e8;
/// Planck constant in J·s.
pub const H_PLANCK_JS: f64 = 6.626_070_15e-34;
/// Nanometres per metre.
pub const NM_PER_M: f64 = 1.0e9;

/// Wavelength validity window of the refractive-index models, nm.
pub const LAMBDA_MIN_NM: f64 = 1200.0;
pub const LAMBDA_MAX_NM: f64 = 1800.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("wavelength {0} nm outside model range [{LAMBDA_MIN_NM}, {LAMBDA_MAX_NM}] nm")]
    WavelengthOutOfRange(f64),
    #[error("Sellmeier pole: lambda^2 coincides with resonance C_{0} within numerical precision")]
    SellmeierPole(usize),
    #[error("invalid model parameters: {0}")]
    InvalidModel(String),
    #[error("wavelength {0} nm has no physical conjugate for pump {1} nm")]
    NoConjugate(f64, f64),
    #[error("phase denominator is non-positive (lambda_0 + d_lambda = {0} nm)")]
    NonPositiveDenominator(f64),
}

/// Ground-truth refractive index of the sample, either a Sellmeier form or a
/// local third-order Taylor expansion around an anchor wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum RefractiveIndexModel {
    Sellmeier {
        /// Dimensionless oscillator strengths B1..B3.
        b: [f64; 3],
        /// Resonance terms C1..C3 in µm².
        c_um2: [f64; 3],
        /// Additive effective-index offset (waveguide contribution).
        delta_n: f64,
    },
    Taylor {
        /// Anchor wavelength in nm.
        anchor_nm: f64,
        n: f64,
        /// dn/dλ at the anchor, nm⁻¹.
        dn_dlambda: f64,
        /// d²n/dλ² at the anchor, nm⁻².
        d2n_dlambda2: f64,
        /// d³n/dλ³ at the anchor, nm⁻³.
        d3n_dlambda3: f64,
    },
}

/// Refractive index and its first three wavelength derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionSample {
    pub lambda_nm: f64,
    pub n: f64,
    /// nm⁻¹
    pub dn_dlambda: f64,
    /// nm⁻²
    pub d2n_dlambda2: f64,
    /// nm⁻³
    pub d3n_dlambda3: f64,
}

/// Interferometer arm geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferometerGeometry {
    /// Physical sample length, m.
    pub sample_length_m: f64,
    /// Reference arm length, m.
    pub reference_length_m: f64,
    /// Constant offset phase added by the stabilisation system, rad.
    pub phase_offset_rad: f64,
}

impl InterferometerGeometry {
    pub fn validate(&self) -> Result<(), PhaseError> {
        if !(self.sample_length_m > 0.0) {
            return Err(PhaseError::InvalidModel(format!(
                "sample length must be positive, got {}",
                self.sample_length_m
            )));
        }
        if !(self.reference_length_m >= 0.0) {
            return Err(PhaseError::InvalidModel(format!(
                "reference length must be non-negative, got {}",
                self.reference_length_m
            )));
        }
        if !self.phase_offset_rad.is_finite() {
            return Err(PhaseError::InvalidModel("phase offset not finite".into()));
        }
        Ok(())
    }
}

impl RefractiveIndexModel {
    pub fn validate(&self) -> Result<(), PhaseError> {
        match self {
            RefractiveIndexModel::Sellmeier { b, c_um2, delta_n } => {
                if b.iter().any(|&bi| bi < 0.0 || !bi.is_finite()) {
                    return Err(PhaseError::InvalidModel("Sellmeier B_i must be >= 0".into()));
                }
                if c_um2.iter().any(|&ci| ci <= 0.0 || !ci.is_finite()) {
                    return Err(PhaseError::InvalidModel("Sellmeier C_i must be > 0".into()));
                }
                if !delta_n.is_finite() {
                    return Err(PhaseError::InvalidModel("delta_n not finite".into()));
                }
                // No resonance may sit inside the operating window.
                let lo = (LAMBDA_MIN_NM * 1e-3).powi(2);
                let hi = (LAMBDA_MAX_NM * 1e-3).powi(2);
                for &ci in c_um2 {
                    if ci >= lo && ci <= hi {
                        return Err(PhaseError::InvalidModel(format!(
                            "Sellmeier resonance C = {ci} µm² lies inside the operating window"
                        )));
                    }
                }
                Ok(())
            }
            RefractiveIndexModel::Taylor { anchor_nm, n, .. } => {
                if !(*anchor_nm >= LAMBDA_MIN_NM && *anchor_nm <= LAMBDA_MAX_NM) {
                    return Err(PhaseError::WavelengthOutOfRange(*anchor_nm));
                }
                if !n.is_finite() {
                    return Err(PhaseError::InvalidModel("n not finite".into()));
                }
                Ok(())
            }
        }
    }

    /// n(λ) and its first three analytic derivatives with respect to
    /// wavelength, at `lambda_nm`. No internal finite differencing.
    pub fn evaluate(&self, lambda_nm: f64) -> Result<DispersionSample, PhaseError> {
        if !(lambda_nm >= LAMBDA_MIN_NM && lambda_nm <= LAMBDA_MAX_NM) {
            return Err(PhaseError::WavelengthOutOfRange(lambda_nm));
        }
        match self {
            RefractiveIndexModel::Taylor {
                anchor_nm,
                n,
                dn_dlambda,
                d2n_dlambda2,
                d3n_dlambda3,
            } => {
                let d = lambda_nm - anchor_nm;
                Ok(DispersionSample {
                    lambda_nm,
                    n: n + dn_dlambda * d + d2n_dlambda2 * d * d / 2.0
                        + d3n_dlambda3 * d * d * d / 6.0,
                    dn_dlambda: dn_dlambda + d2n_dlambda2 * d + d3n_dlambda3 * d * d / 2.0,
                    d2n_dlambda2: d2n_dlambda2 + d3n_dlambda3 * d,
                    d3n_dlambda3: *d3n_dlambda3,
                })
            }
            RefractiveIndexModel::Sellmeier { b, c_um2, delta_n } => {
                // Work in µm, convert derivatives back to nm at the end.
                let l = lambda_nm * 1e-3;
                let l2 = l * l;
                // f = n² = 1 + Σ B l²/(l²-C); derivatives of each term in l.
                let (mut f, mut f1, mut f2, mut f3) = (1.0, 0.0, 0.0, 0.0);
                for (i, (&bi, &ci)) in b.iter().zip(c_um2.iter()).enumerate() {
                    let u = l2 - ci;
                    if u.abs() < 1e-12 {
                        return Err(PhaseError::SellmeierPole(i + 1));
                    }
                    let u2 = u * u;
                    let u3 = u2 * u;
                    let u4 = u3 * u;
                    f += bi * l2 / u;
                    f1 += -2.0 * bi * ci * l / u2;
                    f2 += -2.0 * bi * ci * (1.0 / u2 - 4.0 * l2 / u3);
                    f3 += 24.0 * bi * ci * l * (1.0 / u3 - 2.0 * l2 / u4);
                }
                if f <= 0.0 {
                    return Err(PhaseError::InvalidModel(
                        "Sellmeier n² evaluated non-positive".into(),
                    ));
                }
                let s = f.sqrt(); // n - delta_n
                let s1 = f1 / (2.0 * s);
                let s2 = f2 / (2.0 * s) - f1 * f1 / (4.0 * s * s * s);
                let s3 = f3 / (2.0 * s) - 3.0 * f1 * f2 / (4.0 * s * s * s)
                    + 3.0 * f1 * f1 * f1 / (8.0 * s * s * s * s * s);
                // Per-µm -> per-nm: one factor 1e-3 per derivative order.
                Ok(DispersionSample {
                    lambda_nm,
                    n: s + delta_n,
                    dn_dlambda: s1 * 1e-3,
                    d2n_dlambda2: s2 * 1e-6,
                    d3n_dlambda3: s3 * 1e-9,
                })
            }
        }
    }
}

/// Fused-silica-like Sellmeier coefficients (documented default for model
/// mismatch studies; the derived D at 1560 nm is reported, never asserted).
pub fn fused_silica_like() -> RefractiveIndexModel {
    RefractiveIndexModel::Sellmeier {
        b: [0.696_166_3, 0.407_942_6, 0.897_479_4],
        c_um2: [
            0.068_404_3 * 0.068_404_3,
            0.116_241_4 * 0.116_241_4,
            9.896_161 * 9.896_161,
        ],
        delta_n: 0.0,
    }
}

/// Exact interferometer output phase, rad:
/// φ(λ) = (2π/λ)(n(λ)·L_s − L_r), plus the geometry's constant offset.
pub fn classical_phase_exact(
    geometry: &InterferometerGeometry,
    model: &RefractiveIndexModel,
    lambda_nm: f64,
) -> Result<f64, PhaseError> {
    let sample = model.evaluate(lambda_nm)?;
    let opd_nm =
        (sample.n * geometry.sample_length_m - geometry.reference_length_m) * NM_PER_M;
    Ok(2.0 * std::f64::consts::PI / lambda_nm * opd_nm + geometry.phase_offset_rad)
}

/// Third-order Taylor phase about the stationary phase point:
/// φ = 2πL_s[½·n″·Δλ²/(λ₀+Δλ) + (1/6)·n‴·Δλ³/(λ₀+Δλ)] + φ_off.
///
/// Assumes the interferometer is balanced to the stationary phase point so
/// that the zeroth- and first-order terms reduce to the constant offset.
pub fn classical_phase_taylor(
    geometry: &InterferometerGeometry,
    sample: &DispersionSample,
    d_lambda_nm: f64,
) -> Result<f64, PhaseError> {
    let denom = sample.lambda_nm + d_lambda_nm;
    if denom <= 0.0 {
        return Err(PhaseError::NonPositiveDenominator(denom));
    }
    let ls_nm = geometry.sample_length_m * NM_PER_M;
    let dl2 = d_lambda_nm * d_lambda_nm;
    Ok(2.0 * std::f64::consts::PI
        * ls_nm
        * (0.5 * sample.d2n_dlambda2 * dl2 / denom
            + sample.d3n_dlambda3 / 6.0 * dl2 * d_lambda_nm / denom)
        + geometry.phase_offset_rad)
}

/// Constant phase that the exact phase takes at the stationary point of a
/// balanced interferometer: 2π·L_s·dn/dλ|λ₀ (in nm units), wrapped to
/// (−π, π], plus the geometry's explicit offset. This is the value a fit of
/// the Taylor form must use for its φ_off when the data were synthesised
/// from the exact phase.
pub fn classical_fit_phase_offset(
    geometry: &InterferometerGeometry,
    model: &RefractiveIndexModel,
    lambda0_nm: f64,
) -> Result<f64, PhaseError> {
    let s = model.evaluate(lambda0_nm)?;
    let intrinsic = 2.0 * std::f64::consts::PI
        * geometry.sample_length_m
        * NM_PER_M
        * s.dn_dlambda;
    Ok(wrap_phase(intrinsic + geometry.phase_offset_rad))
}

/// Constant offset of the two-photon phase for the actual arm lengths:
/// 4π(n(λ*)·L_s − L_r)/λ* plus twice the geometry's explicit offset
/// (each photon of the pair picks it up once). Wrapped to (−π, π].
pub fn noon_fit_phase_offset(
    geometry: &InterferometerGeometry,
    model: &RefractiveIndexModel,
    lambda_star_nm: f64,
) -> Result<f64, PhaseError> {
    let s = model.evaluate(lambda_star_nm)?;
    let opd_nm =
        (s.n * geometry.sample_length_m - geometry.reference_length_m) * NM_PER_M;
    let intrinsic = 4.0 * std::f64::consts::PI * opd_nm / lambda_star_nm;
    Ok(wrap_phase(intrinsic + 2.0 * geometry.phase_offset_rad))
}

/// Wrap an angle to (−π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = phi % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Reference arm length that balances the interferometer to the stationary
/// phase point at λ₀: L_r = (n(λ₀) − dn/dλ|λ₀·λ₀)·L_s.
pub fn stationary_phase_point_length(
    model: &RefractiveIndexModel,
    lambda0_nm: f64,
    sample_length_m: f64,
) -> Result<f64, PhaseError> {
    let s = model.evaluate(lambda0_nm)?;
    Ok((s.n - s.dn_dlambda * lambda0_nm) * sample_length_m)
}

/// Energy-conservation conjugate of λ₁ for a pump at λ_p:
/// 1/λ_p = 1/λ₁ + 1/λ₂.
pub fn conjugate_wavelength(lambda1_nm: f64, pump_nm: f64) -> Result<f64, PhaseError> {
    if lambda1_nm <= pump_nm {
        return Err(PhaseError::NoConjugate(lambda1_nm, pump_nm));
    }
    Ok(1.0 / (1.0 / pump_nm - 1.0 / lambda1_nm))
}

/// Two-photon N00N-state phase at detuning Δλ from the degenerate
/// wavelength λ* (= the sample's wavelength):
/// φ = n″|λ*·π·L_s·Δλ²/(λ*/2+Δλ) + φ_off, optionally plus the residual
/// fourth-power third-order term 2πL_s·(n‴/6)·Δλ⁴/(λ*/2+Δλ)².
pub fn noon_phase(
    geometry: &InterferometerGeometry,
    sample_at_star: &DispersionSample,
    d_lambda_nm: f64,
    include_third_order: bool,
) -> Result<f64, PhaseError> {
    let half_star = sample_at_star.lambda_nm / 2.0;
    let denom = half_star + d_lambda_nm;
    if denom <= 0.0 {
        return Err(PhaseError::NonPositiveDenominator(denom));
    }
    let ls_nm = geometry.sample_length_m * NM_PER_M;
    let dl2 = d_lambda_nm * d_lambda_nm;
    let mut phi = sample_at_star.d2n_dlambda2 * std::f64::consts::PI * ls_nm * dl2 / denom;
    if include_third_order {
        phi += 2.0 * std::f64::consts::PI * ls_nm * sample_at_star.d3n_dlambda3 / 6.0 * dl2
            * dl2
            / (denom * denom);
    }
    Ok(phi + geometry.phase_offset_rad)
}

/// Chromatic dispersion coefficient D = −(λ₀/c)·d²n/dλ², in ps/(nm·km),
/// from d²n/dλ² in nm⁻² and λ₀ in nm.
pub fn dispersion_coefficient(d2n_per_nm2: f64, lambda0_nm: f64) -> f64 {
    // (1e-9 m/nm)·(1e18 nm²/m²)·(1e6 ps·m/(nm·km·s)) = 1e15
    -lambda0_nm * d2n_per_nm2 / C_M_PER_S * 1e15
}

/// Exact inverse of [`dispersion_coefficient`].
pub fn dispersion_to_d2n(d_ps_nm_km: f64, lambda0_nm: f64) -> f64 {
    -d_ps_nm_km * C_M_PER_S / (lambda0_nm * 1e15)
}

/// d³n/dλ³ (nm⁻³) that yields a given dispersion slope dD/dλ in
/// ps/(nm²·km) at λ₀, for a given d²n/dλ² (nm⁻²):
/// dD/dλ = −(1/c)(d²n/dλ² + λ·d³n/dλ³).
pub fn d3n_for_dispersion_slope(
    slope_ps_nm2_km: f64,
    lambda0_nm: f64,
    d2n_per_nm2: f64,
) -> f64 {
    let slope_si = slope_ps_nm2_km * 1e3; // s/m³
    let d2n_si = d2n_per_nm2 * 1e18; // m⁻²
    let d3n_si = (-slope_si * C_M_PER_S - d2n_si) / (lambda0_nm * 1e-9); // m⁻³
    d3n_si * 1e-27
}

/// Declared ground-truth fibre model: a Taylor expansion anchored at
/// 1560.493 nm with D = 17.035 ps/(nm·km) and a dispersion slope of
/// 0.058 ps/(nm²·km) (representative standard single-mode fibre slope;
/// the slope is a modelling assumption, not a measured input).
pub fn ground_truth_model() -> RefractiveIndexModel {
    let anchor_nm = 1560.493;
    let d2n = dispersion_to_d2n(17.035, anchor_nm);
    let d3n = d3n_for_dispersion_slope(0.058, anchor_nm, d2n);
    RefractiveIndexModel::Taylor {
        anchor_nm,
        n: 1.468,
        dn_dlambda: -1.2e-5,
        d2n_dlambda2: d2n,
        d3n_dlambda3: d3n,
    }
}

/// Dispersion coefficient of a model at a given wavelength, ps/(nm·km).
pub fn model_dispersion_at(
    model: &RefractiveIndexModel,
    lambda_nm: f64,
) -> Result<f64, PhaseError> {
    let s = model.evaluate(lambda_nm)?;
    Ok(dispersion_coefficient(s.d2n_dlambda2, lambda_nm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn finite_diff_sample(model: &RefractiveIndexModel, lambda: f64) -> (f64, f64, f64) {
        // Central differences with 0.01 nm step, as the independent oracle.
        // Each derivative order is differenced from the next-lower analytic
        // order: direct high-order differences of n itself are below the
        // f64 roundoff floor at this step size in nm units.
        let h = 0.01;
        let at = |l: f64| model.evaluate(l).unwrap();
        let d1 = (at(lambda + h).n - at(lambda - h).n) / (2.0 * h);
        let d2 = (at(lambda + h).dn_dlambda - at(lambda - h).dn_dlambda) / (2.0 * h);
        let d3 =
            (at(lambda + h).d2n_dlambda2 - at(lambda - h).d2n_dlambda2) / (2.0 * h);
        (d1, d2, d3)
    }

    #[test]
    fn constant_taylor_model_returns_its_coefficients() {
        let m = RefractiveIndexModel::Taylor {
            anchor_nm: 1560.0,
            n: 1.468,
            dn_dlambda: 0.0,
            d2n_dlambda2: 0.0,
            d3n_dlambda3: 0.0,
        };
        let s = m.evaluate(1560.0).unwrap();
        assert_eq!(
            (s.n, s.dn_dlambda, s.d2n_dlambda2, s.d3n_dlambda3),
            (1.468, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn taylor_at_anchor_returns_stored_coefficients_exactly() {
        let m = ground_truth_model();
        if let RefractiveIndexModel::Taylor {
            anchor_nm,
            n,
            dn_dlambda,
            d2n_dlambda2,
            d3n_dlambda3,
        } = m.clone()
        {
            let s = m.evaluate(anchor_nm).unwrap();
            assert_eq!(s.n, n);
            assert_eq!(s.dn_dlambda, dn_dlambda);
            assert_eq!(s.d2n_dlambda2, d2n_dlambda2);
            assert_eq!(s.d3n_dlambda3, d3n_dlambda3);
        } else {
            panic!("ground truth must be a Taylor model");
        }
    }

    #[test]
    fn sellmeier_derivatives_match_finite_differences() {
        let m = fused_silica_like();
        let s = m.evaluate(1560.493).unwrap();
        let (d1, d2, d3) = finite_diff_sample(&m, 1560.493);
        assert_relative_eq!(s.dn_dlambda, d1, max_relative = 1e-6);
        assert_relative_eq!(s.d2n_dlambda2, d2, max_relative = 1e-6);
        assert_relative_eq!(s.d3n_dlambda3, d3, max_relative = 1e-6);
    }

    #[test]
    fn derivatives_match_finite_differences_across_band() {
        for model in [fused_silica_like(), ground_truth_model()] {
            // Stay 0.01 nm inside the validity range for the differences.
            let mut l = 1300.0;
            while l <= 1750.0 {
                let s = model.evaluate(l).unwrap();
                let (d1, d2, d3) = finite_diff_sample(&model, l);
                assert_relative_eq!(s.dn_dlambda, d1, max_relative = 1e-6);
                assert_relative_eq!(s.d2n_dlambda2, d2, max_relative = 1e-6);
                assert_relative_eq!(s.d3n_dlambda3, d3, max_relative = 1e-6);
                l += 50.0;
            }
        }
    }

    #[test]
    fn ground_truth_dispersion_is_17_035_at_anchor() {
        let d = model_dispersion_at(&ground_truth_model(), 1560.493).unwrap();
        assert_relative_eq!(d, 17.035, max_relative = 1e-12);
    }

    #[test]
    fn ground_truth_slope_is_0_058() {
        let m = ground_truth_model();
        let h = 1.0;
        let slope = (model_dispersion_at(&m, 1560.493 + h).unwrap()
            - model_dispersion_at(&m, 1560.493 - h).unwrap())
            / (2.0 * h);
        assert_relative_eq!(slope, 0.058, max_relative = 1e-6);
    }

    #[test]
    fn out_of_range_wavelength_is_rejected() {
        let m = ground_truth_model();
        assert!(matches!(
            m.evaluate(1100.0),
            Err(PhaseError::WavelengthOutOfRange(_))
        ));
        assert!(matches!(
            m.evaluate(1900.0),
            Err(PhaseError::WavelengthOutOfRange(_))
        ));
    }

    #[test]
    fn balanced_constant_index_phase_is_zero() {
        let m = RefractiveIndexModel::Taylor {
            anchor_nm: 1500.0,
            n: 1.5,
            dn_dlambda: 0.0,
            d2n_dlambda2: 0.0,
            d3n_dlambda3: 0.0,
        };
        let g = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: 1.5,
            phase_offset_rad: 0.0,
        };
        for l in [1300.0, 1500.0, 1700.0] {
            assert_abs_diff_eq!(classical_phase_exact(&g, &m, l).unwrap(), 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn vacuum_path_of_a_million_wavelengths() {
        let m = RefractiveIndexModel::Taylor {
            anchor_nm: 1500.0,
            n: 1.0,
            dn_dlambda: 0.0,
            d2n_dlambda2: 0.0,
            d3n_dlambda3: 0.0,
        };
        let g = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: 0.0,
            phase_offset_rad: 0.0,
        };
        // evaluate() range starts at 1200 nm, so use 1250 nm: 8e5 wavelengths.
        let phi = classical_phase_exact(&g, &m, 1250.0).unwrap();
        assert_relative_eq!(phi, 2.0 * std::f64::consts::PI * 8.0e5, max_relative = 1e-12);
    }

    #[test]
    fn taylor_phase_at_zero_detuning_is_offset() {
        let g = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: 1.4,
            phase_offset_rad: 0.7,
        };
        let s = ground_truth_model().evaluate(1560.493).unwrap();
        assert_eq!(classical_phase_taylor(&g, &s, 0.0).unwrap(), 0.7);
    }

    #[test]
    fn exact_and_taylor_agree_near_stationary_point() {
        // Sellmeier truth so the comparison is a genuine truncation check.
        let m = fused_silica_like();
        let l0 = 1560.493;
        let lr = stationary_phase_point_length(&m, l0, 1.0).unwrap();
        let s = m.evaluate(l0).unwrap();
        let g_exact = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: lr,
            phase_offset_rad: 0.0,
        };
        let intrinsic = classical_fit_phase_offset(&g_exact, &m, l0).unwrap();
        let g_taylor = InterferometerGeometry {
            phase_offset_rad: intrinsic,
            ..g_exact
        };
        for dl in [-25.0, -10.0, 10.0, 25.0] {
            let exact = classical_phase_exact(&g_exact, &m, l0 + dl).unwrap();
            let taylor = classical_phase_taylor(&g_taylor, &s, dl).unwrap();
            let resid = wrap_phase(exact - taylor);
            assert!(resid.abs() < 0.01, "residual {resid} at dl={dl}");
        }
    }

    #[test]
    fn exact_minus_taylor_residual_is_fourth_order() {
        let m = fused_silica_like();
        let l0 = 1560.493;
        let lr = stationary_phase_point_length(&m, l0, 1.0).unwrap();
        let s = m.evaluate(l0).unwrap();
        let g = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: lr,
            phase_offset_rad: 0.0,
        };
        let gt = InterferometerGeometry {
            phase_offset_rad: classical_fit_phase_offset(&g, &m, l0).unwrap(),
            ..g
        };
        let resid = |dl: f64| {
            wrap_phase(
                classical_phase_exact(&g, &m, l0 + dl).unwrap()
                    - classical_phase_taylor(&gt, &s, dl).unwrap(),
            )
            .abs()
        };
        let mut dl = 80.0;
        while dl >= 20.0 {
            let r_full = resid(dl);
            let r_half = resid(dl / 2.0);
            assert!(
                r_full >= 8.0 * r_half,
                "residual not O(dl^4): r({dl})={r_full}, r({})={r_half}",
                dl / 2.0
            );
            dl /= 2.0;
        }
    }

    #[test]
    fn taylor_quadratic_term_matches_direct_formula() {
        let g = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: 0.0,
            phase_offset_rad: 0.0,
        };
        let s = DispersionSample {
            lambda_nm: 1560.5,
            n: 1.468,
            dn_dlambda: 0.0,
            d2n_dlambda2: -3.3e-9,
            d3n_dlambda3: 0.0,
        };
        for dl in [-80.0, -30.0, 15.0, 60.0] {
            let direct = 2.0 * std::f64::consts::PI * NM_PER_M * 0.5 * s.d2n_dlambda2 * dl * dl
                / (s.lambda_nm + dl);
            assert_relative_eq!(
                classical_phase_taylor(&g, &s, dl).unwrap(),
                direct,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn stationary_point_length_constant_index() {
        let m = RefractiveIndexModel::Taylor {
            anchor_nm: 1500.0,
            n: 1.468,
            dn_dlambda: 0.0,
            d2n_dlambda2: 0.0,
            d3n_dlambda3: 0.0,
        };
        assert_relative_eq!(
            stationary_phase_point_length(&m, 1500.0, 1.0).unwrap(),
            1.468,
            max_relative = 1e-15
        );
    }

    #[test]
    fn stationary_point_length_with_slope() {
        let m = RefractiveIndexModel::Taylor {
            anchor_nm: 1560.0,
            n: 1.468,
            dn_dlambda: -1.2e-5,
            d2n_dlambda2: 0.0,
            d3n_dlambda3: 0.0,
        };
        assert_relative_eq!(
            stationary_phase_point_length(&m, 1560.0, 1.0).unwrap(),
            1.468 + 1.2e-5 * 1560.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn exact_phase_gradient_vanishes_at_stationary_point() {
        let m = ground_truth_model();
        let l0 = 1560.493;
        let lr = stationary_phase_point_length(&m, l0, 1.0).unwrap();
        let g = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: lr,
            phase_offset_rad: 0.0,
        };
        let h = 0.01;
        let dphi = (classical_phase_exact(&g, &m, l0 + h).unwrap()
            - classical_phase_exact(&g, &m, l0 - h).unwrap())
            / (2.0 * h);
        // Characteristic scale: the gradient one full fringe period away.
        let scale = 2.0 * std::f64::consts::PI / 1.0;
        assert!(dphi.abs() / scale < 1e-6, "dphi/dl = {dphi}");
    }

    #[test]
    fn conjugate_degenerate_point() {
        let lp = 780.246;
        assert_relative_eq!(
            conjugate_wavelength(2.0 * lp, lp).unwrap(),
            2.0 * lp,
            max_relative = 1e-12
        );
    }

    #[test]
    fn conjugate_direct_arithmetic_and_involution() {
        let lp = 780.246;
        let l2 = conjugate_wavelength(1500.0, lp).unwrap();
        assert_relative_eq!(l2, 1.0 / (1.0 / lp - 1.0 / 1500.0), max_relative = 1e-12);
        assert_relative_eq!(1.0 / 1500.0 + 1.0 / l2, 1.0 / lp, max_relative = 1e-12);
        let back = conjugate_wavelength(conjugate_wavelength(1625.0, lp).unwrap(), lp).unwrap();
        assert_relative_eq!(back, 1625.0, max_relative = 1e-12);
        assert!(conjugate_wavelength(700.0, lp).is_err());
    }

    #[test]
    fn noon_phase_at_zero_detuning_is_offset() {
        let g = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: 1.4,
            phase_offset_rad: 1.23,
        };
        let s = ground_truth_model().evaluate(1560.492).unwrap();
        assert_eq!(noon_phase(&g, &s, 0.0, true).unwrap(), 1.23);
    }

    #[test]
    fn noon_third_order_term_is_even_up_to_denominator() {
        let g = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: 0.0,
            phase_offset_rad: 0.0,
        };
        let s = DispersionSample {
            lambda_nm: 1560.492,
            n: 1.468,
            dn_dlambda: 0.0,
            d2n_dlambda2: 0.0,
            d3n_dlambda3: -9.0e-12,
        };
        let half = s.lambda_nm / 2.0;
        let quart = |dl: f64| noon_phase(&g, &s, dl, true).unwrap();
        let plus = quart(70.0);
        let minus = quart(-70.0);
        // Same quartic numerator, denominators (λ*/2 ± 70)².
        assert_relative_eq!(
            plus * (half + 70.0) * (half + 70.0),
            minus * (half - 70.0) * (half - 70.0),
            max_relative = 1e-12
        );
    }

    #[test]
    fn noon_phase_doubles_classical_quadratic_term() {
        let model = ground_truth_model();
        let l_star = 1560.492;
        let s = model.evaluate(l_star).unwrap();
        let g = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: 0.0,
            phase_offset_rad: 0.0,
        };
        let dl = 50.0;
        let noon = noon_phase(&g, &s, dl, false).unwrap();
        let classical_quad = 2.0 * std::f64::consts::PI * NM_PER_M * 0.5 * s.d2n_dlambda2 * dl
            * dl
            / (l_star + dl);
        // Doubled sensitivity, up to the λ*/2 vs λ₀ denominator correction.
        let expected = 2.0 * classical_quad * (l_star + dl) / (l_star / 2.0 + dl) / 2.0;
        assert_relative_eq!(noon, expected, max_relative = 1e-12);
        assert!((noon / classical_quad - 2.0).abs() < 0.15);
    }

    #[test]
    fn noon_phase_equals_sum_of_taylor_phases_at_conjugates() {
        let model = ground_truth_model();
        let l_star = 2.0 * 780.246;
        let s = model.evaluate(l_star).unwrap();
        let g = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: 0.0,
            phase_offset_rad: 0.0,
        };
        // Taylor sample re-anchored at λ* for the per-photon phases.
        let s_star = DispersionSample {
            lambda_nm: l_star,
            ..s
        };
        let mut dl: f64 = -100.0;
        while dl <= 100.0 {
            if dl.abs() > 1e-9 {
                let l2 = l_star + dl;
                let l1 = conjugate_wavelength(l2, l_star / 2.0).unwrap();
                let sum = classical_phase_taylor(&g, &s_star, l1 - l_star).unwrap()
                    + classical_phase_taylor(&g, &s_star, dl).unwrap();
                let noon = noon_phase(&g, &s_star, dl, true).unwrap();
                assert!(
                    (sum - noon).abs() < 1e-3,
                    "dl={dl}: sum={sum}, noon={noon}"
                );
            }
            dl += 10.0;
        }
    }

    #[test]
    fn dispersion_round_trips() {
        assert_eq!(dispersion_coefficient(0.0, 1550.0), 0.0);
        let d2n = dispersion_to_d2n(17.035, 1560.493);
        assert_relative_eq!(
            dispersion_coefficient(d2n, 1560.493),
            17.035,
            max_relative = 1e-12
        );
        let d2n2 = dispersion_to_d2n(17.047, 1560.5);
        assert_relative_eq!(
            dispersion_coefficient(d2n2, 1560.5),
            17.047,
            max_relative = 1e-9
        );
    }

    #[test]
    fn sellmeier_validation_rejects_bad_coefficients() {
        let m = RefractiveIndexModel::Sellmeier {
            b: [0.7, -0.1, 0.9],
            c_um2: [0.004, 0.013, 97.9],
            delta_n: 0.0,
        };
        assert!(m.validate().is_err());
        let m = RefractiveIndexModel::Sellmeier {
            b: [0.7, 0.4, 0.9],
            c_um2: [0.004, -0.013, 97.9],
            delta_n: 0.0,
        };
        assert!(m.validate().is_err());
        // Resonance inside the operating window.
        let m = RefractiveIndexModel::Sellmeier {
            b: [0.7, 0.4, 0.9],
            c_um2: [0.004, 2.25, 97.9],
            delta_n: 0.0,
        };
        assert!(m.validate().is_err());
    }
}
