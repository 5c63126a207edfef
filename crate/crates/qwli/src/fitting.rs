//! Weighted nonlinear least-squares recovery of dispersion parameters from
//! normalized spectrograms: the 3-parameter classical model, the degraded
//! second-order-only classical model, and the 1-parameter two-photon model,
//! with covariance-based uncertainties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interferogram::NormalizedSpectrogram;
use crate::phase::{dispersion_coefficient, C_M_PER_S, NM_PER_M};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("need at least {needed} valid bins, found {found}")]
    NotEnoughBins { needed: usize, found: usize },
    #[error("normal equations are rank-deficient (damping exhausted)")]
    RankDeficient,
    #[error("cannot derive an initial guess: fewer than 2 fringe crossings in the data")]
    NoFringes,
    #[error("no fit candidate matched the observed fringe count within 10%")]
    FringeCountMismatch,
    #[error("calibration wavelengths differ: {0} nm vs {1} nm")]
    WavelengthMismatch(f64, f64),
    #[error("invalid fit input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 200,
            grad_tol: 1e-10,
            step_tol: 1e-12,
        }
    }
}

/// Raw solver outcome in parameter space.
#[derive(Debug, Clone)]
pub struct SolverOutcome {
    pub params: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub n_residuals: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Gauss–Newton (Levenberg–Marquardt) minimization of ‖r(p)‖².
///
/// Internally the parameters are column-scaled by the magnitudes of the
/// initial guess so that tolerances are meaningful across wildly different
/// parameter units (nm vs nm⁻²). A pure Gauss–Newton step is attempted
/// first; damping μ·diag(JᵀJ) is introduced only when a step is rejected,
/// so linear problems converge in one accepted step. The cost is monotone
/// non-increasing across accepted steps. The covariance is
/// (χ²/dof)·(JᵀJ)⁻¹ at the solution.
pub fn solve_least_squares<R, J>(
    residual_fn: R,
    jacobian_fn: J,
    init: &DVector<f64>,
    config: &SolverConfig,
) -> Result<SolverOutcome, FitError>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let p_dim = init.len();
    let scale = DVector::from_iterator(
        p_dim,
        init.iter().map(|&v| if v.abs() > 1e-300 { v.abs() } else { 1.0 }),
    );
    let unscale = |x: &DVector<f64>| x.component_mul(&scale);

    let mut x = init.component_div(&scale);
    let mut r = residual_fn(&unscale(&x));
    let n_res = r.len();
    if n_res < p_dim {
        return Err(FitError::InvalidInput(format!(
            "residual dimension {n_res} below parameter dimension {p_dim}"
        )));
    }
    let mut cost = r.norm_squared();
    let mut mu = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut jtj_at_solution: Option<DMatrix<f64>> = None;

    while iterations < config.max_iter {
        iterations += 1;
        let mut j = jacobian_fn(&unscale(&x));
        if j.nrows() != n_res || j.ncols() != p_dim {
            return Err(FitError::InvalidInput("jacobian shape mismatch".into()));
        }
        for c in 0..p_dim {
            for rr in 0..n_res {
                j[(rr, c)] *= scale[c];
            }
        }
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() < config.grad_tol * (1.0 + cost) {
            converged = true;
            jtj_at_solution = Some(jtj);
            break;
        }
        // Inner loop: raise damping until a step is accepted.
        let mut accepted = false;
        loop {
            let mut a = jtj.clone();
            for d in 0..p_dim {
                a[(d, d)] += mu * jtj[(d, d)].max(1e-300);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => Some(ch.solve(&(-&g))),
                None => a.lu().solve(&(-&g)),
            };
            if let Some(delta) = step {
                let x_trial = &x + &delta;
                let r_trial = residual_fn(&unscale(&x_trial));
                let cost_trial = r_trial.norm_squared();
                if cost_trial.is_finite() && cost_trial <= cost {
                    let small_step =
                        delta.norm() < config.step_tol * (x.norm() + config.step_tol);
                    let no_progress = cost - cost_trial
                        <= f64::EPSILON * cost.max(1e-300) && mu > 0.0;
                    x = x_trial;
                    r = r_trial;
                    cost = cost_trial;
                    mu = if mu > 0.0 { (mu / 10.0).max(0.0) } else { 0.0 };
                    if mu < 1e-12 {
                        mu = 0.0;
                    }
                    accepted = true;
                    if small_step || no_progress {
                        converged = true;
                        jtj_at_solution = Some(jtj.clone());
                    }
                    break;
                }
            }
            mu = if mu == 0.0 { 1e-4 } else { mu * 10.0 };
            if mu > 1e12 {
                break;
            }
        }
        if converged {
            break;
        }
        if !accepted {
            // Damping exhausted without progress: either we are at a
            // (possibly rank-deficient) stationary point or truly stuck.
            let g_small = g.amax() < 1e-6 * (1.0 + cost);
            if g_small {
                converged = true;
                jtj_at_solution = Some(jtj);
                break;
            }
            return Err(FitError::RankDeficient);
        }
    }

    let jtj = match jtj_at_solution {
        Some(m) => m,
        None => {
            // Recompute at the final point for covariance purposes.
            let mut j = jacobian_fn(&unscale(&x));
            for c in 0..p_dim {
                for rr in 0..n_res {
                    j[(rr, c)] *= scale[c];
                }
            }
            j.transpose() * &j
        }
    };
    let dof = (n_res - p_dim).max(1) as f64;
    let variance_factor = cost / dof;
    let cov_scaled = jtj
        .clone()
        .try_inverse()
        .ok_or(FitError::RankDeficient)?
        * variance_factor;
    let mut covariance = cov_scaled;
    for rr in 0..p_dim {
        for cc in 0..p_dim {
            covariance[(rr, cc)] *= scale[rr] * scale[cc];
        }
    }
    Ok(SolverOutcome {
        params: unscale(&x),
        covariance,
        chi2: cost,
        n_residuals: n_res,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalFitParams {
    pub lambda0_nm: f64,
    pub d2n_dlambda2: f64,
    pub d3n_dlambda3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantumFitParams {
    pub d2n_dlambda2: f64,
}

/// Options shared by all fits. `fit_phase_offset` adds the constant offset
/// phase as a nuisance parameter (off by default: the interferometer is
/// actively stabilized, so φ_off is a known input). `weighted` uses the
/// per-bin Poisson standard errors (default); unweighted mode is provided
/// for robustness studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub weighted: bool,
    pub fit_phase_offset: bool,
    pub solver: SolverConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            weighted: true,
            fit_phase_offset: false,
            solver: SolverConfig::default(),
        }
    }
}

/// Recovered parameters, uncertainties, and diagnostics of one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    /// Named fitted parameters, in fit order.
    pub params: std::collections::BTreeMap<String, f64>,
    /// 1σ uncertainties, same keys as `params`.
    pub sigma: std::collections::BTreeMap<String, f64>,
    pub d_ps_nm_km: f64,
    pub d_sigma: f64,
    pub residual_rms: f64,
    pub chi2_per_dof: f64,
    pub converged: bool,
    pub iterations: usize,
    /// True when the fitted stationary point lies outside the data span.
    #[serde(skip)]
    pub spp_outside_span: bool,
}

impl FitResult {
    /// Serialization with the documented report keys.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "params": self.params,
            "sigma": self.sigma,
            "D_ps_nm_km": self.d_ps_nm_km,
            "D_sigma": self.d_sigma,
            "residual_rms": self.residual_rms,
            "chi2_per_dof": self.chi2_per_dof,
            "converged": self.converged,
            "iterations": self.iterations,
        })
    }
}

/// Count sign changes of (value − mean) across valid bins: each crossing is
/// half a fringe. Used both as a data-derived initialization and as the
/// aliasing tie-break.
pub fn count_fringe_crossings(data: &NormalizedSpectrogram) -> usize {
    let vals: Vec<f64> = data
        .value
        .iter()
        .zip(&data.valid)
        .filter(|(_, ok)| **ok)
        .map(|(v, _)| *v)
        .collect();
    crossings_of(&vals)
}

fn crossings_of(vals: &[f64]) -> usize {
    if vals.len() < 2 {
        return 0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let mut count = 0;
    let mut prev = vals[0] - mean;
    for v in &vals[1..] {
        let c = v - mean;
        if prev != 0.0 && c != 0.0 && (prev < 0.0) != (c < 0.0) {
            count += 1;
        }
        if c != 0.0 {
            prev = c;
        }
    }
    count
}

fn valid_data(
    data: &NormalizedSpectrogram,
    min_bins: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), FitError> {
    let mut lambda = Vec::new();
    let mut value = Vec::new();
    let mut sigma = Vec::new();
    for i in 0..data.value.len() {
        if data.valid[i] {
            lambda.push(data.lambda_nm[i]);
            value.push(data.value[i]);
            sigma.push(data.sigma[i]);
        }
    }
    if lambda.len() < min_bins {
        return Err(FitError::NotEnoughBins {
            needed: min_bins,
            found: lambda.len(),
        });
    }
    Ok((lambda, value, sigma))
}

/// Midpoints of the widest gap between consecutive fringe crossings: the
/// fringe period diverges at the stationary point, so the widest gap
/// brackets λ₀.
fn crossing_positions(lambda: &[f64], value: &[f64]) -> Vec<f64> {
    let mean = value.iter().sum::<f64>() / value.len() as f64;
    let mut pos = Vec::new();
    for i in 1..value.len() {
        let a = value[i - 1] - mean;
        let b = value[i] - mean;
        if a != 0.0 && b != 0.0 && (a < 0.0) != (b < 0.0) {
            // Linear interpolation of the crossing wavelength.
            let t = a / (a - b);
            pos.push(lambda[i - 1] + t * (lambda[i] - lambda[i - 1]));
        }
    }
    pos
}

/// Deterministic, data-only initialization of the classical fit: λ₀ from
/// the widest fringe gap, |d²n/dλ²| from the total crossing count, d³n = 0.
pub fn auto_init_classical(
    data: &NormalizedSpectrogram,
    sample_length_m: f64,
) -> Result<ClassicalFitParams, FitError> {
    let (lambda, value, _) = valid_data(data, 4)?;
    let pos = crossing_positions(&lambda, &value);
    if pos.len() < 2 {
        return Err(FitError::NoFringes);
    }
    let mut best_gap = 0.0;
    let mut lambda0 = 0.5 * (lambda[0] + lambda[lambda.len() - 1]);
    for w in pos.windows(2) {
        let gap = w[1] - w[0];
        if gap > best_gap {
            best_gap = gap;
            lambda0 = 0.5 * (w[0] + w[1]);
        }
    }
    let dl_left = lambda0 - lambda[0];
    let dl_right = lambda[lambda.len() - 1] - lambda0;
    let ls_nm = sample_length_m * NM_PER_M;
    // Each crossing is half a fringe, i.e. π of phase. Equating the edge
    // phases to the per-side crossing counts gives two linear equations in
    // (d²n, d³n):
    //   ½a₂Δλ_R² + (a₃/6)Δλ_R³ = −z_R·λ_R/(2L_s)
    //   ½a₂Δλ_L² − (a₃/6)Δλ_L³ = −z_L·λ_L/(2L_s)
    // (negative because normal dispersion has a₂ < 0).
    let z_left = pos.iter().filter(|&&p| p < lambda0).count() as f64;
    let z_right = pos.len() as f64 - z_left;
    let b_r = -z_right * lambda[lambda.len() - 1] / (2.0 * ls_nm);
    let b_l = -z_left * lambda[0] / (2.0 * ls_nm);
    let det = dl_right * dl_right * dl_left * dl_left * (dl_left + dl_right);
    let (a2, a3) = if det > 0.0 && z_left >= 1.0 && z_right >= 1.0 {
        let x = (b_r * dl_left.powi(3) + dl_right.powi(3) * b_l) / det;
        let y = (b_r * dl_left * dl_left - dl_right * dl_right * b_l) / det;
        (2.0 * x, 6.0 * y)
    } else {
        // One-sided data: fall back to a symmetric quadratic estimate.
        let z = pos.len() as f64;
        let a2_mag =
            z * lambda0 / (ls_nm * (dl_left * dl_left + dl_right * dl_right));
        (-a2_mag, 0.0)
    };
    Ok(ClassicalFitParams {
        lambda0_nm: lambda0,
        d2n_dlambda2: a2,
        d3n_dlambda3: a3,
    })
}

/// Data-only initialization of the quantum fit: |d²n/dλ²| from the fringe
/// crossing count around the fixed λ*.
pub fn auto_init_quantum(
    data: &NormalizedSpectrogram,
    sample_length_m: f64,
    lambda_star_nm: f64,
) -> Result<QuantumFitParams, FitError> {
    let (lambda, value, _) = valid_data(data, 4)?;
    let pos = crossing_positions(&lambda, &value);
    if pos.len() < 2 {
        return Err(FitError::NoFringes);
    }
    let z = pos.len() as f64;
    let dl_left = lambda_star_nm - lambda[0];
    let dl_right = lambda[lambda.len() - 1] - lambda_star_nm;
    let ls_nm = sample_length_m * NM_PER_M;
    // z·π ≈ π·L_s·|a2|(Δλ_L² + Δλ_R²)/(λ*/2).
    let a2_mag =
        z * (lambda_star_nm / 2.0) / (ls_nm * (dl_left * dl_left + dl_right * dl_right));
    Ok(QuantumFitParams {
        d2n_dlambda2: -a2_mag,
    })
}

/// Fixed context of a classical fit (everything treated as known a priori).
#[derive(Debug, Clone, Copy)]
struct ClassicalContext {
    ls_nm: f64,
    phase_offset_rad: f64,
    visibility: f64,
    third_order_free: bool,
    fit_phase_offset: bool,
}

/// Classical Taylor phase with the denominator rewritten through
/// λ₀ + Δλ = λ: φ = 2πL_s[½a₂(λ−λ₀)²/λ + (a₃/6)(λ−λ₀)³/λ] + φ_off.
fn classical_phase_fit(ctx: &ClassicalContext, p: &[f64], lambda: f64) -> f64 {
    let (l0, a2) = (p[0], p[1]);
    let a3 = if ctx.third_order_free { p[2] } else { 0.0 };
    let po = if ctx.fit_phase_offset {
        p[if ctx.third_order_free { 3 } else { 2 }]
    } else {
        ctx.phase_offset_rad
    };
    let d = lambda - l0;
    2.0 * std::f64::consts::PI * ctx.ls_nm * (0.5 * a2 * d * d / lambda
        + a3 / 6.0 * d * d * d / lambda)
        + po
}

fn classical_model_and_grad(
    ctx: &ClassicalContext,
    p: &[f64],
    lambda: f64,
) -> (f64, Vec<f64>) {
    let (l0, a2) = (p[0], p[1]);
    let a3 = if ctx.third_order_free { p[2] } else { 0.0 };
    let phi = classical_phase_fit(ctx, p, lambda);
    let value = 0.5 * (1.0 + ctx.visibility * phi.cos());
    let dv_dphi = -0.5 * ctx.visibility * phi.sin();
    let d = lambda - l0;
    let two_pi_ls = 2.0 * std::f64::consts::PI * ctx.ls_nm;
    let dphi_dl0 = two_pi_ls * (-a2 * d / lambda - 0.5 * a3 * d * d / lambda);
    let dphi_da2 = two_pi_ls * 0.5 * d * d / lambda;
    let dphi_da3 = two_pi_ls / 6.0 * d * d * d / lambda;
    let mut grad = vec![dv_dphi * dphi_dl0, dv_dphi * dphi_da2];
    if ctx.third_order_free {
        grad.push(dv_dphi * dphi_da3);
    }
    if ctx.fit_phase_offset {
        grad.push(dv_dphi);
    }
    (value, grad)
}

/// Fixed context of a quantum fit.
#[derive(Debug, Clone, Copy)]
struct QuantumContext {
    ls_nm: f64,
    lambda_star_nm: f64,
    phase_offset_rad: f64,
    visibility: f64,
    /// d³n/dλ³ used for the (known, fixed) residual fourth-power term.
    fixed_d3n: f64,
    include_third_order: bool,
    fit_phase_offset: bool,
}

/// Quantum fitting phase: φ = a₂·πL_sΔλ²/(λ*/2+Δλ) [+ fixed quartic] + φ_off.
fn quantum_phase_fit(ctx: &QuantumContext, p: &[f64], lambda: f64) -> f64 {
    let a2 = p[0];
    let po = if ctx.fit_phase_offset {
        p[1]
    } else {
        ctx.phase_offset_rad
    };
    let d = lambda - ctx.lambda_star_nm;
    let denom = ctx.lambda_star_nm / 2.0 + d;
    let base = std::f64::consts::PI * ctx.ls_nm * d * d / denom;
    let mut phi = a2 * base + po;
    if ctx.include_third_order {
        phi += 2.0 * std::f64::consts::PI * ctx.ls_nm * ctx.fixed_d3n / 6.0 * d * d * d * d
            / (denom * denom);
    }
    phi
}

fn quantum_model_and_grad(ctx: &QuantumContext, p: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let d = lambda - ctx.lambda_star_nm;
    let denom = ctx.lambda_star_nm / 2.0 + d;
    let base = std::f64::consts::PI * ctx.ls_nm * d * d / denom;
    let phi = quantum_phase_fit(ctx, p, lambda);
    let value = 0.5 * (1.0 + ctx.visibility * phi.cos());
    let dv_dphi = -0.5 * ctx.visibility * phi.sin();
    let mut grad = vec![dv_dphi * base];
    if ctx.fit_phase_offset {
        grad.push(dv_dphi);
    }
    (value, grad)
}

struct WeightedData {
    lambda: Vec<f64>,
    value: Vec<f64>,
    weight: Vec<f64>,
}

fn weighted_data(
    data: &NormalizedSpectrogram,
    weighted: bool,
    min_bins: usize,
) -> Result<WeightedData, FitError> {
    let (lambda, value, sigma) = valid_data(data, min_bins)?;
    let weight = if weighted {
        sigma
            .iter()
            .map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 })
            .collect()
    } else {
        vec![1.0; sigma.len()]
    };
    Ok(WeightedData {
        lambda,
        value,
        weight,
    })
}

fn run_model_fit<M>(
    wd: &WeightedData,
    model: M,
    init: &[f64],
    config: &SolverConfig,
) -> Result<SolverOutcome, FitError>
where
    M: Fn(&[f64], f64) -> (f64, Vec<f64>),
{
    let n = wd.lambda.len();
    let residual = |p: &DVector<f64>| {
        let ps: Vec<f64> = p.iter().copied().collect();
        DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let (m, _) = model(&ps, wd.lambda[i]);
                (m - wd.value[i]) * wd.weight[i]
            }),
        )
    };
    let jacobian = |p: &DVector<f64>| {
        let ps: Vec<f64> = p.iter().copied().collect();
        let mut j = DMatrix::zeros(n, p.len());
        for i in 0..n {
            let (_, g) = model(&ps, wd.lambda[i]);
            for (c, gc) in g.iter().enumerate() {
                j[(i, c)] = gc * wd.weight[i];
            }
        }
        j
    };
    solve_least_squares(residual, jacobian, &DVector::from_row_slice(init), config)
}

/// Deterministic multi-start ladder on the curvature parameter, used by all
/// fits to escape period aliasing of the cosine model.
const START_LADDER: [f64; 5] = [1.0, 0.5, 2.0, 1.0 / 3.0, 3.0];

/// Best-fit offset phase given the offset-free phase shape ψ_i: the model
/// ½[1 + V·cos(ψ + φ_off)] is linear in (cos φ_off, sin φ_off), so the
/// optimum is closed-form. Returns `fallback` when the normal equations are
/// degenerate (e.g. a constant shape).
fn best_phase_offset(wd: &WeightedData, psis: &[f64], fallback: f64) -> f64 {
    let (mut saa, mut sab, mut sbb, mut ra, mut rb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..psis.len() {
        let w2 = wd.weight[i] * wd.weight[i];
        let (s, c) = psis[i].sin_cos();
        let y = wd.value[i] - 0.5;
        saa += w2 * c * c;
        sab += w2 * c * s;
        sbb += w2 * s * s;
        ra += w2 * y * c;
        rb += w2 * y * s;
    }
    let det = saa * sbb - sab * sab;
    if det.abs() < 1e-30 {
        return fallback;
    }
    // Model y ≈ a·cosψ + b·sinψ with a = ½V·cos φ_off, b = −½V·sin φ_off.
    let a = (sbb * ra - sab * rb) / det;
    let b = (saa * rb - sab * ra) / det;
    if a == 0.0 && b == 0.0 {
        return fallback;
    }
    (-b).atan2(a)
}

#[allow(clippy::too_many_arguments)]
fn finalize_classical(
    wd: &WeightedData,
    ctx: &ClassicalContext,
    outcome: SolverOutcome,
    model_name: &str,
) -> FitResult {
    let p: Vec<f64> = outcome.params.iter().copied().collect();
    let (l0, a2) = (p[0], p[1]);
    let k = 1e15 / C_M_PER_S; // D = −λ₀·a₂·k
    let d = dispersion_coefficient(a2, l0);
    // Propagate (λ₀, a₂) covariance into D.
    let g = [-a2 * k, -l0 * k];
    let c = &outcome.covariance;
    let d_var = g[0] * g[0] * c[(0, 0)] + g[1] * g[1] * c[(1, 1)]
        + 2.0 * g[0] * g[1] * c[(0, 1)];
    let names: Vec<&str> = {
        let mut v = vec!["lambda0_nm", "d2n_dlambda2"];
        if ctx.third_order_free {
            v.push("d3n_dlambda3");
        }
        if ctx.fit_phase_offset {
            v.push("phase_offset_rad");
        }
        v
    };
    let mut params = std::collections::BTreeMap::new();
    let mut sigma = std::collections::BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        params.insert(name.to_string(), p[i]);
        sigma.insert(name.to_string(), outcome.covariance[(i, i)].max(0.0).sqrt());
    }
    let n = wd.lambda.len();
    let mut rss = 0.0;
    for i in 0..n {
        let (m, _) = classical_model_and_grad(ctx, &p, wd.lambda[i]);
        let r = m - wd.value[i];
        rss += r * r;
    }
    let dof = (outcome.n_residuals - p.len()).max(1) as f64;
    FitResult {
        model: model_name.to_string(),
        params,
        sigma,
        d_ps_nm_km: d,
        d_sigma: d_var.max(0.0).sqrt(),
        residual_rms: (rss / n as f64).sqrt(),
        chi2_per_dof: outcome.chi2 / dof,
        converged: outcome.converged,
        iterations: outcome.iterations,
        spp_outside_span: l0 < wd.lambda[0] || l0 > wd.lambda[n - 1],
    }
}

fn fit_classical_impl(
    data: &NormalizedSpectrogram,
    sample_length_m: f64,
    phase_offset_rad: f64,
    visibility: f64,
    init: Option<ClassicalFitParams>,
    options: &FitOptions,
    third_order_free: bool,
) -> Result<FitResult, FitError> {
    if !(sample_length_m > 0.0) {
        return Err(FitError::InvalidInput("sample length must be positive".into()));
    }
    let wd = weighted_data(data, options.weighted, 50)?;
    let ctx = ClassicalContext {
        ls_nm: sample_length_m * NM_PER_M,
        phase_offset_rad,
        visibility,
        third_order_free,
        fit_phase_offset: options.fit_phase_offset,
    };
    let base = match init {
        Some(p) => p,
        None => auto_init_classical(data, sample_length_m)?,
    };
    let data_crossings = count_fringe_crossings(data) as f64;
    // The cost surface is strongly multimodal in λ₀ (fringe aliasing), so
    // each start gets a coarse λ₀ line search before the solver runs. The
    // fringe period diverges at the stationary point, making the basin
    // several nm wide — a 0.25 nm scan step is ample.
    let cost_at = |p: &[f64]| -> f64 {
        let mut c = 0.0;
        for i in 0..wd.lambda.len() {
            let (m, _) = classical_model_and_grad(&ctx, p, wd.lambda[i]);
            let r = (m - wd.value[i]) * wd.weight[i];
            c += r * r;
        }
        c
    };
    let mut lambda0_candidates = vec![base.lambda0_nm];
    if init.is_some() {
        if let Ok(auto) = auto_init_classical(data, sample_length_m) {
            if (auto.lambda0_nm - base.lambda0_nm).abs() > 1e-9 {
                lambda0_candidates.push(auto.lambda0_nm);
            }
        }
    }
    let mut best: Option<(f64, SolverOutcome)> = None;
    let mut best_any: Option<(f64, SolverOutcome)> = None;
    // A candidate at or below the shot-noise floor cannot be beaten by an
    // aliased solution; reaching it ends the multi-start search.
    let noise_floor = 3.0 * wd.lambda.len() as f64;
    // One multi-start attempt: coarse (λ₀, d²n) grid refinement around the
    // given start, then a solver polish. The cosine cost surface aliases
    // both in the stationary point position and in the fringe density, and
    // the solver's pull-in range in the curvature is only ~1%. When the
    // offset phase is free its initial guess may be wrong by an arbitrary
    // amount mod 2π, so each trial point gets the closed-form optimal
    // offset instead of the guess. Returns true when the shot-noise floor
    // has been reached.
    let default_a3 = if base.d3n_dlambda3 != 0.0 {
        base.d3n_dlambda3
    } else {
        // Zero exactly would freeze the column scale; seed with a
        // curvature-consistent small cubic term.
        base.d2n_dlambda2 * 1e-3
    };
    let mut attempt = |factor: f64,
                       l0_cand: f64,
                       a3_seed: f64,
                       scan_half: f64,
                       scan_step: f64|
     -> bool {
        let mut p0 = vec![l0_cand, base.d2n_dlambda2 * factor];
        if third_order_free {
            p0.push(a3_seed);
        }
        if options.fit_phase_offset {
            p0.push(if phase_offset_rad != 0.0 {
                phase_offset_rad
            } else {
                0.1
            });
        }
        let po_index = p0.len() - 1;
        let fallback_po = p0[po_index];
        let refine_offset = |trial: &mut Vec<f64>| {
            if options.fit_phase_offset {
                trial[po_index] = 0.0;
                let psis: Vec<f64> = wd
                    .lambda
                    .iter()
                    .map(|&l| classical_phase_fit(&ctx, trial, l))
                    .collect();
                trial[po_index] = best_phase_offset(&wd, &psis, fallback_po);
            }
        };
        let mut best_start = p0.clone();
        let mut best_cost = f64::INFINITY;
        let mut off = -scan_half;
        while off <= scan_half + 1e-9 {
            let mut rel = -0.10f64;
            while rel <= 0.10 + 1e-12 {
                let mut trial = p0.clone();
                trial[0] = p0[0] + off;
                trial[1] = p0[1] * (1.0 + rel);
                refine_offset(&mut trial);
                let c = cost_at(&trial);
                if c < best_cost {
                    best_cost = c;
                    best_start = trial;
                }
                rel += 0.01;
            }
            off += scan_step;
        }
        p0 = best_start;
        let model = |p: &[f64], l: f64| classical_model_and_grad(&ctx, p, l);
        let outcome = match run_model_fit(&wd, model, &p0, &options.solver) {
            Ok(o) => o,
            Err(_) => return false,
        };
        if !outcome.converged {
            return false;
        }
        if best_any.as_ref().map_or(true, |(c, _)| outcome.chi2 < *c) {
            best_any = Some((outcome.chi2, outcome.clone()));
        }
        // Aliasing tie-break: the fitted model must reproduce the data's
        // fringe count within 10%.
        let pfit: Vec<f64> = outcome.params.iter().copied().collect();
        let fit_vals: Vec<f64> = wd
            .lambda
            .iter()
            .map(|&l| classical_model_and_grad(&ctx, &pfit, l).0)
            .collect();
        let fit_crossings = crossings_of(&fit_vals) as f64;
        if data_crossings > 0.0
            && (fit_crossings - data_crossings).abs() > 0.1 * data_crossings
        {
            return false;
        }
        if best.as_ref().map_or(true, |(c, _)| outcome.chi2 < *c) {
            best = Some((outcome.chi2, outcome));
        }
        best.as_ref().is_some_and(|(c, _)| *c <= noise_floor)
    };
    let mut floor_reached = false;
    'ladder: for factor in START_LADDER {
        for &l0_cand in &lambda0_candidates {
            if attempt(factor, l0_cand, default_a3, 5.0, 0.25) {
                floor_reached = true;
                break 'ladder;
            }
        }
    }
    // Rescue pass: the data-derived (λ₀, d³n) guesses can be far off when a
    // shifted offset phase splits the central fringe gap and skews the
    // left/right crossing asymmetry. Sweep the stationary point over the
    // whole data span, re-seeding the cubic term since its pull-in range is
    // narrower than the guess error.
    if !floor_reached {
        let lo = wd.lambda[0];
        let hi = wd.lambda[wd.lambda.len() - 1];
        let center = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let a3_mag = default_a3.abs();
        let a3_seeds: Vec<f64> = if third_order_free {
            [-1.0, 1.0, -0.3, 0.3, -3.0, 3.0]
                .iter()
                .map(|m| m * a3_mag)
                .collect()
        } else {
            vec![default_a3]
        };
        'rescue: for factor in [1.0, 0.5, 2.0] {
            for &a3 in &a3_seeds {
                if attempt(factor, center, a3, half, 0.5) {
                    break 'rescue;
                }
            }
        }
    }
    let model_name = if third_order_free {
        "classical"
    } else {
        "classical_2nd_order"
    };
    match best {
        Some((_, outcome)) => Ok(finalize_classical(&wd, &ctx, outcome, model_name)),
        None => match best_any {
            Some((_, outcome)) => {
                let mut res = finalize_classical(&wd, &ctx, outcome, model_name);
                res.converged = false;
                Ok(res)
            }
            None => Err(FitError::FringeCountMismatch),
        },
    }
}

/// Three-parameter classical fit (λ₀, d²n/dλ², d³n/dλ³) of the normalized
/// fringe pattern ½[1 + V·cos φ]. φ_off, V, and L_s are known inputs.
pub fn fit_classical(
    data: &NormalizedSpectrogram,
    sample_length_m: f64,
    phase_offset_rad: f64,
    visibility: f64,
    init: Option<ClassicalFitParams>,
    options: &FitOptions,
) -> Result<FitResult, FitError> {
    fit_classical_impl(
        data,
        sample_length_m,
        phase_offset_rad,
        visibility,
        init,
        options,
        true,
    )
}

/// Degraded classical fit with d³n/dλ³ frozen at zero (two free
/// parameters); used to study the truncation bias.
pub fn fit_classical_second_order(
    data: &NormalizedSpectrogram,
    sample_length_m: f64,
    phase_offset_rad: f64,
    visibility: f64,
    init: Option<ClassicalFitParams>,
    options: &FitOptions,
) -> Result<FitResult, FitError> {
    fit_classical_impl(
        data,
        sample_length_m,
        phase_offset_rad,
        visibility,
        init,
        options,
        false,
    )
}

/// One-parameter two-photon fit: d²n/dλ²|λ* is the only free parameter;
/// λ* = 2λ_p, φ_off, V, and L_s are fixed. `fixed_d3n` supplies the known
/// third-order coefficient for the residual fourth-power term of the phase
/// model; pass `include_third_order = false` to reproduce the strictly
/// second-order fitting function.
#[allow(clippy::too_many_arguments)]
pub fn fit_quantum(
    data: &NormalizedSpectrogram,
    sample_length_m: f64,
    pump_nm: f64,
    phase_offset_rad: f64,
    visibility: f64,
    fixed_d3n: f64,
    include_third_order: bool,
    init: Option<QuantumFitParams>,
    options: &FitOptions,
) -> Result<FitResult, FitError> {
    if !(sample_length_m > 0.0) {
        return Err(FitError::InvalidInput("sample length must be positive".into()));
    }
    let lambda_star = 2.0 * pump_nm;
    let wd = weighted_data(data, options.weighted, 50)?;
    if lambda_star < wd.lambda[0] || lambda_star > wd.lambda[wd.lambda.len() - 1] {
        return Err(FitError::InvalidInput(format!(
            "lambda* = {lambda_star} nm outside the data span"
        )));
    }
    let ctx = QuantumContext {
        ls_nm: sample_length_m * NM_PER_M,
        lambda_star_nm: lambda_star,
        phase_offset_rad,
        visibility,
        fixed_d3n,
        include_third_order,
        fit_phase_offset: options.fit_phase_offset,
    };
    let base = match init {
        Some(p) => p,
        None => auto_init_quantum(data, sample_length_m, lambda_star)?,
    };
    let data_crossings = count_fringe_crossings(data) as f64;
    let cost_at = |p: &[f64]| -> f64 {
        let mut c = 0.0;
        for i in 0..wd.lambda.len() {
            let (m, _) = quantum_model_and_grad(&ctx, p, wd.lambda[i]);
            let r = (m - wd.value[i]) * wd.weight[i];
            c += r * r;
        }
        c
    };
    let mut best: Option<(f64, SolverOutcome)> = None;
    let mut best_any: Option<(f64, SolverOutcome)> = None;
    for factor in START_LADDER {
        let mut p0 = vec![base.d2n_dlambda2 * factor];
        if options.fit_phase_offset {
            p0.push(if phase_offset_rad != 0.0 {
                phase_offset_rad
            } else {
                0.1
            });
        }
        // Dense 1-D curvature scan: the doubled fringe density halves the
        // solver's pull-in range, so refine to ~0.25% before polishing. A
        // free offset phase may be wrong by an arbitrary amount mod 2π, so
        // each trial point gets the closed-form optimal offset instead of
        // the guess.
        let refine_offset = |trial: &mut Vec<f64>| {
            if options.fit_phase_offset {
                trial[1] = 0.0;
                let psis: Vec<f64> = wd
                    .lambda
                    .iter()
                    .map(|&l| quantum_phase_fit(&ctx, trial, l))
                    .collect();
                trial[1] = best_phase_offset(&wd, &psis, p0[1]);
            }
        };
        let mut best_start = p0.clone();
        let mut best_cost = f64::INFINITY;
        let mut rel = -0.15f64;
        while rel <= 0.15 + 1e-12 {
            let mut trial = p0.clone();
            trial[0] = p0[0] * (1.0 + rel);
            refine_offset(&mut trial);
            let c = cost_at(&trial);
            if c < best_cost {
                best_cost = c;
                best_start = trial;
            }
            rel += 0.0025;
        }
        p0 = best_start;
        let model = |p: &[f64], l: f64| quantum_model_and_grad(&ctx, p, l);
        let outcome = match run_model_fit(&wd, model, &p0, &options.solver) {
            Ok(o) => o,
            Err(_) => continue,
        };
        if !outcome.converged {
            continue;
        }
        if best_any.as_ref().map_or(true, |(c, _)| outcome.chi2 < *c) {
            best_any = Some((outcome.chi2, outcome.clone()));
        }
        let pfit: Vec<f64> = outcome.params.iter().copied().collect();
        let fit_vals: Vec<f64> = wd
            .lambda
            .iter()
            .map(|&l| quantum_model_and_grad(&ctx, &pfit, l).0)
            .collect();
        let fit_crossings = crossings_of(&fit_vals) as f64;
        if data_crossings > 0.0
            && (fit_crossings - data_crossings).abs() > 0.1 * data_crossings
        {
            continue;
        }
        if best.as_ref().map_or(true, |(c, _)| outcome.chi2 < *c) {
            best = Some((outcome.chi2, outcome));
        }
        if let Some((c, _)) = &best {
            if *c <= 3.0 * wd.lambda.len() as f64 {
                break;
            }
        }
    }
    let finalize = |outcome: SolverOutcome, converged_override: Option<bool>| {
        let p: Vec<f64> = outcome.params.iter().copied().collect();
        let a2 = p[0];
        let d = dispersion_coefficient(a2, lambda_star);
        let dd_da2 = -lambda_star * 1e15 / C_M_PER_S;
        let d_sigma = (dd_da2 * dd_da2 * outcome.covariance[(0, 0)]).max(0.0).sqrt();
        let mut params = std::collections::BTreeMap::new();
        let mut sigma = std::collections::BTreeMap::new();
        params.insert("d2n_dlambda2".to_string(), a2);
        sigma.insert(
            "d2n_dlambda2".to_string(),
            outcome.covariance[(0, 0)].max(0.0).sqrt(),
        );
        if options.fit_phase_offset {
            params.insert("phase_offset_rad".to_string(), p[1]);
            sigma.insert(
                "phase_offset_rad".to_string(),
                outcome.covariance[(1, 1)].max(0.0).sqrt(),
            );
        }
        let mut rss = 0.0;
        for i in 0..wd.lambda.len() {
            let (m, _) = quantum_model_and_grad(&ctx, &p, wd.lambda[i]);
            let r = m - wd.value[i];
            rss += r * r;
        }
        let dof = (outcome.n_residuals - p.len()).max(1) as f64;
        FitResult {
            model: "quantum".to_string(),
            params,
            sigma,
            d_ps_nm_km: d,
            d_sigma,
            residual_rms: (rss / wd.lambda.len() as f64).sqrt(),
            chi2_per_dof: outcome.chi2 / dof,
            converged: converged_override.unwrap_or(outcome.converged),
            iterations: outcome.iterations,
            spp_outside_span: false,
        }
    };
    match best {
        Some((_, outcome)) => Ok(finalize(outcome, None)),
        None => match best_any {
            Some((_, outcome)) => Ok(finalize(outcome, Some(false))),
            None => Err(FitError::FringeCountMismatch),
        },
    }
}

/// Subtract the bare-interferometer dispersion (measured without the sample,
/// expressed as an equivalent per-unit-sample-length coefficient) from the
/// loaded measurement. Phase additivity makes the correction linear. Both
/// measurements must refer to the same degenerate wavelength.
pub fn subtract_calibration(
    d_total_ps_nm_km: f64,
    lambda_total_nm: f64,
    d_bare_equivalent_ps_nm_km: f64,
    lambda_bare_nm: f64,
) -> Result<f64, FitError> {
    if (lambda_total_nm - lambda_bare_nm).abs() > 1e-6 {
        return Err(FitError::WavelengthMismatch(lambda_total_nm, lambda_bare_nm));
    }
    Ok(d_total_ps_nm_km - d_bare_equivalent_ps_nm_km)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interferogram::{
        normalize_classical, normalize_quantum, synth_classical, synth_quantum, NoiseSettings,
        SourceSpectrum, SpectralGrid, SpectrumShape, SystematicsSettings,
    };
    use crate::phase::{
        classical_fit_phase_offset, ground_truth_model, model_dispersion_at,
        noon_fit_phase_offset, stationary_phase_point_length, InterferometerGeometry,
    };
    use approx::assert_relative_eq;

    fn source() -> SourceSpectrum {
        SourceSpectrum {
            shape: SpectrumShape::Flat,
            center_nm: 1550.0,
            fwhm_nm: 200.0,
            spectral_intensity_w_per_nm: 125e-12,
        }
    }

    fn grid() -> SpectralGrid {
        SpectralGrid {
            start_nm: 1450.0,
            stop_nm: 1650.0,
            step_nm: 0.5,
        }
    }

    fn balanced(l0: f64) -> InterferometerGeometry {
        let model = ground_truth_model();
        InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: stationary_phase_point_length(&model, l0, 1.0).unwrap(),
            phase_offset_rad: 0.0,
        }
    }

    #[test]
    fn linear_problem_solved_in_two_iterations() {
        // y = 2 + 3x on 10 exact points.
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 + 3.0 * x).collect();
        let residual = |p: &DVector<f64>| {
            DVector::from_iterator(10, xs.iter().zip(&ys).map(|(x, y)| p[0] + p[1] * x - y))
        };
        let jacobian = |_: &DVector<f64>| {
            DMatrix::from_fn(10, 2, |r, c| if c == 0 { 1.0 } else { xs[r] })
        };
        let out = solve_least_squares(
            residual,
            jacobian,
            &DVector::from_row_slice(&[1.0, 1.0]),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 2, "took {} iterations", out.iterations);
        assert_relative_eq!(out.params[0], 2.0, max_relative = 1e-10);
        assert_relative_eq!(out.params[1], 3.0, max_relative = 1e-10);
    }

    #[test]
    fn rosenbrock_converges_from_standard_start() {
        // r = [10(y − x²), 1 − x], minimum at (1, 1).
        let residual = |p: &DVector<f64>| {
            DVector::from_row_slice(&[10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]])
        };
        let jacobian = |p: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[-20.0 * p[0], 10.0, -1.0, 0.0])
        };
        let out = solve_least_squares(
            residual,
            jacobian,
            &DVector::from_row_slice(&[-1.2, 1.0]),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_relative_eq!(out.params[0], 1.0, max_relative = 1e-8);
        assert_relative_eq!(out.params[1], 1.0, max_relative = 1e-8);
    }

    #[test]
    fn monotone_cost_decrease_across_accepted_steps() {
        // Instrument via a wrapper that records the cost at each residual
        // evaluation and checks the accepted sequence is non-increasing by
        // re-running with a best-so-far tracker.
        use std::cell::RefCell;
        let best = RefCell::new(f64::INFINITY);
        let violations = RefCell::new(0usize);
        let residual = |p: &DVector<f64>| {
            let r =
                DVector::from_row_slice(&[10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]);
            let c = r.norm_squared();
            // Accepted steps only ever lower the best-seen cost; trial
            // evaluations may exceed it, so track the running minimum and
            // assert the final solution attains it.
            if c < *best.borrow() {
                *best.borrow_mut() = c;
            } else {
                *violations.borrow_mut() += 0; // trials may go up freely
            }
            r
        };
        let jacobian = |p: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[-20.0 * p[0], 10.0, -1.0, 0.0])
        };
        let out = solve_least_squares(
            residual,
            jacobian,
            &DVector::from_row_slice(&[-1.2, 1.0]),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(out.chi2 <= *best.borrow() + 1e-30);
    }

    fn classical_dataset(noise: &NoiseSettings) -> (NormalizedSpectrogram, f64, f64) {
        let model = ground_truth_model();
        let l0 = 1560.493;
        let geo = balanced(l0);
        let s = synth_classical(
            &model,
            &geo,
            &grid(),
            &source(),
            0.1,
            noise,
            &SystematicsSettings::none(),
            false,
        )
        .unwrap();
        let phase_off = classical_fit_phase_offset(&geo, &model, l0).unwrap();
        (normalize_classical(&s), phase_off, l0)
    }

    #[test]
    fn classical_inverse_crime_recovers_truth() {
        let (data, phase_off, l0) = classical_dataset(&NoiseSettings::noiseless());
        let model = ground_truth_model();
        let truth = model.evaluate(l0).unwrap();
        let init = ClassicalFitParams {
            lambda0_nm: l0 + 5.0,
            d2n_dlambda2: truth.d2n_dlambda2 * 1.1,
            d3n_dlambda3: truth.d3n_dlambda3,
        };
        let res = fit_classical(&data, 1.0, phase_off, 1.0, Some(init), &FitOptions::default())
            .unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.params["lambda0_nm"], l0, max_relative = 1e-6);
        assert_relative_eq!(
            res.params["d2n_dlambda2"],
            truth.d2n_dlambda2,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            res.params["d3n_dlambda3"],
            truth.d3n_dlambda3,
            max_relative = 1e-4
        );
        assert_relative_eq!(res.d_ps_nm_km, 17.035, max_relative = 1e-6);
        assert!(res.residual_rms < 1e-9, "rms = {}", res.residual_rms);
    }

    #[test]
    fn classical_auto_init_reaches_truth_without_hints() {
        let (data, phase_off, l0) = classical_dataset(&NoiseSettings::noiseless());
        let res =
            fit_classical(&data, 1.0, phase_off, 1.0, None, &FitOptions::default()).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.params["lambda0_nm"], l0, max_relative = 1e-6);
        assert_relative_eq!(res.d_ps_nm_km, 17.035, max_relative = 1e-6);
    }

    #[test]
    fn classical_jacobian_matches_finite_differences() {
        let ctx = ClassicalContext {
            ls_nm: 1.0 * NM_PER_M,
            phase_offset_rad: 0.4,
            visibility: 0.9,
            third_order_free: true,
            fit_phase_offset: true,
        };
        let p = vec![1560.3, -3.2e-9, -9.0e-12, 0.4];
        for &l in &[1470.0, 1520.0, 1561.0, 1640.0] {
            let (_, g) = classical_model_and_grad(&ctx, &p, l);
            for k in 0..p.len() {
                let h = 1e-6 * p[k].abs().max(1e-8);
                let mut pp = p.clone();
                pp[k] += h;
                let mut pm = p.clone();
                pm[k] -= h;
                let fd = (classical_model_and_grad(&ctx, &pp, l).0
                    - classical_model_and_grad(&ctx, &pm, l).0)
                    / (2.0 * h);
                let scale = fd.abs().max(g[k].abs()).max(1e-9);
                assert!(
                    (g[k] - fd).abs() / scale < 1e-5,
                    "param {k} at λ={l}: analytic {} vs fd {}",
                    g[k],
                    fd
                );
            }
        }
    }

    #[test]
    fn quantum_jacobian_matches_finite_differences() {
        let ctx = QuantumContext {
            ls_nm: 1.0 * NM_PER_M,
            lambda_star_nm: 1560.492,
            phase_offset_rad: 0.2,
            visibility: 0.95,
            fixed_d3n: -9.0e-12,
            include_third_order: true,
            fit_phase_offset: true,
        };
        let p = vec![-3.2e-9, 0.2];
        for &l in &[1480.0, 1530.0, 1561.0, 1630.0] {
            let (_, g) = quantum_model_and_grad(&ctx, &p, l);
            for k in 0..p.len() {
                let h = 1e-6 * p[k].abs().max(1e-8);
                let mut pp = p.clone();
                pp[k] += h;
                let mut pm = p.clone();
                pm[k] -= h;
                let fd = (quantum_model_and_grad(&ctx, &pp, l).0
                    - quantum_model_and_grad(&ctx, &pm, l).0)
                    / (2.0 * h);
                let scale = fd.abs().max(g[k].abs()).max(1e-9);
                assert!(
                    (g[k] - fd).abs() / scale < 1e-5,
                    "param {k} at λ={l}: analytic {} vs fd {}",
                    g[k],
                    fd
                );
            }
        }
    }

    fn quantum_dataset(phase_offset: f64) -> (NormalizedSpectrogram, f64) {
        let model = ground_truth_model();
        let star = 2.0 * 780.246;
        let mut geo = balanced(star);
        geo.phase_offset_rad = phase_offset;
        let s = synth_quantum(
            &model,
            &geo,
            &grid(),
            &source(),
            8.0,
            780.246,
            &NoiseSettings::noiseless(),
            &SystematicsSettings::none(),
            false,
        )
        .unwrap();
        let po = noon_fit_phase_offset(&geo, &model, star).unwrap();
        (normalize_quantum(&s), po)
    }

    #[test]
    fn quantum_inverse_crime_with_doubled_init() {
        let (data, po) = quantum_dataset(0.0);
        let model = ground_truth_model();
        let truth = model.evaluate(2.0 * 780.246).unwrap();
        let init = QuantumFitParams {
            d2n_dlambda2: 2.0 * truth.d2n_dlambda2,
        };
        let res = fit_quantum(
            &data,
            1.0,
            780.246,
            po,
            1.0,
            truth.d3n_dlambda3,
            true,
            Some(init),
            &FitOptions::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert_relative_eq!(
            res.params["d2n_dlambda2"],
            truth.d2n_dlambda2,
            max_relative = 1e-9
        );
    }

    #[test]
    fn quantum_fit_basin_robust_to_3x_init() {
        let (data, po) = quantum_dataset(0.0);
        let model = ground_truth_model();
        let truth = model.evaluate(2.0 * 780.246).unwrap();
        let r1 = fit_quantum(
            &data,
            1.0,
            780.246,
            po,
            1.0,
            truth.d3n_dlambda3,
            true,
            Some(QuantumFitParams {
                d2n_dlambda2: 3.0 * truth.d2n_dlambda2,
            }),
            &FitOptions::default(),
        )
        .unwrap();
        let r2 = fit_quantum(
            &data,
            1.0,
            780.246,
            po,
            1.0,
            truth.d3n_dlambda3,
            true,
            Some(QuantumFitParams {
                d2n_dlambda2: truth.d2n_dlambda2,
            }),
            &FitOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(
            r1.params["d2n_dlambda2"],
            r2.params["d2n_dlambda2"],
            max_relative = 1e-8
        );
    }

    #[test]
    fn quantum_fit_invariant_to_phase_offset_shift() {
        let model = ground_truth_model();
        let truth = model.evaluate(2.0 * 780.246).unwrap();
        let fit_with = |off: f64| {
            let (data, po) = quantum_dataset(off);
            fit_quantum(
                &data,
                1.0,
                780.246,
                po,
                1.0,
                truth.d3n_dlambda3,
                true,
                None,
                &FitOptions::default(),
            )
            .unwrap()
            .params["d2n_dlambda2"]
        };
        let a = fit_with(0.0);
        let b = fit_with(1.0);
        assert_relative_eq!(a, b, max_relative = 1e-6);
    }

    #[test]
    fn truncated_fit_matches_full_fit_without_third_order() {
        // Truth with d³n = 0: no model mismatch, the two classical fits
        // must agree.
        let anchor = 1560.493;
        let model = crate::phase::RefractiveIndexModel::Taylor {
            anchor_nm: anchor,
            n: 1.468,
            dn_dlambda: -1.2e-5,
            d2n_dlambda2: crate::phase::dispersion_to_d2n(17.035, anchor),
            d3n_dlambda3: 0.0,
        };
        let geo = InterferometerGeometry {
            sample_length_m: 1.0,
            reference_length_m: stationary_phase_point_length(&model, anchor, 1.0).unwrap(),
            phase_offset_rad: 0.0,
        };
        let s = synth_classical(
            &model,
            &geo,
            &grid(),
            &source(),
            0.1,
            &NoiseSettings::noiseless(),
            &SystematicsSettings::none(),
            false,
        )
        .unwrap();
        let data = normalize_classical(&s);
        let po = classical_fit_phase_offset(&geo, &model, anchor).unwrap();
        let full = fit_classical(&data, 1.0, po, 1.0, None, &FitOptions::default()).unwrap();
        let trunc =
            fit_classical_second_order(&data, 1.0, po, 1.0, None, &FitOptions::default())
                .unwrap();
        assert_relative_eq!(full.d_ps_nm_km, trunc.d_ps_nm_km, max_relative = 1e-6);
    }

    #[test]
    fn truncated_fit_is_biased_with_third_order_present() {
        let (data, phase_off, _) = classical_dataset(&NoiseSettings::noiseless());
        let full =
            fit_classical(&data, 1.0, phase_off, 1.0, None, &FitOptions::default()).unwrap();
        let trunc =
            fit_classical_second_order(&data, 1.0, phase_off, 1.0, None, &FitOptions::default())
                .unwrap();
        assert!(trunc.converged);
        let model = ground_truth_model();
        let truth_at_fit =
            model_dispersion_at(&model, trunc.params["lambda0_nm"]).unwrap();
        assert!(
            (trunc.d_ps_nm_km - truth_at_fit).abs() > 1e-4,
            "expected visible truncation bias, got {}",
            trunc.d_ps_nm_km - truth_at_fit
        );
        assert!(
            trunc.residual_rms > 100.0 * full.residual_rms.max(1e-12),
            "truncated rms {} vs full rms {}",
            trunc.residual_rms,
            full.residual_rms
        );
    }

    #[test]
    fn estimator_sigma_matches_empirical_scatter() {
        // Reduced photon budget keeps this quick while staying in the
        // Gaussian regime.
        let model = ground_truth_model();
        let l0 = 1560.493;
        let geo = balanced(l0);
        let phase_off = classical_fit_phase_offset(&geo, &model, l0).unwrap();
        let mut ds = Vec::new();
        let mut sigmas = Vec::new();
        for seed in 0..60u64 {
            let noise = NoiseSettings {
                poisson_enabled: true,
                rng_seed: 1000 + seed,
                ..NoiseSettings::noiseless()
            };
            let s = synth_classical(
                &model,
                &geo,
                &grid(),
                &source(),
                1e-4,
                &noise,
                &SystematicsSettings::none(),
                false,
            )
            .unwrap();
            let data = normalize_classical(&s);
            let res =
                fit_classical(&data, 1.0, phase_off, 1.0, None, &FitOptions::default()).unwrap();
            if res.converged {
                ds.push(res.d_ps_nm_km);
                sigmas.push(res.d_sigma);
            }
        }
        assert!(ds.len() >= 50, "too many failed fits: {}", ds.len());
        let mean = ds.iter().sum::<f64>() / ds.len() as f64;
        let std =
            (ds.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (ds.len() - 1) as f64)
                .sqrt();
        let mean_sigma = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
        assert!(
            (std - mean_sigma).abs() / std < 0.35,
            "empirical {std} vs covariance {mean_sigma}"
        );
    }

    #[test]
    fn subtract_calibration_basics() {
        assert_eq!(subtract_calibration(17.0, 1560.492, 0.0, 1560.492).unwrap(), 17.0);
        assert_relative_eq!(
            subtract_calibration(18.9, 1560.492, 1.9, 1560.492).unwrap(),
            17.0,
            max_relative = 1e-12
        );
        assert!(subtract_calibration(17.0, 1560.492, 1.0, 1540.0).is_err());
    }

    #[test]
    fn too_few_bins_is_an_error() {
        let data = NormalizedSpectrogram {
            lambda_nm: vec![1500.0; 10],
            value: vec![0.5; 10],
            sigma: vec![0.01; 10],
            valid: vec![true; 10],
        };
        assert!(matches!(
            fit_classical(&data, 1.0, 0.0, 1.0, None, &FitOptions::default()),
            Err(FitError::NotEnoughBins { .. })
        ));
    }
}

