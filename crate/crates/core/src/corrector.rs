//! First-corrector variance integrals and their small-parameter scaling.
//!
//! With `E(k)` the shell energy,
//!
//! ```text
//! chi1(ε)  = ε² ∫₀^K E(k) / (ε² + k^{2β})² dk
//! grad(λ)  =    ∫₀^K k² E(k) / (λ + k^{2β})² dk
//! ```
//!
//! The two are related through `λ = ε²`; every fit records which parameter it
//! was taken in.

use crate::kubo::radial_integral;
use crate::quadrature::{QuadratureError, QuadratureOptions};
use crate::spectrum::{shell_energy_constant, ModelParams, SpectrumError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectorError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid spans {decades:.3} decades, need at least 3")]
    GridTooNarrow { decades: f64 },
    #[error("{0}")]
    InvalidParams(#[from] SpectrumError),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(#[from] QuadratureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorIntegral {
    Chi1,
    GradChi1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingParam {
    Eps,
    Lambda,
}

impl ScalingParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScalingParam::Eps => "eps",
            ScalingParam::Lambda => "lambda",
        }
    }
}

fn opts() -> QuadratureOptions {
    QuadratureOptions { rel_tol: 1e-12, ..QuadratureOptions::default() }
}

fn positive(name: &str, x: f64) -> Result<(), CorrectorError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CorrectorError::InvalidArgument(format!("{name} = {x} must be positive and finite")))
    }
}

pub fn chi1_variance(params: &ModelParams, eps: f64) -> Result<f64, CorrectorError> {
    params.validate()?;
    positive("eps", eps)?;
    let e2 = eps * eps;
    let beta2 = 2.0 * params.beta;
    let w = |k: f64| {
        let q = e2 + k.powf(beta2);
        1.0 / (q * q)
    };
    let floor = (params.beta > 0.0).then(|| eps.powf(1.0 / params.beta));
    let r = radial_integral(params, 0.0, w, 0.0, params.cutoff, floor, &opts())?;
    Ok(e2 * shell_energy_constant(params.d) * r.value)
}

pub fn grad_chi1_variance(params: &ModelParams, lambda: f64) -> Result<f64, CorrectorError> {
    params.validate()?;
    positive("lambda", lambda)?;
    let beta2 = 2.0 * params.beta;
    let w = |k: f64| {
        let q = lambda + k.powf(beta2);
        1.0 / (q * q)
    };
    let floor = (params.beta > 0.0).then(|| lambda.powf(0.5 / params.beta));
    let r = radial_integral(params, 2.0, w, 0.0, params.cutoff, floor, &opts())?;
    Ok(shell_energy_constant(params.d) * r.value)
}

/// Value of `op` at parameter `x` in parameterization `param`.
pub fn evaluate(op: CorrectorIntegral, params: &ModelParams, param: ScalingParam, x: f64) -> Result<f64, CorrectorError> {
    match (op, param) {
        (CorrectorIntegral::Chi1, ScalingParam::Eps) => chi1_variance(params, x),
        (CorrectorIntegral::Chi1, ScalingParam::Lambda) => chi1_variance(params, x.sqrt()),
        (CorrectorIntegral::GradChi1, ScalingParam::Lambda) => grad_chi1_variance(params, x),
        (CorrectorIntegral::GradChi1, ScalingParam::Eps) => grad_chi1_variance(params, x * x),
    }
}

fn in_param(exponent_in_eps: f64, param: ScalingParam) -> f64 {
    match param {
        ScalingParam::Eps => exponent_in_eps,
        ScalingParam::Lambda => 0.5 * exponent_in_eps,
    }
}

/// Exponent of the corrector vanishing law `ε^{2(1-α-β)/β}`, and for the gradient
/// `λ^{(2-α-2β)/β}` when that is negative (zero otherwise: bounded limit).
pub fn theory_exponent(op: CorrectorIntegral, params: &ModelParams, param: ScalingParam) -> f64 {
    let (a, b) = (params.alpha, params.beta);
    match op {
        CorrectorIntegral::Chi1 => in_param(2.0 * (1.0 - a - b) / b, param),
        CorrectorIntegral::GradChi1 => in_param(2.0 * ((2.0 - a - 2.0 * b) / b).min(0.0), param),
    }
}

/// Small-parameter exponent read off the integrand.
///
/// After `k = ε^{1/β} u` the chi1 integral tends to `ε^{2(1-α-β)/β} ∫ u^{1-2α}/(1+u^{2β})²`
/// only when that integral converges at infinity (`α + 2β > 1`) and the shape does not
/// vanish near the origin; otherwise the `ε²` prefactor dominates. The gradient integral
/// likewise scales as `λ^{(2-α-2β)/β}` only for `α + 2β > 2`.
pub fn asymptotic_exponent(op: CorrectorIntegral, params: &ModelParams, param: ScalingParam) -> f64 {
    let (a, b) = (params.alpha, params.beta);
    let infrared = params.shape.support().0 <= 0.0;
    match op {
        CorrectorIntegral::Chi1 => {
            let e = if infrared && a + 2.0 * b > 1.0 { 2.0 * (1.0 - a - b) / b } else { 2.0 };
            in_param(e.min(2.0), param)
        }
        CorrectorIntegral::GradChi1 => {
            let e = if infrared && a + 2.0 * b > 2.0 { 2.0 * (2.0 - a - 2.0 * b) / b } else { 0.0 };
            in_param(e, param)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub stderr: f64,
}

/// Least squares of `ln y` against `ln x`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLawFit, CorrectorError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(CorrectorError::InvalidArgument(format!("need matching grids of >= 2 points, got {} and {}", x.len(), y.len())));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !(**v > 0.0)) {
        return Err(CorrectorError::InvalidArgument(format!("log-log fit needs positive values, got {v}")));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let stderr = if lx.len() > 2 { (ss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(PowerLawFit { exponent: b, prefactor: a.exp(), stderr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub op: CorrectorIntegral,
    pub param: ScalingParam,
    pub exponent: f64,
    pub stderr: f64,
    pub theory_exponent: f64,
    pub asymptotic_exponent: f64,
    /// `(parameter, value)`, parameter strictly decreasing.
    pub grid: Vec<(f64, f64)>,
}

fn check_grid(grid: &[f64]) -> Result<(), CorrectorError> {
    if grid.len() < 2 {
        return Err(CorrectorError::GridTooNarrow { decades: 0.0 });
    }
    for w in grid.windows(2) {
        if !(w[1] < w[0]) || !(w[1] > 0.0) {
            return Err(CorrectorError::InvalidArgument("grid must be positive and strictly decreasing".into()));
        }
    }
    let decades = (grid[0] / grid[grid.len() - 1]).log10();
    if decades < 3.0 - 1e-9 {
        return Err(CorrectorError::GridTooNarrow { decades });
    }
    Ok(())
}

pub fn fit_scaling(op: CorrectorIntegral, params: &ModelParams, param: ScalingParam, grid: &[f64]) -> Result<ScalingFit, CorrectorError> {
    check_grid(grid)?;
    let values = grid.iter().map(|&x| evaluate(op, params, param, x)).collect::<Result<Vec<_>, _>>()?;
    let fit = fit_power_law(grid, &values)?;
    Ok(ScalingFit {
        op,
        param,
        exponent: fit.exponent,
        stderr: fit.stderr,
        theory_exponent: theory_exponent(op, params, param),
        asymptotic_exponent: asymptotic_exponent(op, params, param),
        grid: grid.iter().copied().zip(values).collect(),
    })
}

/// Log-spaced decreasing grid from `hi` over `decades` decades, `per_decade` points each.
pub fn log_grid(hi: f64, decades: usize, per_decade: usize) -> Vec<f64> {
    let n = decades * per_decade;
    (0..=n).map(|j| hi * 10f64.powf(-(j as f64) / per_decade as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepenedFit {
    pub fit: ScalingFit,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Slides a three-decade window toward zero one decade at a time until the fitted
/// exponent changes by less than `tol` (relative) between windows.
pub fn fit_scaling_adaptive(
    op: CorrectorIntegral,
    params: &ModelParams,
    param: ScalingParam,
    hi: f64,
    max_decades: usize,
    tol: f64,
) -> Result<DeepenedFit, CorrectorError> {
    let mut history = Vec::new();
    let mut top = hi;
    let mut last: Option<ScalingFit> = None;
    for depth in 3..=max_decades.max(3) {
        let fit = fit_scaling(op, params, param, &log_grid(top, 3, 4))?;
        history.push(fit.exponent);
        if let Some(prev) = &last {
            if (fit.exponent - prev.exponent).abs() <= tol * fit.exponent.abs().max(1.0) {
                return Ok(DeepenedFit { fit, converged: true, history });
            }
        }
        last = Some(fit);
        if depth == max_decades {
            break;
        }
        top /= 10.0;
    }
    Ok(DeepenedFit { fit: last.expect("at least one window"), converged: false, history })
}
