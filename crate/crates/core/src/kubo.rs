//! Deterministic Taylor-Kubo quadrature and the diffusive/superdiffusive phase test.
//!
//! Every isotropic quantity here reduces to
//!
//! ```text
//! δ_ij ((d-1)/d) S_{d-1} ∫₀^K a(k) k^{1-2α} w(k) dk
//! ```
//!
//! for some radial weight `w`: `1` for the velocity covariance,
//! `e^{-k^{2β} t}` for the Eulerian time correlation, `k^{-2β}` for the
//! one-sided Taylor-Kubo integral and `k^{2β}/(k^{2β}+ε²)²` for the
//! regularized covariance.
//!
//! Factor-of-two convention: [`DiffusivityKind::OneSided`] is
//! `K_ij = ∫₀^∞ R_ij(t, 0) dt`, and [`DiffusivityKind::Covariance`] is
//! `D* = K + Kᵀ`, the covariance rate of the limiting Brownian motion,
//! `E[x_i(t) x_j(t)] ≈ D*_ij t`.

use crate::quadrature::{self, Integral, QuadratureError, QuadratureOptions};
use crate::spectrum::{unit_sphere_area, ModelParams, SpectrumError};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-width of the band around `α + β = 1` classified as [`Phase::Boundary`].
pub const TOL_BOUNDARY: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KuboError {
    #[error("dimension d = {d} is too small; need d >= 2")]
    DimensionTooSmall { d: usize },
    #[error("Taylor-Kubo integral diverges: alpha + beta = {sum} violates alpha + beta < 1 (margin 1 - alpha - beta = {margin:.6})")]
    DivergentIntegral { sum: f64, margin: f64 },
    #[error("{0}")]
    InvalidParams(#[from] SpectrumError),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(#[from] QuadratureError),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusivityKind {
    OneSided,
    Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusivityMatrix {
    pub value: DMatrix<f64>,
    pub kind: DiffusivityKind,
    pub abs_error_estimate: f64,
}

impl DiffusivityMatrix {
    pub fn isotropic(d: usize, scalar: Integral, kind: DiffusivityKind) -> Self {
        DiffusivityMatrix {
            value: DMatrix::identity(d, d) * scalar.value,
            kind,
            abs_error_estimate: scalar.abs_error,
        }
    }

    /// `K + Kᵀ`; a covariance is returned unchanged.
    pub fn to_covariance(&self) -> DiffusivityMatrix {
        match self.kind {
            DiffusivityKind::Covariance => self.clone(),
            DiffusivityKind::OneSided => DiffusivityMatrix {
                value: &self.value + self.value.transpose(),
                kind: DiffusivityKind::Covariance,
                abs_error_estimate: 2.0 * self.abs_error_estimate,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.value.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.value.trace()
    }
}

/// Isotropic `d×d` matrix produced by quadrature, e.g. `R(t, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub value: DMatrix<f64>,
    pub abs_error_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Diffusive,
    Superdiffusive,
    Boundary,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Diffusive => "diffusive",
            Phase::Superdiffusive => "superdiffusive",
            Phase::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseVerdict {
    pub verdict: Phase,
    /// `1 - α - β`.
    pub margin: f64,
}

/// `((d-1)/d) S_{d-1}`: integral over the unit sphere of a diagonal entry of `I - n⊗n`.
pub fn angular_factor(d: usize) -> Result<f64, KuboError> {
    if d < 2 {
        return Err(KuboError::DimensionTooSmall { d });
    }
    Ok((d as f64 - 1.0) / d as f64 * unit_sphere_area(d))
}

pub fn classify_phase(alpha: f64, beta: f64) -> PhaseVerdict {
    let margin = 1.0 - alpha - beta;
    let verdict = if margin > TOL_BOUNDARY {
        Phase::Diffusive
    } else if margin < -TOL_BOUNDARY {
        Phase::Superdiffusive
    } else {
        Phase::Boundary
    };
    PhaseVerdict { verdict, margin }
}

/// `∫_lo^hi a(k) k^{1-2α+extra_power} w(k) dk` restricted to the shape support.
///
/// `floor` is a characteristic small-k scale of `w` (if any) that the graded
/// mesh must resolve.
pub fn radial_integral(
    params: &ModelParams,
    extra_power: f64,
    w: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    floor: Option<f64>,
    opts: &QuadratureOptions,
) -> Result<Integral, QuadratureError> {
    let (s_lo, s_hi) = params.shape.support();
    let lo = lo.max(s_lo);
    let hi = hi.min(s_hi).min(params.cutoff);
    if hi <= lo || params.shape.is_zero() {
        return Ok(Integral::ZERO);
    }
    let shape = &params.shape;
    let g = |k: f64| {
        let a = shape.eval(k);
        if a == 0.0 {
            0.0
        } else {
            a * w(k)
        }
    };
    let breaks = shape.breakpoints();
    let floor = floor.map(|f| f * 2f64.powi(-12));
    quadrature::power_weighted(params.radial_power() + extra_power, g, lo, hi, &breaks, floor, opts)
}

/// Radial spectral mass `∫_lo^hi a(k) k^{1-2α} dk`.
pub fn radial_mass(params: &ModelParams, lo: f64, hi: f64) -> Result<Integral, QuadratureError> {
    radial_integral(params, 0.0, |_| 1.0, lo, hi, None, &QuadratureOptions::default())
}

fn scaled(params: &ModelParams, r: Integral) -> Result<Integral, KuboError> {
    let c = angular_factor(params.d)?;
    Ok(Integral { value: c * r.value, abs_error: c * r.abs_error })
}

fn checked(params: &ModelParams) -> Result<(), KuboError> {
    if params.d < 2 {
        return Err(KuboError::DimensionTooSmall { d: params.d });
    }
    params.validate()?;
    Ok(())
}

/// One-sided Taylor-Kubo matrix `K_ij = ∫₀^∞ R_ij(t, 0) dt`.
pub fn taylor_kubo(params: &ModelParams) -> Result<DiffusivityMatrix, KuboError> {
    taylor_kubo_with(params, &QuadratureOptions::default())
}

pub fn taylor_kubo_with(params: &ModelParams, opts: &QuadratureOptions) -> Result<DiffusivityMatrix, KuboError> {
    checked(params)?;
    let phase = classify_phase(params.alpha, params.beta);
    if phase.verdict != Phase::Diffusive {
        return Err(KuboError::DivergentIntegral { sum: params.alpha + params.beta, margin: phase.margin });
    }
    let beta2 = 2.0 * params.beta;
    let r = radial_integral(params, -beta2, |_| 1.0, 0.0, params.cutoff, None, opts)?;
    Ok(DiffusivityMatrix::isotropic(params.d, scaled(params, r)?, DiffusivityKind::OneSided))
}

/// Regularized matrix with radial weight `k^{2β}/(k^{2β}+ε²)²`.
///
/// Its `ε → 0` limit is the one-sided Taylor-Kubo matrix, so it carries the
/// [`DiffusivityKind::OneSided`] tag. Finite for every `ε > 0`.
pub fn regularized_diffusivity(params: &ModelParams, eps: f64) -> Result<DiffusivityMatrix, KuboError> {
    checked(params)?;
    if !(eps > 0.0) {
        return Err(SpectrumError::InvalidParams(format!("eps = {eps} must be > 0")).into());
    }
    let beta2 = 2.0 * params.beta;
    let e2 = eps * eps;
    // k^{2β}/(k^{2β}+ε²)² written as k^{-2β} (1 + ε² k^{-2β})^{-2} would overflow;
    // keep the k^{2β} factor in the weight instead.
    let w = |k: f64| {
        let r = k.powf(beta2);
        r / ((r + e2) * (r + e2))
    };
    let floor = if beta2 > 0.0 { Some(eps.powf(1.0 / params.beta)) } else { None };
    let r = radial_integral(params, 0.0, w, 0.0, params.cutoff, floor, &QuadratureOptions::default())?;
    Ok(DiffusivityMatrix::isotropic(params.d, scaled(params, r)?, DiffusivityKind::OneSided))
}

/// `R(t, 0)`: at `t = 0` the one-point velocity covariance `E[V⊗V]`.
pub fn eulerian_correlation(params: &ModelParams, t: f64) -> Result<CorrelationMatrix, KuboError> {
    checked(params)?;
    if !(t >= 0.0) {
        return Err(SpectrumError::InvalidParams(format!("t = {t} must be >= 0")).into());
    }
    let beta2 = 2.0 * params.beta;
    let w = |k: f64| (-k.powf(beta2) * t).exp();
    let floor = if t > 0.0 && beta2 > 0.0 { Some(t.powf(-1.0 / beta2)) } else { None };
    let r = radial_integral(params, 0.0, w, 0.0, params.cutoff, floor, &QuadratureOptions::default())?;
    let s = scaled(params, r)?;
    Ok(CorrelationMatrix {
        value: DMatrix::identity(params.d, params.d) * s.value,
        abs_error_estimate: s.abs_error,
    })
}

/// `E|V(0,0)|²`.
pub fn velocity_variance(params: &ModelParams) -> Result<f64, KuboError> {
    Ok(eulerian_correlation(params, 0.0)?.value.trace())
}

/// Full two-point tensor `R(t, x)` for `d = 2` by nested quadrature over the
/// wavenumber and the polar angle.
pub fn spatial_correlation_2d(params: &ModelParams, t: f64, x: [f64; 2]) -> Result<DMatrix<f64>, KuboError> {
    checked(params)?;
    if params.d != 2 {
        return Err(KuboError::Unsupported(format!(
            "spatial_correlation_2d needs d = 2, got {}",
            params.d
        )));
    }
    let beta2 = 2.0 * params.beta;
    let opts = QuadratureOptions { rel_tol: 1e-10, ..QuadratureOptions::default() };
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = DMatrix::zeros(2, 2);
    for (i, j) in [(0usize, 0usize), (0, 1), (1, 1)] {
        let failure = std::cell::RefCell::new(None);
        let angular = |k: f64| -> f64 {
            let f = |th: f64| {
                let n = [th.cos(), th.sin()];
                let proj = if i == j { 1.0 } else { 0.0 } - n[i] * n[j];
                (k * (n[0] * x[0] + n[1] * x[1])).cos() * proj
            };
            // eight panels keep the oscillatory polar integrand resolved
            let breaks: Vec<f64> = (1..8).map(|m| two_pi * m as f64 / 8.0).collect();
            match quadrature::integrate(f, 0.0, two_pi, &breaks, &opts) {
                Ok(r) => r.value * (-k.powf(beta2) * t).exp(),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        let r = radial_integral(params, 0.0, angular, 0.0, params.cutoff, None, &opts)?;
        if let Some(e) = failure.into_inner() {
            return Err(e.into());
        }
        out[(i, j)] = r.value;
        out[(j, i)] = r.value;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::ShapeFn;
    use std::f64::consts::PI;

    fn base() -> ModelParams {
        ModelParams::with_indicator(2, 0.25, 0.25, 1.0)
    }

    #[test]
    fn angular_factor_values() {
        assert!((angular_factor(2).unwrap() - PI).abs() < 1e-15);
        assert!((angular_factor(3).unwrap() - 8.0 * PI / 3.0).abs() < 1e-14);
        assert_eq!(angular_factor(1).unwrap_err(), KuboError::DimensionTooSmall { d: 1 });
    }

    #[test]
    fn taylor_kubo_closed_form() {
        let k = taylor_kubo(&base()).unwrap();
        assert_eq!(k.kind, DiffusivityKind::OneSided);
        assert!((k.value[(0, 0)] - PI).abs() < 1e-10);
        assert!((k.value[(1, 1)] - PI).abs() < 1e-10);
        assert_eq!(k.value[(0, 1)], 0.0);
        let c = k.to_covariance();
        assert_eq!(c.kind, DiffusivityKind::Covariance);
        assert!((c.value[(0, 0)] - 2.0 * PI).abs() < 2e-10);
    }

    #[test]
    fn taylor_kubo_zero_shape() {
        let mut p = base();
        p.shape = ShapeFn::Tabulated { knots: vec![0.0, 1.0], values: vec![0.0, 0.0] };
        let k = taylor_kubo(&p).unwrap();
        assert!(k.value.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn divergent_parameters_rejected() {
        let p = ModelParams::with_indicator(2, 0.6, 0.5, 1.0);
        match taylor_kubo(&p) {
            Err(KuboError::DivergentIntegral { sum, margin }) => {
                assert!((sum - 1.1).abs() < 1e-12);
                assert!((margin + 0.1).abs() < 1e-12);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        let p = ModelParams::with_indicator(2, 0.5, 0.5, 1.0);
        assert!(matches!(taylor_kubo(&p), Err(KuboError::DivergentIntegral { .. })));
    }

    #[test]
    fn phase_examples() {
        let v = classify_phase(0.5, 0.3);
        assert_eq!(v.verdict, Phase::Diffusive);
        assert!((v.margin - 0.2).abs() < 1e-15);
        let v = classify_phase(0.5, 0.5);
        assert_eq!(v.verdict, Phase::Boundary);
        assert_eq!(v.margin, 0.0);
        let v = classify_phase(0.9, 0.5);
        assert_eq!(v.verdict, Phase::Superdiffusive);
        assert!((v.margin + 0.4).abs() < 1e-15);
    }

    #[test]
    fn eulerian_covariance_at_zero_time() {
        let p = ModelParams::with_indicator(2, 0.5, 0.25, 1.0);
        let r = eulerian_correlation(&p, 0.0).unwrap();
        assert!((r.value[(0, 0)] - PI).abs() < 1e-12);
        assert!((velocity_variance(&p).unwrap() - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn eulerian_correlation_decays_monotonically() {
        let p = base();
        let mut prev = f64::INFINITY;
        for i in 0..60 {
            let t = 0.05 * (1.35f64).powi(i) - 0.05;
            let v = eulerian_correlation(&p, t).unwrap().value[(0, 0)];
            assert!(v >= 0.0 && v <= prev, "t = {t}: {v} > {prev}");
            prev = v;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn regularized_limit_and_monotonicity() {
        let p = base();
        let tk = taylor_kubo(&p).unwrap().value[(0, 0)];
        let mut prev = 0.0;
        for eps in [1.0, 0.1, 0.01, 1e-3, 1e-4] {
            let v = regularized_diffusivity(&p, eps).unwrap().value[(0, 0)];
            assert!(v >= prev && v <= tk * (1.0 + 1e-12), "eps {eps}: {v}");
            prev = v;
        }
        assert!((prev - tk).abs() < 1e-3 * tk);
    }

    #[test]
    fn regularized_finite_past_the_boundary() {
        let p = ModelParams::with_indicator(2, 0.7, 0.5, 1.0);
        let v = regularized_diffusivity(&p, 1e-3).unwrap();
        assert!(v.value[(0, 0)].is_finite() && v.value[(0, 0)] > 0.0);
        assert!(regularized_diffusivity(&p, 0.0).is_err());
    }

    #[test]
    fn regularized_large_eps_bound() {
        let p = base();
        for eps in [10.0, 100.0, 1000.0] {
            let v = regularized_diffusivity(&p, eps).unwrap().value[(0, 0)];
            // ∫ k^{2β} k^{1-2α} dk = ∫ k dk = 1/2 for α = β
            let bound = PI * 0.5 / eps.powi(4);
            assert!(v <= bound * (1.0 + 1e-9) && v > 0.0);
        }
    }

    #[test]
    fn scaling_under_support_dilation() {
        // a = 1 on [0.1, 1] vs [0.2, 2] with K scaled as well
        for (alpha, beta) in [(0.25, 0.25), (0.1, 0.6), (-0.3, 0.4)] {
            let mut p1 = ModelParams::with_indicator(3, alpha, beta, 1.0);
            p1.shape = ShapeFn::indicator(0.1, 1.0);
            let mut p2 = p1.clone();
            p2.cutoff = 2.0;
            p2.shape = ShapeFn::indicator(0.2, 2.0);
            let k1 = taylor_kubo(&p1).unwrap().value[(0, 0)];
            let k2 = taylor_kubo(&p2).unwrap().value[(0, 0)];
            let expect = 2f64.powf(2.0 - 2.0 * alpha - 2.0 * beta);
            assert!((k2 / k1 / expect - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn spatial_correlation_matches_diagonal_slice_at_origin() {
        let p = base();
        let r0 = spatial_correlation_2d(&p, 0.5, [0.0, 0.0]).unwrap();
        let e = eulerian_correlation(&p, 0.5).unwrap();
        assert!((r0[(0, 0)] - e.value[(0, 0)]).abs() < 1e-9);
        assert!(r0[(0, 1)].abs() < 1e-12);
        let r = spatial_correlation_2d(&p, 0.5, [0.3, 0.0]).unwrap();
        assert!(r[(0, 0)] < r0[(0, 0)] + 1e-12 && r[(0, 0)] > 0.0);
    }
}
