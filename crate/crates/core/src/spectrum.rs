//! Model parameters and the spectral quantities every other module queries.
//!
//! The velocity field has spectral density
//!
//! ```text
//! R̂(k) = a(|k|) |k|^-(2α+d-2) (I - k⊗k/|k|²)
//! ```
//!
//! and per-wavenumber time correlation `exp(-|k|^{2β} t)`. The shape function
//! `a` is compactly supported inside `[0, cutoff]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("the spectral density is not defined at k = 0")]
    ZeroWavevector,
    #[error("wavevector has {got} components but the model dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

/// Radial shape `a(k)` of the spectrum. A closed set of forms so that every
/// configuration is serializable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeFn {
    /// `1` on `[lo, hi]`, `0` elsewhere.
    Indicator { lo: f64, hi: f64 },
    /// Smooth bump `exp(1 - 1/(1 - r²))`, `r = (k - center)/width`, peak value 1.
    Bump { center: f64, width: f64 },
    /// Piecewise-linear interpolation of `values` at `knots`, zero outside the knots.
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
}

impl ShapeFn {
    pub fn indicator(lo: f64, hi: f64) -> Self {
        ShapeFn::Indicator { lo, hi }
    }

    pub fn eval(&self, k: f64) -> f64 {
        match self {
            ShapeFn::Indicator { lo, hi } => {
                if k >= *lo && k <= *hi {
                    1.0
                } else {
                    0.0
                }
            }
            ShapeFn::Bump { center, width } => {
                let r = (k - center) / width;
                if r.abs() < 1.0 {
                    (1.0 - 1.0 / (1.0 - r * r)).exp()
                } else {
                    0.0
                }
            }
            ShapeFn::Tabulated { knots, values } => {
                let n = knots.len();
                if k < knots[0] || k > knots[n - 1] {
                    return 0.0;
                }
                // first knot strictly greater than k, clamped so that [j-1, j] is a valid cell
                let j = knots.partition_point(|&x| x <= k).clamp(1, n - 1);
                let (x0, x1) = (knots[j - 1], knots[j]);
                let (y0, y1) = (values[j - 1], values[j]);
                y0 + (y1 - y0) * (k - x0) / (x1 - x0)
            }
        }
    }

    /// Smallest interval `[lo, hi]` outside of which the shape vanishes.
    pub fn support(&self) -> (f64, f64) {
        match self {
            ShapeFn::Indicator { lo, hi } => (*lo, *hi),
            ShapeFn::Bump { center, width } => ((center - width).max(0.0), center + width),
            ShapeFn::Tabulated { knots, .. } => (knots[0], knots[knots.len() - 1]),
        }
    }

    /// Points where the shape is not smooth; quadrature panels split there.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            ShapeFn::Indicator { lo, hi } => vec![*lo, *hi],
            ShapeFn::Bump { center, width } => {
                vec![(center - width).max(0.0), *center, center + width]
            }
            ShapeFn::Tabulated { knots, .. } => knots.clone(),
        }
    }

    /// Exact maximum of the shape on `[lo, hi]`.
    pub fn max_on(&self, lo: f64, hi: f64) -> f64 {
        match self {
            ShapeFn::Indicator { lo: a, hi: b } => {
                if lo <= *b && hi >= *a {
                    1.0
                } else {
                    0.0
                }
            }
            ShapeFn::Bump { center, .. } => self.eval(center.clamp(lo, hi)),
            ShapeFn::Tabulated { knots, values } => {
                let mut m = self.eval(lo).max(self.eval(hi));
                for (x, y) in knots.iter().zip(values) {
                    if *x >= lo && *x <= hi {
                        m = m.max(*y);
                    }
                }
                m
            }
        }
    }

    /// True when the shape is identically zero.
    pub fn is_zero(&self) -> bool {
        match self {
            ShapeFn::Indicator { lo, hi } => lo >= hi,
            ShapeFn::Bump { width, .. } => *width <= 0.0,
            ShapeFn::Tabulated { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }

    pub fn validate(&self, cutoff: f64) -> Result<(), SpectrumError> {
        let bad = |m: String| Err(SpectrumError::InvalidParams(m));
        match self {
            ShapeFn::Indicator { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite()) || *lo < 0.0 || lo >= hi || *hi > cutoff {
                    return bad(format!(
                        "indicator shape needs 0 <= lo < hi <= cutoff (lo = {lo}, hi = {hi}, cutoff = {cutoff})"
                    ));
                }
            }
            ShapeFn::Bump { center, width } => {
                if !(center.is_finite() && width.is_finite()) || *width <= 0.0 || *center < 0.0 {
                    return bad(format!("bump shape needs center >= 0 and width > 0 (center = {center}, width = {width})"));
                }
                if center + width > cutoff {
                    return bad(format!(
                        "bump support [.., {}] exceeds the cutoff {cutoff}",
                        center + width
                    ));
                }
            }
            ShapeFn::Tabulated { knots, values } => {
                if knots.len() < 2 || knots.len() != values.len() {
                    return bad("tabulated shape needs at least two knots and one value per knot".into());
                }
                if knots.windows(2).any(|w| !(w[1] > w[0])) || !knots[0].is_finite() {
                    return bad("tabulated knots must be finite and strictly increasing".into());
                }
                if knots[0] < 0.0 || knots[knots.len() - 1] > cutoff {
                    return bad(format!("tabulated knots must lie inside [0, cutoff = {cutoff}]"));
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return bad("tabulated values must be finite and nonnegative".into());
                }
            }
        }
        Ok(())
    }
}

/// The physical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub d: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Ultraviolet cutoff `K`.
    pub cutoff: f64,
    pub shape: ShapeFn,
    #[serde(default)]
    pub seed: u64,
}

impl ModelParams {
    /// Convenience constructor with `a = 1` on `[0, cutoff]`.
    pub fn with_indicator(d: usize, alpha: f64, beta: f64, cutoff: f64) -> Self {
        ModelParams {
            d,
            alpha,
            beta,
            cutoff,
            shape: ShapeFn::indicator(0.0, cutoff),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SpectrumError> {
        if self.d < 2 {
            return Err(SpectrumError::InvalidParams(format!(
                "dimension d = {} must be at least 2",
                self.d
            )));
        }
        if !self.alpha.is_finite() || self.alpha >= 1.0 {
            return Err(SpectrumError::InvalidParams(format!(
                "alpha = {} must be finite and < 1",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(SpectrumError::InvalidParams(format!(
                "beta = {} must be finite and >= 0",
                self.beta
            )));
        }
        if !self.cutoff.is_finite() || self.cutoff <= 0.0 {
            return Err(SpectrumError::InvalidParams(format!(
                "cutoff = {} must be finite and > 0",
                self.cutoff
            )));
        }
        self.shape.validate(self.cutoff)
    }

    /// `2α + d - 2`, the power-law exponent of the spectral density.
    pub fn density_exponent(&self) -> f64 {
        2.0 * self.alpha + self.d as f64 - 2.0
    }

    /// `1 - 2α`, the power of `k` in the radial spectral mass `a(k) k^{1-2α} dk`.
    pub fn radial_power(&self) -> f64 {
        1.0 - 2.0 * self.alpha
    }

    /// OU relaxation rate `|k|^{2β}` of the modes at wavenumber `k`.
    pub fn decay_rate(&self, k_norm: f64) -> f64 {
        k_norm.powf(2.0 * self.beta)
    }

    /// Scalar part of the spectral density, `a(|k|) |k|^{-(2α+d-2)}`.
    pub fn scalar_density(&self, k_norm: f64) -> f64 {
        if k_norm > self.cutoff {
            return 0.0;
        }
        let a = self.shape.eval(k_norm);
        if a == 0.0 {
            0.0
        } else {
            a * k_norm.powf(-self.density_exponent())
        }
    }
}

/// `R̂(k)` at one wavevector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTensor {
    pub value: DMatrix<f64>,
}

/// Surface area of the unit sphere `S^{d-1}` in `R^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (d as f64 - 2.0) * unit_sphere_area(d - 2),
    }
}

/// Constant `c_d = (d-1) S_{d-1}` in `shell_energy(k) = c_d a(k) k^{1-2α}`.
pub fn shell_energy_constant(d: usize) -> f64 {
    (d as f64 - 1.0) * unit_sphere_area(d)
}

pub fn spectral_density(params: &ModelParams, k: &[f64]) -> Result<SpectralTensor, SpectrumError> {
    let d = params.d;
    if k.len() != d {
        return Err(SpectrumError::DimensionMismatch { expected: d, got: k.len() });
    }
    let k2: f64 = k.iter().map(|x| x * x).sum();
    if k2 == 0.0 {
        return Err(SpectrumError::ZeroWavevector);
    }
    let scale = params.scalar_density(k2.sqrt());
    let value = DMatrix::from_fn(d, d, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        scale * (delta - k[i] * k[j] / k2)
    });
    Ok(SpectralTensor { value })
}

/// `exp(-k^{2β} t)`.
pub fn time_correlation(params: &ModelParams, k_norm: f64, t: f64) -> f64 {
    debug_assert!(k_norm > 0.0 && t >= 0.0);
    (-params.decay_rate(k_norm) * t).exp()
}

/// Trace of `R̂` integrated over the sphere of radius `k_norm`, so that
/// `∫₀^K shell_energy(k) dk = E|V(0,0)|²`.
pub fn shell_energy(params: &ModelParams, k_norm: f64) -> f64 {
    if k_norm > params.cutoff {
        return 0.0;
    }
    let a = params.shape.eval(k_norm);
    if a == 0.0 {
        return 0.0;
    }
    shell_energy_constant(params.d) * a * k_norm.powf(params.radial_power())
}
