//! Statistical checks of a synthesized field against its continuum description.
//!
//! Every realization draws a fresh mode set and stationary state, so ensemble
//! averages target the continuum correlations rather than those of one mode set.

use crate::field::{evaluate, init_state, FieldError, FieldState, ModeConfig, ModeSet, ShellTable};
use crate::kubo::{eulerian_correlation, spatial_correlation_2d, KuboError};
use crate::rng::{split_seed, tag};
use crate::spectrum::ModelParams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const Z_PASS: f64 = 3.0;
pub const DIVERGENCE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("{0}")]
    Field(#[from] FieldError),
    #[error("{0}")]
    Kubo(#[from] KuboError),
    #[error("invalid validation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub estimate: f64,
    pub target: f64,
    pub z: f64,
    pub pass: bool,
}

impl CheckResult {
    fn z_check(name: impl Into<String>, estimate: f64, target: f64, se: f64) -> Self {
        let diff = estimate - target;
        let z = if diff == 0.0 { 0.0 } else if se > 0.0 { diff / se } else { f64::INFINITY };
        CheckResult { name: name.into(), estimate, target, z, pass: z.abs() <= Z_PASS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub n_realizations: usize,
    pub times: Vec<f64>,
    pub stationarity_time: f64,
    pub ou_steps: usize,
    pub ou_dt: f64,
    pub ou_lags: Vec<usize>,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            n_realizations: 10_000,
            times: vec![0.0, 0.5, 1.0, 2.0],
            stationarity_time: 10.0,
            ou_steps: 100_000,
            ou_dt: 0.1,
            ou_lags: vec![1, 2, 5, 10, 20],
            seed: 0,
        }
    }
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct Record {
    /// `v(t_m, 0)` for every configured time, `d` each.
    at_times: Vec<f64>,
    late: Vec<f64>,
    shifted: Vec<f64>,
    spatial: Vec<f64>,
    cond_var: Vec<f64>,
    divergence: f64,
    amp_m2: f64,
    amp_m4: f64,
    amp_n: usize,
}

fn amplitude_moments(modes: &ModeSet, s: &FieldState) -> (f64, f64, usize) {
    let np = modes.dim() - 1;
    let (mut m2, mut m4) = (0.0, 0.0);
    for (m, mode) in modes.modes().enumerate() {
        for p in 0..np {
            for a in [s.xi[m * np + p], s.eta[m * np + p]] {
                let z2 = (a / mode.sigma).powi(2);
                m2 += z2;
                m4 += z2 * z2;
            }
        }
    }
    (m2, m4, 2 * np * modes.len())
}

fn realization(table: &ShellTable, cfg: &ValidationConfig, r: usize) -> Result<Record, FieldError> {
    let modes = table.sample(split_seed(cfg.seed, r as u64, tag::MODES))?;
    let d = modes.dim();
    let mut s = init_state(&modes, split_seed(cfg.seed, r as u64, tag::FIELD));
    let origin = vec![0.0; d];
    let (amp_m2, amp_m4, amp_n) = amplitude_moments(&modes, &s);
    let mut shift_rng = split_seed(cfg.seed, r as u64, tag::VALIDATION);
    let shift: Vec<f64> = (0..d)
        .map(|_| {
            shift_rng = split_seed(shift_rng, 1, tag::VALIDATION);
            100.0 * (crate::rng::unit(shift_rng) - 0.5)
        })
        .collect();
    let shifted = evaluate(&modes, &s, &shift)?;
    let mut spatial_x = vec![0.0; d];
    spatial_x[0] = 0.3;
    let spatial = evaluate(&modes, &s, &spatial_x)?;
    let cov = modes.covariance(0.0);
    let cond_var = (0..d).map(|i| cov[(i, i)]).collect();
    let mut divergence = modes.max_divergence(&s);
    let mut at_times = Vec::with_capacity(d * cfg.times.len());
    let mut t = 0.0;
    for &tm in &cfg.times {
        s.advance(&modes, tm - t);
        t = tm;
        at_times.extend(evaluate(&modes, &s, &origin)?);
        divergence = divergence.max(modes.max_divergence(&s));
    }
    s.advance(&modes, cfg.stationarity_time - t);
    let late = evaluate(&modes, &s, &origin)?;
    divergence = divergence.max(modes.max_divergence(&s));
    Ok(Record { at_times, late, shifted, spatial, cond_var, divergence, amp_m2, amp_m4, amp_n })
}

/// Lag-`h` sample autocorrelation of `x`.
pub fn autocorrelation(x: &[f64], h: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let ch: f64 = (0..n - h).map(|t| (x[t] - mean) * (x[t + h] - mean)).sum();
    ch / c0
}

/// Bartlett variance of the lag-`h` sample autocorrelation of an AR(1) series with coefficient `phi`.
pub fn bartlett_variance_ar1(phi: f64, h: usize, n: usize) -> f64 {
    let p2 = phi * phi;
    let p2h = p2.powi(h as i32);
    ((1.0 + p2) * (1.0 - p2h) / (1.0 - p2) - 2.0 * h as f64 * p2h) / n as f64
}

/// Exact-transition OU series of one mode, lag autocorrelations against `exp(-|k|^{2β} τ)`.
pub fn ou_autocorrelation_checks(params: &ModelParams, k: f64, cfg: &ValidationConfig) -> Result<Vec<CheckResult>, ValidationError> {
    let mut kv = vec![0.0; params.d];
    kv[0] = k;
    let modes = ModeSet::from_wavevectors(params, kv, vec![1.0], 0)?;
    let mut s = init_state(&modes, split_seed(cfg.seed, 0, tag::VALIDATION));
    let mut series = Vec::with_capacity(cfg.ou_steps);
    for _ in 0..cfg.ou_steps {
        series.push(s.xi[0]);
        s.advance(&modes, cfg.ou_dt);
    }
    let rate = params.decay_rate(k);
    let phi = (-rate * cfg.ou_dt).exp();
    Ok(cfg
        .ou_lags
        .iter()
        .map(|&h| {
            let target = (-rate * cfg.ou_dt * h as f64).exp();
            let se = bartlett_variance_ar1(phi, h, series.len()).sqrt();
            CheckResult::z_check(format!("ou_autocorrelation_lag_{}", h as f64 * cfg.ou_dt), autocorrelation(&series, h), target, se)
        })
        .collect())
}

/// Divergence, Eulerian correlation, stationarity, isotropy, homogeneity and Gaussianity.
pub fn field_checks(params: &ModelParams, mode_cfg: ModeConfig, cfg: &ValidationConfig) -> Result<Vec<CheckResult>, ValidationError> {
    if cfg.n_realizations < 2 {
        return Err(ValidationError::InvalidConfig("n_realizations must be >= 2".into()));
    }
    if cfg.times.windows(2).any(|w| w[1] < w[0]) || cfg.times.first().is_some_and(|&t| t < 0.0) {
        return Err(ValidationError::InvalidConfig("times must be nonnegative and nondecreasing".into()));
    }
    if cfg.times.last().is_some_and(|&t| cfg.stationarity_time < t) {
        return Err(ValidationError::InvalidConfig("stationarity_time must not precede the last time".into()));
    }
    let table = ShellTable::new(params, mode_cfg)?;
    let d = params.d;
    let recs = (0..cfg.n_realizations)
        .into_par_iter()
        .map(|r| realization(&table, cfg, r))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();

    let div = recs.iter().fold(0.0f64, |m, r| m.max(r.divergence));
    out.push(CheckResult { name: "divergence".into(), estimate: div, target: 0.0, z: 0.0, pass: div <= DIVERGENCE_TOL });

    // component-averaged v_i(t,0) v_i(0,0)
    for (m, &t) in cfg.times.iter().enumerate() {
        let target = eulerian_correlation(params, t)?.value[(0, 0)];
        let xs = recs.iter().map(|r| (0..d).map(|i| r.at_times[m * d + i] * r.at_times[i]).sum::<f64>() / d as f64);
        let (mean, se) = mean_se(xs);
        out.push(CheckResult::z_check(format!("eulerian_correlation_t_{t}"), mean, target, se));
    }

    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / d as f64;
    let (m, se) = mean_se(recs.iter().map(|r| sq(&r.late) - sq(&r.at_times[..d])));
    out.push(CheckResult::z_check(format!("stationarity_t_{}", cfg.stationarity_time), m, 0.0, se));
    let (m, se) = mean_se(recs.iter().map(|r| sq(&r.shifted) - sq(&r.at_times[..d])));
    out.push(CheckResult::z_check("homogeneity", m, 0.0, se));

    for i in 0..d {
        for j in i + 1..d {
            let (m, se) = mean_se(recs.iter().map(|r| r.at_times[i] * r.at_times[j]));
            out.push(CheckResult::z_check(format!("isotropy_offdiag_{}{}", i + 1, j + 1), m, 0.0, se));
        }
        if i > 0 {
            let (m, se) = mean_se(recs.iter().map(|r| r.at_times[i].powi(2) - r.at_times[0].powi(2)));
            out.push(CheckResult::z_check(format!("isotropy_diag_{}1", i + 1), m, 0.0, se));
        }
    }

    if d == 2 {
        let target = spatial_correlation_2d(params, 0.0, [0.3, 0.0])?;
        for i in 0..2 {
            let (m, se) = mean_se(recs.iter().map(|r| r.spatial[i] * r.at_times[i]));
            out.push(CheckResult::z_check(format!("spatial_correlation_{}{}", i + 1, i + 1), m, target[(i, i)], se));
        }
    }

    // pooled standardized velocity components, conditional on each mode set
    let zs: Vec<f64> = recs.iter().flat_map(|r| (0..d).map(move |i| r.at_times[i] / r.cond_var[i].sqrt())).collect();
    let n = zs.len() as f64;
    let m2 = zs.iter().map(|z| z * z).sum::<f64>() / n;
    let m4 = zs.iter().map(|z| z.powi(4)).sum::<f64>() / n;
    out.push(CheckResult::z_check("velocity_excess_kurtosis", m4 / (m2 * m2) - 3.0, 0.0, (24.0 / n).sqrt()));
    let (a2, a4, an) = recs.iter().fold((0.0, 0.0, 0usize), |(a, b, c), r| (a + r.amp_m2, b + r.amp_m4, c + r.amp_n));
    let an = an as f64;
    out.push(CheckResult::z_check("amplitude_variance", a2 / an, 1.0, (2.0 / an).sqrt()));
    out.push(CheckResult::z_check("amplitude_excess_kurtosis", (a4 / an) / (a2 / an).powi(2) - 3.0, 0.0, (24.0 / an).sqrt()));
    Ok(out)
}
