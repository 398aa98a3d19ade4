//! Ensemble statistics: mean-square displacement, scaling exponents, velocity
//! autocorrelation and diffusivity estimates with jackknife errors.
//!
//! Trajectories are independent while time samples within one trajectory are
//! not, so every error bar here comes from leaving out one trajectory at a time.

use crate::kubo::{DiffusivityKind, DiffusivityMatrix};
use crate::tracer::TrajectoryEnsemble;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least 2 trajectories, got {n}")]
    TooFewTrajectories { n: usize },
    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),
    #[error("Green-Kubo integral has not plateaued: {early:.6e} at half range vs {late:.6e} at full range (tolerance {tolerance:.3e})")]
    TailNotConverged { early: f64, late: f64, tolerance: f64 },
    #[error("cannot compare a {estimate:?} matrix with a {prediction:?} matrix")]
    KindMismatch { estimate: DiffusivityKind, prediction: DiffusivityKind },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Jackknife standard error of a mean over `n` samples given their sum and sum of squares.
fn mean_se(sum: f64, sum_sq: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (var / nf).sqrt()
}

/// Jackknife standard error from leave-one-out replicates.
pub fn jackknife_se(replicates: &[f64]) -> f64 {
    let n = replicates.len() as f64;
    let mean = replicates.iter().sum::<f64>() / n;
    ((n - 1.0) / n * replicates.iter().map(|r| (r - mean).powi(2)).sum::<f64>()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsdCurve {
    pub times: Vec<f64>,
    pub msd_trace: Vec<f64>,
    /// `n_samples × d × d`, row-major per sample.
    pub msd_matrix: Vec<f64>,
    /// Standard error of `msd_trace`.
    pub stderr: Vec<f64>,
    pub n_traj: usize,
    pub d: usize,
}

impl MsdCurve {
    pub fn matrix(&self, j: usize) -> DMatrix<f64> {
        let dd = self.d * self.d;
        DMatrix::from_row_slice(self.d, self.d, &self.msd_matrix[j * dd..(j + 1) * dd])
    }

    /// Noiseless curve `msd_trace = f(s)`, mainly for tests.
    pub fn synthetic(times: Vec<f64>, f: impl Fn(f64) -> f64) -> Self {
        let msd_trace: Vec<f64> = times.iter().map(|&s| f(s)).collect();
        let n = times.len();
        MsdCurve { msd_matrix: msd_trace.clone(), stderr: vec![0.0; n], times, msd_trace, n_traj: 0, d: 1 }
    }
}

/// `E[y_i(s) y_j(s)]` over the ensemble, relative to the initial positions.
pub fn msd(ens: &TrajectoryEnsemble) -> Result<MsdCurve, AnalysisError> {
    let n = ens.n_traj;
    if n < 2 {
        return Err(AnalysisError::TooFewTrajectories { n });
    }
    let d = ens.d;
    let ns = ens.n_samples();
    let dd = d * d;
    let mut sum = vec![0.0; ns * dd];
    let mut tr_sum = vec![0.0; ns];
    let mut tr_sq = vec![0.0; ns];
    for i in 0..n {
        let y0 = ens.position(i, 0);
        for j in 0..ns {
            let y = ens.position(i, j);
            let mut tr = 0.0;
            for a in 0..d {
                let da = y[a] - y0[a];
                tr += da * da;
                for b in 0..d {
                    sum[j * dd + a * d + b] += da * (y[b] - y0[b]);
                }
            }
            tr_sum[j] += tr;
            tr_sq[j] += tr * tr;
        }
    }
    let nf = n as f64;
    let msd_matrix: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let msd_trace = (0..ns).map(|j| (0..d).map(|a| msd_matrix[j * dd + a * d + a]).sum()).collect();
    let stderr = (0..ns).map(|j| mean_se(tr_sum[j], tr_sq[j], n)).collect();
    Ok(MsdCurve { times: ens.times.clone(), msd_trace, msd_matrix, stderr, n_traj: n, d })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    /// Last decade of the time range with the final 10% dropped.
    pub fn last_decade(t_max: f64) -> Self {
        Window { lo: 0.1 * t_max, hi: 0.9 * t_max }
    }

    fn indices(&self, times: &[f64]) -> Vec<usize> {
        times.iter().enumerate().filter(|(_, &t)| t >= self.lo && t <= self.hi && t > 0.0).map(|(j, _)| j).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub stderr: f64,
    pub window: Window,
    pub n_points: usize,
    /// Root-mean-square residual of the log-log fit.
    pub residual_rms: f64,
}

pub const MIN_FIT_POINTS: usize = 8;

/// Weighted line fit `y = a + b x`; returns `(a, b, se_b, rms residual)`.
fn wls(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let res: Vec<f64> = x.iter().zip(y).map(|(x, y)| y - a - b * x).collect();
    let rms = (res.iter().map(|r| r * r).sum::<f64>() / res.len() as f64).sqrt();
    (a, b, sxx.recip().sqrt(), rms)
}

struct Prepared {
    idx: Vec<usize>,
    x: Vec<f64>,
    w: Vec<f64>,
    weighted: bool,
}

fn prepare(curve: &MsdCurve, window: Window) -> Result<Prepared, AnalysisError> {
    if !(window.lo < window.hi) {
        return Err(AnalysisError::DegenerateWindow(format!("[{}, {}] is empty", window.lo, window.hi)));
    }
    let idx = window.indices(&curve.times);
    if idx.len() < MIN_FIT_POINTS {
        return Err(AnalysisError::DegenerateWindow(format!(
            "{} points in [{}, {}], need {MIN_FIT_POINTS}",
            idx.len(),
            window.lo,
            window.hi
        )));
    }
    if let Some(&j) = idx.iter().find(|&&j| !(curve.msd_trace[j] > 0.0)) {
        return Err(AnalysisError::DegenerateWindow(format!(
            "msd = {} at s = {} is not positive",
            curve.msd_trace[j], curve.times[j]
        )));
    }
    let weighted = idx.iter().all(|&j| curve.stderr[j] > 0.0);
    let w = idx
        .iter()
        .map(|&j| if weighted { (curve.msd_trace[j] / curve.stderr[j]).powi(2) } else { 1.0 })
        .collect();
    let x = idx.iter().map(|&j| curve.times[j].ln()).collect();
    Ok(Prepared { idx, x, w, weighted })
}

/// Weighted least squares of `ln msd_trace` against `ln s` inside `window`.
pub fn fit_exponent(curve: &MsdCurve, window: Window) -> Result<ExponentFit, AnalysisError> {
    let p = prepare(curve, window)?;
    let y: Vec<f64> = p.idx.iter().map(|&j| curve.msd_trace[j].ln()).collect();
    let (a, b, se, rms) = wls(&p.x, &y, &p.w);
    let stderr = if p.weighted {
        se
    } else {
        let dof = (p.idx.len() - 2) as f64;
        se * rms * (p.idx.len() as f64 / dof).sqrt()
    };
    Ok(ExponentFit { exponent: b, prefactor: a.exp(), stderr, window, n_points: p.idx.len(), residual_rms: rms })
}

/// As [`fit_exponent`] but with a leave-one-trajectory-out error bar, which accounts
/// for the correlation between time samples.
pub fn fit_exponent_jackknife(ens: &TrajectoryEnsemble, window: Window) -> Result<ExponentFit, AnalysisError> {
    let curve = msd(ens)?;
    let mut fit = fit_exponent(&curve, window)?;
    let p = prepare(&curve, window)?;
    let n = ens.n_traj;
    let total: Vec<f64> = p.idx.iter().map(|&j| curve.msd_trace[j] * n as f64).collect();
    let reps: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y0 = ens.position(i, 0);
            let y: Vec<f64> = p
                .idx
                .iter()
                .zip(&total)
                .map(|(&j, tot)| {
                    let r2: f64 = ens.position(i, j).iter().zip(y0).map(|(a, b)| (a - b) * (a - b)).sum();
                    ((tot - r2) / (n - 1) as f64).max(f64::MIN_POSITIVE).ln()
                })
                .collect();
            wls(&p.x, &y, &p.w).1
        })
        .collect();
    fit.stderr = jackknife_se(&reps);
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    MsdSlope,
    GreenKubo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusivityEstimate {
    pub matrix: DMatrix<f64>,
    /// Per-entry 95% half-width.
    pub ci95: DMatrix<f64>,
    pub method: EstimateMethod,
    pub kind: DiffusivityKind,
}

impl DiffusivityEstimate {
    pub fn stderr(&self) -> DMatrix<f64> {
        self.ci95.map(|c| c / Z_95)
    }

    fn from_replicates(per_traj: &[Vec<f64>], d: usize, method: EstimateMethod) -> Self {
        let n = per_traj.len();
        let dd = d * d;
        let mut sum = vec![0.0; dd];
        let mut sq = vec![0.0; dd];
        for r in per_traj {
            for e in 0..dd {
                sum[e] += r[e];
                sq[e] += r[e] * r[e];
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let se: Vec<f64> = (0..dd).map(|e| mean_se(sum[e], sq[e], n)).collect();
        let mut m = DMatrix::from_row_slice(d, d, &mean);
        let mut c = DMatrix::from_row_slice(d, d, &se).map(|s| s * Z_95);
        // symmetrize; entries (i,j) and (j,i) estimate the same quantity
        m = (&m + m.transpose()) * 0.5;
        c = (&c + c.transpose()) * 0.5;
        DiffusivityEstimate { matrix: m, ci95: c, method, kind: DiffusivityKind::Covariance }
    }
}

/// Late-time slope of the mean-square displacement.
///
/// For each trajectory the displacement matrix `(y(s+L)-y(s)) ⊗ (y(s+L)-y(s))` is
/// averaged over all time origins `s`, and a least-squares line in the lag `L`
/// is fitted over `lags`. Its slope estimates the covariance rate of the limit.
pub fn msd_slope_estimate(ens: &TrajectoryEnsemble, lags: Window) -> Result<DiffusivityEstimate, AnalysisError> {
    let n = ens.n_traj;
    if n < 2 {
        return Err(AnalysisError::TooFewTrajectories { n });
    }
    let ns = ens.n_samples();
    let h = ens.times[1] - ens.times[0];
    let lag_idx: Vec<usize> = (1..ns).filter(|&l| (l as f64 * h) >= lags.lo && (l as f64 * h) <= lags.hi).collect();
    if lag_idx.len() < 2 {
        return Err(AnalysisError::DegenerateWindow(format!(
            "{} lags in [{}, {}]",
            lag_idx.len(),
            lags.lo,
            lags.hi
        )));
    }
    let d = ens.d;
    let dd = d * d;
    let ls: Vec<f64> = lag_idx.iter().map(|&l| l as f64 * h).collect();
    let ml = ls.iter().sum::<f64>() / ls.len() as f64;
    let sll: f64 = ls.iter().map(|l| (l - ml).powi(2)).sum();
    let per_traj: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let traj = ens.trajectory(i);
            let mut slope = vec![0.0; dd];
            let mut m = vec![0.0; dd];
            for (&l, &lv) in lag_idx.iter().zip(&ls) {
                m.iter_mut().for_each(|x| *x = 0.0);
                for s in 0..ns - l {
                    let (a, b) = (&traj[s * d..(s + 1) * d], &traj[(s + l) * d..(s + l + 1) * d]);
                    for p in 0..d {
                        let dp = b[p] - a[p];
                        for q in 0..d {
                            m[p * d + q] += dp * (b[q] - a[q]);
                        }
                    }
                }
                let c = (lv - ml) / sll / (ns - l) as f64;
                for e in 0..dd {
                    slope[e] += c * m[e];
                }
            }
            slope
        })
        .collect();
    Ok(DiffusivityEstimate::from_replicates(&per_traj, d, EstimateMethod::MsdSlope))
}

/// Time-origin averaged Lagrangian velocity correlation `C_ij(L) = E[v_i(s+L) v_j(s)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VacfCurve {
    pub lags: Vec<f64>,
    /// Trace `E[v(s+L)·v(s)]`.
    pub vacf: Vec<f64>,
    pub stderr: Vec<f64>,
    pub d: usize,
    /// `n_traj × n_lags × d × d`.
    pub samples: Vec<f64>,
    pub n_traj: usize,
}

impl VacfCurve {
    pub fn n_lags(&self) -> usize {
        self.lags.len()
    }

    pub fn from_samples(lags: Vec<f64>, samples: Vec<f64>, n_traj: usize, d: usize) -> Self {
        let nl = lags.len();
        let dd = d * d;
        assert_eq!(samples.len(), n_traj * nl * dd);
        let mut vacf = vec![0.0; nl];
        let mut stderr = vec![0.0; nl];
        for l in 0..nl {
            let (mut s, mut q) = (0.0, 0.0);
            for i in 0..n_traj {
                let base = (i * nl + l) * dd;
                let tr: f64 = (0..d).map(|a| samples[base + a * d + a]).sum();
                s += tr;
                q += tr * tr;
            }
            vacf[l] = s / n_traj as f64;
            stderr[l] = if n_traj > 1 { mean_se(s, q, n_traj) } else { 0.0 };
        }
        VacfCurve { lags, vacf, stderr, d, samples, n_traj }
    }
}

/// Velocity autocorrelation from `velocities` (`n_traj × n_samples × d`, e.g. from
/// `tracer::replay_velocities`) up to `max_lag` sample intervals.
pub fn lagrangian_vacf(ens: &TrajectoryEnsemble, velocities: &[f64], max_lag: usize) -> Result<VacfCurve, AnalysisError> {
    let n = ens.n_traj;
    if n < 2 {
        return Err(AnalysisError::TooFewTrajectories { n });
    }
    let d = ens.d;
    let ns = ens.n_samples();
    if velocities.len() != n * ns * d {
        return Err(AnalysisError::DimensionMismatch(format!(
            "{} velocity components for {n} × {ns} × {d}",
            velocities.len()
        )));
    }
    let nl = max_lag.min(ns - 1) + 1;
    let dd = d * d;
    let per: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let v = &velocities[i * ns * d..(i + 1) * ns * d];
            let mut out = vec![0.0; nl * dd];
            for l in 0..nl {
                let m = &mut out[l * dd..(l + 1) * dd];
                for s in 0..ns - l {
                    let (a, b) = (&v[s * d..(s + 1) * d], &v[(s + l) * d..(s + l + 1) * d]);
                    for p in 0..d {
                        for q in 0..d {
                            m[p * d + q] += b[p] * a[q];
                        }
                    }
                }
                let inv = 1.0 / (ns - l) as f64;
                m.iter_mut().for_each(|x| *x *= inv);
            }
            out
        })
        .collect();
    let h = ens.times[1] - ens.times[0];
    let lags = (0..nl).map(|l| l as f64 * h).collect();
    Ok(VacfCurve::from_samples(lags, per.concat(), n, d))
}

/// Trapezoid integral of `C + Cᵀ` over the lag range, reported as a covariance rate.
///
/// Fails with `TailNotConverged` when the trace of the running integral still moves
/// between three quarters of the range and the full range by more than
/// `max(1e-4 |I|, 3 se)`.
pub fn green_kubo(curve: &VacfCurve) -> Result<DiffusivityEstimate, AnalysisError> {
    let nl = curve.n_lags();
    if nl < 2 {
        return Err(AnalysisError::DegenerateWindow("need at least two lags".into()));
    }
    let d = curve.d;
    let dd = d * d;
    let cut = (3 * (nl - 1)) / 4;
    let integrate = |c: &[f64], upto: usize| -> Vec<f64> {
        let mut acc = vec![0.0; dd];
        for l in 0..upto {
            let h = curve.lags[l + 1] - curve.lags[l];
            for e in 0..dd {
                acc[e] += 0.5 * h * (c[l * dd + e] + c[(l + 1) * dd + e]);
            }
        }
        // symmetric part times two
        let mut out = vec![0.0; dd];
        for p in 0..d {
            for q in 0..d {
                out[p * d + q] = acc[p * d + q] + acc[q * d + p];
            }
        }
        out
    };
    let n = curve.n_traj;
    let chunk = nl * dd;
    let per: Vec<Vec<f64>> = (0..n).map(|i| integrate(&curve.samples[i * chunk..(i + 1) * chunk], nl - 1)).collect();
    let early: Vec<Vec<f64>> = (0..n).map(|i| integrate(&curve.samples[i * chunk..(i + 1) * chunk], cut)).collect();
    let trace = |v: &[f64]| (0..d).map(|a| v[a * d + a]).sum::<f64>();
    let diffs: Vec<f64> = per.iter().zip(&early).map(|(a, b)| trace(a) - trace(b)).collect();
    let late_mean = per.iter().map(|v| trace(v)).sum::<f64>() / n as f64;
    let early_mean = early.iter().map(|v| trace(v)).sum::<f64>() / n as f64;
    let se_diff = if n > 1 {
        mean_se(diffs.iter().sum(), diffs.iter().map(|x| x * x).sum(), n)
    } else {
        0.0
    };
    let tolerance = (1e-4 * late_mean.abs()).max(3.0 * se_diff);
    if (late_mean - early_mean).abs() > tolerance {
        return Err(AnalysisError::TailNotConverged { early: early_mean, late: late_mean, tolerance });
    }
    if n < 2 {
        let m = DMatrix::from_row_slice(d, d, &per[0]);
        return Ok(DiffusivityEstimate {
            ci95: DMatrix::zeros(d, d),
            matrix: m,
            method: EstimateMethod::GreenKubo,
            kind: DiffusivityKind::Covariance,
        });
    }
    Ok(DiffusivityEstimate::from_replicates(&per, d, EstimateMethod::GreenKubo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub z: DMatrix<f64>,
    pub max_abs_z: f64,
    /// `max_ij |estimate - prediction| / max_ij |prediction|`.
    pub relative_deviation: f64,
    pub pass: bool,
}

pub fn relative_deviation(estimate: &DMatrix<f64>, prediction: &DMatrix<f64>) -> f64 {
    let scale = prediction.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let dev = (estimate - prediction).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale > 0.0 {
        dev / scale
    } else if dev == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Per-entry z-scores of `estimate` against `prediction`; passes iff every `|z| ≤ 3`.
pub fn compare(estimate: &DiffusivityEstimate, prediction: &DiffusivityMatrix) -> Result<CompareReport, AnalysisError> {
    if estimate.kind != prediction.kind {
        return Err(AnalysisError::KindMismatch { estimate: estimate.kind, prediction: prediction.kind });
    }
    if estimate.matrix.shape() != prediction.value.shape() {
        return Err(AnalysisError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            estimate.matrix.shape(),
            prediction.value.shape()
        )));
    }
    let se = estimate.stderr();
    let z = DMatrix::from_fn(se.nrows(), se.ncols(), |i, j| {
        let diff = estimate.matrix[(i, j)] - prediction.value[(i, j)];
        let s = (se[(i, j)].powi(2) + prediction.abs_error_estimate.powi(2)).sqrt();
        if diff == 0.0 {
            0.0
        } else if s > 0.0 {
            diff / s
        } else {
            diff.signum() * f64::INFINITY
        }
    });
    let max_abs_z = z.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(CompareReport {
        relative_deviation: relative_deviation(&estimate.matrix, &prediction.value),
        pass: max_abs_z <= 3.0,
        z,
        max_abs_z,
    })
}
