//! Passive tracer integration in microscopic variables.
//!
//! With `x(t) = ε y(t/ε²)` the scaled equation `dx/dt = ε⁻¹ V(t/ε², x)` becomes
//! `dy/ds = V(s, ε y)`. The factor `ε` is [`IntegrationConfig::coupling`]; at
//! `coupling = 1` the tracer follows the unscaled field.

use crate::field::{FieldError, FieldState, ModeConfig, ModeSet, ShellTable};
use crate::kubo::{velocity_variance, KuboError};
use crate::rng::{split_seed, tag};
use crate::spectrum::ModelParams;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TracerError {
    #[error("invalid integration config: {0}")]
    InvalidConfig(String),
    #[error("step {step}: displacement {displacement:.3e} exceeds bound {bound:.3e}; dt is too coarse")]
    StepOverflow { step: u64, displacement: f64, bound: f64 },
    #[error("trajectory {index}: {source}")]
    Trajectory { index: usize, source: Box<TracerError> },
    #[error("velocities cannot be replayed: {0}")]
    ReplayUnavailable(String),
    #[error("{0}")]
    Field(#[from] FieldError),
    #[error("{0}")]
    Kubo(#[from] KuboError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    Heun,
}

fn one() -> f64 {
    1.0
}

fn rk4() -> Method {
    Method::Rk4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_final: f64,
    pub sample_every: usize,
    #[serde(default = "rk4")]
    pub method: Method,
    #[serde(default = "one")]
    pub coupling: f64,
    /// Keep the amplitudes fixed at their initial values.
    #[serde(default)]
    pub freeze_field: bool,
    /// Largest allowed `coupling |v| dt` per step; defaults to the finest wavelength `2π/K`.
    #[serde(default)]
    pub max_step_displacement: Option<f64>,
}

impl IntegrationConfig {
    pub fn new(dt: f64, t_final: f64, sample_every: usize) -> Self {
        IntegrationConfig {
            dt,
            t_final,
            sample_every,
            method: Method::Rk4,
            coupling: 1.0,
            freeze_field: false,
            max_step_displacement: None,
        }
    }

    pub fn validate(&self) -> Result<(), TracerError> {
        let bad = |m: String| Err(TracerError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt = {} must be positive", self.dt));
        }
        if !(self.t_final >= self.dt && self.t_final.is_finite()) {
            return bad(format!("t_final = {} must be >= dt = {}", self.t_final, self.dt));
        }
        if self.sample_every < 1 {
            return bad("sample_every must be >= 1".into());
        }
        if !(self.coupling > 0.0 && self.coupling.is_finite()) {
            return bad(format!("coupling = {} must be positive", self.coupling));
        }
        if let Some(b) = self.max_step_displacement {
            if !(b > 0.0) {
                return bad(format!("max_step_displacement = {b} must be positive"));
            }
        }
        Ok(())
    }

    /// Number of `dt` steps, rounded to the nearest whole number of sample intervals.
    pub fn n_steps(&self) -> u64 {
        let m = self.sample_every as f64;
        ((self.t_final / (self.dt * m)).round().max(1.0) * m) as u64
    }

    pub fn n_samples(&self) -> usize {
        (self.n_steps() / self.sample_every as u64) as usize + 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples()).map(|j| (j * self.sample_every) as f64 * self.dt).collect()
    }
}

/// `0.1 min(1/(coupling K v_rms), K^{-2β})`.
pub fn default_dt(params: &ModelParams, coupling: f64) -> Result<f64, TracerError> {
    let v_rms = velocity_variance(params)?.sqrt();
    let sweep = if v_rms > 0.0 { 1.0 / (coupling * params.cutoff * v_rms) } else { f64::INFINITY };
    Ok(0.1 * sweep.min(1.0 / params.decay_rate(params.cutoff)))
}

/// Sampled positions of one trajectory, `n_samples × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub d: usize,
    pub positions: Vec<f64>,
}

impl Trajectory {
    pub fn position(&self, j: usize) -> &[f64] {
        &self.positions[j * self.d..(j + 1) * self.d]
    }

    pub fn n_samples(&self) -> usize {
        self.positions.len() / self.d
    }
}

/// Fixed-size scratch for one integration; avoids per-step allocation.
struct Work {
    y: Vec<f64>,
    probe: Vec<f64>,
    tmp: Vec<f64>,
    mid_xi: Vec<f64>,
    mid_eta: Vec<f64>,
    k: [Vec<f64>; 4],
}

impl Work {
    fn new(d: usize) -> Self {
        Work {
            y: vec![0.0; d],
            probe: vec![0.0; d],
            tmp: vec![0.0; d],
            mid_xi: Vec::new(),
            mid_eta: Vec::new(),
            k: std::array::from_fn(|_| vec![0.0; d]),
        }
    }
}

fn eval_at(modes: &ModeSet, s: &FieldState, c: f64, y: &[f64], probe: &mut [f64], out: &mut [f64]) {
    for (p, yi) in probe.iter_mut().zip(y) {
        *p = c * yi;
    }
    modes.velocity_into(s, probe, out);
}

fn eval_mid(modes: &ModeSet, xi: &[f64], eta: &[f64], c: f64, y: &[f64], probe: &mut [f64], out: &mut [f64]) {
    for (p, yi) in probe.iter_mut().zip(y) {
        *p = c * yi;
    }
    modes.velocity_from_amplitudes(xi, eta, probe, out);
}

/// Advances the tracer one step. `s0` is the field at the step start and is left at `t + dt`.
fn step(modes: &ModeSet, s0: &mut FieldState, cfg: &IntegrationConfig, w: &mut Work) {
    let dt = cfg.dt;
    let c = cfg.coupling;
    let d = w.y.len();
    let Work { y, probe, tmp, mid_xi, mid_eta, k } = w;
    let [k1, k2, k3, k4] = k;
    eval_at(modes, s0, c, y, probe, k1);
    if !cfg.freeze_field {
        s0.advance(modes, 0.5 * dt);
    }
    mid_xi.clone_from(&s0.xi);
    mid_eta.clone_from(&s0.eta);
    if !cfg.freeze_field {
        s0.advance(modes, 0.5 * dt);
    }
    match cfg.method {
        Method::Rk4 => {
            let stage = |k: &[f64], h: f64, out: &mut [f64]| {
                for i in 0..d {
                    out[i] = y[i] + h * k[i];
                }
            };
            stage(k1, 0.5 * dt, tmp);
            eval_mid(modes, mid_xi, mid_eta, c, tmp, probe, k2);
            stage(k2, 0.5 * dt, tmp);
            eval_mid(modes, mid_xi, mid_eta, c, tmp, probe, k3);
            stage(k3, dt, tmp);
            eval_at(modes, s0, c, tmp, probe, k4);
            for i in 0..d {
                y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        Method::Heun => {
            for i in 0..d {
                tmp[i] = y[i] + dt * k1[i];
            }
            eval_at(modes, s0, c, tmp, probe, k2);
            for i in 0..d {
                y[i] += 0.5 * dt * (k1[i] + k2[i]);
            }
        }
    }
}

fn displacement_bound(modes: &ModeSet, cfg: &IntegrationConfig) -> f64 {
    cfg.max_step_displacement.unwrap_or(2.0 * std::f64::consts::PI / modes.params().cutoff)
}

/// Integrates `dy/ds = V(s, coupling·y)` from `x0`, recording every `sample_every`-th step.
pub fn integrate_one(modes: &ModeSet, state0: &FieldState, x0: &[f64], cfg: &IntegrationConfig) -> Result<Trajectory, TracerError> {
    cfg.validate()?;
    let d = modes.dim();
    if x0.len() != d {
        return Err(FieldError::DimensionMismatch { expected: d, got: x0.len() }.into());
    }
    if state0.modes_digest() != modes.digest() {
        return Err(FieldError::ModeSetMismatch { modes: modes.digest(), state: state0.modes_digest() }.into());
    }
    let bound = displacement_bound(modes, cfg);
    let n_steps = cfg.n_steps();
    let mut positions = Vec::with_capacity(cfg.n_samples() * d);
    positions.extend_from_slice(x0);
    let mut w = Work::new(d);
    w.y.copy_from_slice(x0);
    let mut s = state0.clone();
    for n in 1..=n_steps {
        step(modes, &mut s, cfg, &mut w);
        let disp = cfg.coupling * cfg.dt * w.k[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        if disp > bound || !w.y.iter().all(|x| x.is_finite()) {
            return Err(TracerError::StepOverflow { step: n, displacement: disp, bound });
        }
        if n % cfg.sample_every as u64 == 0 {
            positions.extend_from_slice(&w.y);
        }
    }
    Ok(Trajectory { d, positions })
}

/// Integrates `dy/ds = ±V(y)` in a field held at `state`, with signed step `h`.
pub fn integrate_frozen(modes: &ModeSet, state: &FieldState, x0: &[f64], h: f64, n_steps: usize, coupling: f64) -> Vec<f64> {
    let d = modes.dim();
    let mut w = Work::new(d);
    w.y.copy_from_slice(x0);
    let cfg = IntegrationConfig {
        dt: h,
        t_final: 0.0,
        sample_every: 1,
        method: Method::Rk4,
        coupling,
        freeze_field: true,
        max_step_displacement: None,
    };
    let mut s = state.clone();
    for _ in 0..n_steps {
        step(modes, &mut s, &cfg, &mut w);
    }
    w.y
}

/// Seeds of trajectory `index` under `master`: `(mode set, field stream)`.
pub fn trajectory_seeds(master: u64, index: usize) -> (u64, u64) {
    (split_seed(master, index as u64, tag::MODES), split_seed(master, index as u64, tag::FIELD))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub times: Vec<f64>,
    /// `n_traj × n_samples × d`.
    pub positions: Vec<f64>,
    pub n_traj: usize,
    pub d: usize,
    pub params: ModelParams,
    pub integration: IntegrationConfig,
    pub mode_config: ModeConfig,
    pub master_seed: u64,
    /// `(mode seed, field seed)` per trajectory; `None` when the ensemble was built from raw data.
    pub seeds: Option<Vec<(u64, u64)>>,
}

impl TrajectoryEnsemble {
    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    pub fn position(&self, traj: usize, sample: usize) -> &[f64] {
        let base = (traj * self.n_samples() + sample) * self.d;
        &self.positions[base..base + self.d]
    }

    pub fn trajectory(&self, traj: usize) -> &[f64] {
        let len = self.n_samples() * self.d;
        &self.positions[traj * len..(traj + 1) * len]
    }

    /// Ensemble from externally generated paths; velocities cannot be replayed.
    pub fn from_positions(times: Vec<f64>, positions: Vec<f64>, n_traj: usize, d: usize, params: ModelParams) -> Self {
        assert_eq!(positions.len(), n_traj * times.len() * d);
        let dt = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        TrajectoryEnsemble {
            integration: IntegrationConfig::new(dt, dt * (times.len().max(2) - 1) as f64, 1),
            times,
            positions,
            n_traj,
            d,
            params,
            mode_config: ModeConfig::new(1, 1, crate::field::DEFAULT_K_MIN_RATIO),
            master_seed: 0,
            seeds: None,
        }
    }
}

/// Mode set and initial field state of one ensemble member.
pub fn member(table: &ShellTable, master: u64, index: usize) -> Result<(ModeSet, FieldState), TracerError> {
    let (ms, fs) = trajectory_seeds(master, index);
    let modes = table.sample(ms)?;
    let state = crate::field::init_state(&modes, fs);
    Ok((modes, state))
}

pub fn run_ensemble(
    params: &ModelParams,
    mode_cfg: ModeConfig,
    cfg: &IntegrationConfig,
    n_traj: usize,
    master_seed: u64,
) -> Result<TrajectoryEnsemble, TracerError> {
    cfg.validate()?;
    if n_traj < 1 {
        return Err(TracerError::InvalidConfig("n_traj must be >= 1".into()));
    }
    let table = ShellTable::new(params, mode_cfg)?;
    let x0 = vec![0.0; params.d];
    let runs: Vec<Result<Trajectory, TracerError>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let (modes, state) = member(&table, master_seed, i)?;
            integrate_one(&modes, &state, &x0, cfg)
        })
        .collect();
    let mut positions = Vec::with_capacity(n_traj * cfg.n_samples() * params.d);
    for (index, r) in runs.into_iter().enumerate() {
        let t = r.map_err(|e| TracerError::Trajectory { index, source: Box::new(e) })?;
        positions.extend_from_slice(&t.positions);
    }
    Ok(TrajectoryEnsemble {
        times: cfg.times(),
        positions,
        n_traj,
        d: params.d,
        params: params.clone(),
        integration: *cfg,
        mode_config: mode_cfg,
        master_seed,
        seeds: Some((0..n_traj).map(|i| trajectory_seeds(master_seed, i)).collect()),
    })
}

/// Recomputes `V(s_j, coupling·y(s_j))` along every stored trajectory by replaying
/// its mode set and field stream. Output is `n_traj × n_samples × d`.
pub fn replay_velocities(ens: &TrajectoryEnsemble) -> Result<Vec<f64>, TracerError> {
    if ens.seeds.is_none() {
        return Err(TracerError::ReplayUnavailable("ensemble carries no seeds".into()));
    }
    let table = ShellTable::new(&ens.params, ens.mode_config)?;
    let cfg = ens.integration;
    let d = ens.d;
    let ns = ens.n_samples();
    let per: Vec<Result<Vec<f64>, TracerError>> = (0..ens.n_traj)
        .into_par_iter()
        .map(|i| {
            let (modes, mut s) = member(&table, ens.master_seed, i)?;
            let mut out = vec![0.0; ns * d];
            let mut probe = vec![0.0; d];
            let traj = ens.trajectory(i);
            for j in 0..ns {
                if j > 0 && !cfg.freeze_field {
                    for _ in 0..cfg.sample_every {
                        s.advance(&modes, 0.5 * cfg.dt);
                        s.advance(&modes, 0.5 * cfg.dt);
                    }
                }
                eval_at(&modes, &s, cfg.coupling, &traj[j * d..(j + 1) * d], &mut probe, &mut out[j * d..(j + 1) * d]);
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::with_capacity(ens.n_traj * ns * d);
    for r in per {
        all.extend(r?);
    }
    Ok(all)
}
