//! Finite-mode synthesis of the Markov Gaussian velocity field.
//!
//! The field is a sum over sampled wavevectors,
//!
//! ```text
//! v(t, x) = Σ_m √w_m [cos(k_m·x) B_m ξ_m(t) + sin(k_m·x) B_m η_m(t)]
//! ```
//!
//! where `B_m` is an orthonormal basis of `k_m⊥` (so every mode is exactly
//! divergence free) and each component of `ξ_m`, `η_m` is a stationary
//! Ornstein-Uhlenbeck process with rate `|k_m|^{2β}` and variance
//! `a(|k_m|) |k_m|^{-(2α+d-2)}`. The weight `w_m` is the k-space volume the
//! mode stands for, so `w_m σ²_m` is the spectral mass it carries.
//!
//! Wavevectors come from stratified log-radial shells on `[K k_min_ratio, K]`:
//! uniformly random directions, radii drawn with density proportional to the
//! radial mass `a(k) k^{1-2α}` inside the shell. Every mode of a shell then
//! carries the same energy, and the total energy of a mode set equals the
//! quadrature of the truncated spectrum for every seed.

use crate::kubo::radial_mass;
use crate::quadrature::{Integral, QuadratureError};
use crate::rng::{fill_normals, unit, NormalStream};
use crate::spectrum::{shell_energy_constant, unit_sphere_area, ModelParams, SpectrumError};
use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("the spectrum has no mass on the sampled wavenumber range")]
    EmptySpectrum,
    #[error("field state belongs to mode set {state:016x}, not {modes:016x}")]
    ModeSetMismatch { modes: u64, state: u64 },
    #[error("invalid mode configuration: {0}")]
    InvalidConfig(String),
    #[error("position has {got} components but the field dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    InvalidParams(#[from] SpectrumError),
    #[error("shell mass quadrature failed: {0}")]
    Quadrature(#[from] QuadratureError),
}

pub const DEFAULT_K_MIN_RATIO: f64 = 1e-3;

fn default_k_min_ratio() -> f64 {
    DEFAULT_K_MIN_RATIO
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub n_shells: usize,
    pub modes_per_shell: usize,
    #[serde(default = "default_k_min_ratio")]
    pub k_min_ratio: f64,
}

impl ModeConfig {
    pub fn new(n_shells: usize, modes_per_shell: usize, k_min_ratio: f64) -> Self {
        ModeConfig { n_shells, modes_per_shell, k_min_ratio }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.n_shells < 1 {
            return Err(FieldError::InvalidConfig("n_shells must be >= 1".into()));
        }
        if self.modes_per_shell < 1 {
            return Err(FieldError::InvalidConfig("modes_per_shell must be >= 1".into()));
        }
        if !(self.k_min_ratio > 0.0 && self.k_min_ratio < 1.0) {
            return Err(FieldError::InvalidConfig(format!(
                "k_min_ratio = {} must lie in (0, 1)",
                self.k_min_ratio
            )));
        }
        Ok(())
    }
}

/// One radial shell `[lo, hi]` with its radial mass `∫ a(k) k^{1-2α} dk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shell {
    pub lo: f64,
    pub hi: f64,
    pub mass: Integral,
}

/// Shell geometry and masses for one `(params, config)`; independent of the seed,
/// so it can be built once and sampled many times.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellTable {
    params: ModelParams,
    config: ModeConfig,
    shells: Vec<Shell>,
    truncated: Integral,
}

impl ShellTable {
    pub fn new(params: &ModelParams, config: ModeConfig) -> Result<Self, FieldError> {
        params.validate()?;
        config.validate()?;
        let k_max = params.cutoff;
        let k_min = k_max * config.k_min_ratio;
        let n = config.n_shells;
        let ratio = (k_max / k_min).ln();
        let edges: Vec<f64> = (0..=n)
            .map(|j| if j == n { k_max } else { k_min * (ratio * j as f64 / n as f64).exp() })
            .collect();
        let shells = edges
            .windows(2)
            .map(|w| Ok(Shell { lo: w[0], hi: w[1], mass: radial_mass(params, w[0], w[1])? }))
            .collect::<Result<Vec<_>, QuadratureError>>()?;
        if shells.iter().all(|s| s.mass.value <= 0.0) {
            return Err(FieldError::EmptySpectrum);
        }
        let truncated = radial_mass(params, 0.0, k_min)?;
        Ok(ShellTable { params: params.clone(), config, shells, truncated })
    }

    pub fn shells(&self) -> &[Shell] {
        &self.shells
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> ModeConfig {
        self.config
    }

    /// `E|V|²` carried by the resolved shells.
    pub fn resolved_energy(&self) -> f64 {
        shell_energy_constant(self.params.d) * self.shells.iter().map(|s| s.mass.value).sum::<f64>()
    }

    /// `E|V|²` lost below `k_min`.
    pub fn truncated_energy(&self) -> f64 {
        shell_energy_constant(self.params.d) * self.truncated.value
    }

    /// Bound on `|E|V|²_modes - E|V|²|`: infrared truncation plus quadrature error.
    pub fn energy_error_bound(&self) -> f64 {
        let c = shell_energy_constant(self.params.d);
        c * (self.truncated.value + self.truncated.abs_error + self.shells.iter().map(|s| s.mass.abs_error).sum::<f64>())
    }

    pub fn sample(&self, seed: u64) -> Result<ModeSet, FieldError> {
        let p = &self.params;
        let d = p.d;
        let per_shell = self.config.modes_per_shell;
        let q = p.radial_power() + 1.0; // > 0 because alpha < 1
        let sphere = unit_sphere_area(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ks = Vec::new();
        let mut weights = Vec::new();
        let mut dir = vec![0.0; d];
        for shell in &self.shells {
            let a_max = p.shape.max_on(shell.lo, shell.hi);
            if shell.mass.value <= 0.0 || a_max <= 0.0 {
                continue;
            }
            let (lo_q, hi_q) = (shell.lo.powf(q), shell.hi.powf(q));
            for _ in 0..per_shell {
                // proposal ∝ k^{1-2α} by inversion, accepted with probability a(k)/a_max
                let k_norm = loop {
                    let u = unit(rng.next_u64());
                    let k = (lo_q + u * (hi_q - lo_q)).powf(1.0 / q).clamp(shell.lo, shell.hi);
                    let a = p.shape.eval(k);
                    if a > 0.0 && unit(rng.next_u64()) * a_max < a {
                        break k;
                    }
                };
                loop {
                    fill_normals(&mut rng, &mut dir);
                    let n2: f64 = dir.iter().map(|x| x * x).sum();
                    if n2 > 1e-300 {
                        let inv = n2.sqrt().recip();
                        ks.extend(dir.iter().map(|x| x * inv * k_norm));
                        break;
                    }
                }
                let a = p.shape.eval(k_norm);
                let w = sphere * k_norm.powi(d as i32 - 1) * shell.mass.value
                    / (per_shell as f64 * a * k_norm.powf(p.radial_power()));
                weights.push(w);
            }
        }
        if weights.is_empty() {
            return Err(FieldError::EmptySpectrum);
        }
        let mut set = ModeSet::build(p, ks, weights, seed)?;
        set.config = Some(self.config);
        set.target_energy = self.resolved_energy() + self.truncated_energy();
        set.energy_error_bound = self.energy_error_bound();
        set.digest = set.compute_digest();
        Ok(set)
    }
}

/// Sampled wavevectors with weights and per-mode `k⊥` bases.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub(crate) params: ModelParams,
    pub(crate) config: Option<ModeConfig>,
    pub(crate) seed: u64,
    pub(crate) d: usize,
    pub(crate) k: Vec<f64>,
    pub(crate) k_norm: Vec<f64>,
    pub(crate) weight: Vec<f64>,
    pub(crate) sqrt_weight: Vec<f64>,
    /// `n × (d-1) × d`, row `p` of mode `m` is the p-th basis vector of `k_m⊥`.
    pub(crate) basis: Vec<f64>,
    pub(crate) rate: Vec<f64>,
    pub(crate) sigma: Vec<f64>,
    pub(crate) target_energy: f64,
    pub(crate) energy_error_bound: f64,
    pub(crate) digest: u64,
}

/// Read-only view of one mode.
#[derive(Debug, Clone, Copy)]
pub struct ModeRef<'a> {
    pub k: &'a [f64],
    pub weight: f64,
    /// `(d-1) × d`, row-major.
    pub basis: &'a [f64],
    pub rate: f64,
    pub sigma: f64,
}

/// Orthonormal basis of `u⊥` from the Householder reflector mapping `e_1` to `±u`.
fn perp_basis(u: &[f64], out: &mut Vec<f64>) {
    let d = u.len();
    let s = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = u.to_vec();
    w[0] += s;
    let ww: f64 = w.iter().map(|x| x * x).sum();
    for j in 1..d {
        for i in 0..d {
            let e = if i == j { 1.0 } else { 0.0 };
            out.push(e - 2.0 * w[i] * w[j] / ww);
        }
    }
}

impl ModeSet {
    /// Mode set from explicit wavevectors (`n × d`, row-major) and k-space weights.
    pub fn from_wavevectors(params: &ModelParams, k: Vec<f64>, weights: Vec<f64>, seed: u64) -> Result<Self, FieldError> {
        let mut set = Self::build(params, k, weights, seed)?;
        set.target_energy = set.energy();
        set.digest = set.compute_digest();
        Ok(set)
    }

    fn build(params: &ModelParams, k: Vec<f64>, weights: Vec<f64>, seed: u64) -> Result<Self, FieldError> {
        params.validate()?;
        let d = params.d;
        if k.len() != weights.len() * d {
            return Err(FieldError::InvalidConfig(format!(
                "{} wavevector components for {} modes in d = {d}",
                k.len(),
                weights.len()
            )));
        }
        let n = weights.len();
        let mut k_norm = Vec::with_capacity(n);
        let mut basis = Vec::with_capacity(n * (d - 1) * d);
        let mut rate = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        for (m, kv) in k.chunks_exact(d).enumerate() {
            let norm = kv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm <= params.cutoff * (1.0 + 1e-12)) || !(weights[m] >= 0.0) {
                return Err(FieldError::InvalidConfig(format!(
                    "mode {m}: |k| = {norm} must lie in (0, cutoff] with a nonnegative weight"
                )));
            }
            let u: Vec<f64> = kv.iter().map(|x| x / norm).collect();
            perp_basis(&u, &mut basis);
            k_norm.push(norm);
            rate.push(params.decay_rate(norm));
            sigma.push(params.scalar_density(norm).sqrt());
        }
        let sqrt_weight = weights.iter().map(|w| w.sqrt()).collect();
        Ok(ModeSet {
            params: params.clone(),
            config: None,
            seed,
            d,
            k,
            k_norm,
            weight: weights,
            sqrt_weight,
            basis,
            rate,
            sigma,
            target_energy: 0.0,
            energy_error_bound: 0.0,
            digest: 0,
        })
    }

    pub(crate) fn compute_digest(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"turbdiff-modeset-v1");
        h.update(serde_json::to_vec(&self.params).expect("params serialize"));
        if let Some(c) = &self.config {
            h.update(serde_json::to_vec(c).expect("config serializes"));
        }
        h.update(self.seed.to_le_bytes());
        for x in self.k.iter().chain(&self.weight) {
            h.update(x.to_le_bytes());
        }
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
    }

    pub fn len(&self) -> usize {
        self.weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> Option<ModeConfig> {
        self.config
    }

    pub fn mode(&self, m: usize) -> ModeRef<'_> {
        let d = self.d;
        let b = (d - 1) * d;
        ModeRef {
            k: &self.k[m * d..(m + 1) * d],
            weight: self.weight[m],
            basis: &self.basis[m * b..(m + 1) * b],
            rate: self.rate[m],
            sigma: self.sigma[m],
        }
    }

    pub fn modes(&self) -> impl Iterator<Item = ModeRef<'_>> {
        (0..self.len()).map(move |m| self.mode(m))
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.k_norm
    }

    /// `E|v|²` of the discrete field: `(d-1) Σ w_m σ²_m`.
    pub fn energy(&self) -> f64 {
        (self.d as f64 - 1.0) * self.weight.iter().zip(&self.sigma).map(|(w, s)| w * s * s).sum::<f64>()
    }

    /// `E|V|²` of the continuous spectrum, when the set was sampled from shells.
    pub fn target_energy(&self) -> f64 {
        self.target_energy
    }

    pub fn energy_error_bound(&self) -> f64 {
        self.energy_error_bound
    }

    /// Exact lag-`t` covariance `E[v(t, x) ⊗ v(0, x)]` of the discrete field.
    pub fn covariance(&self, lag: f64) -> DMatrix<f64> {
        let d = self.d;
        let mut c = DMatrix::zeros(d, d);
        for (m, mode) in self.modes().enumerate() {
            let e = mode.weight * mode.sigma * mode.sigma * (-mode.rate * lag).exp();
            let kn2 = self.k_norm[m] * self.k_norm[m];
            for i in 0..d {
                for j in 0..d {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    c[(i, j)] += e * (delta - mode.k[i] * mode.k[j] / kn2);
                }
            }
        }
        c
    }

    fn check(&self, state: &FieldState) -> Result<(), FieldError> {
        if state.modes_digest != self.digest {
            return Err(FieldError::ModeSetMismatch { modes: self.digest, state: state.modes_digest });
        }
        Ok(())
    }

    /// Velocity at `x` into `out` without the digest check.
    pub fn velocity_into(&self, state: &FieldState, x: &[f64], out: &mut [f64]) {
        self.velocity_from_amplitudes(&state.xi, &state.eta, x, out)
    }

    /// Velocity for raw amplitude arrays laid out like [`FieldState::xi`] and [`FieldState::eta`].
    pub fn velocity_from_amplitudes(&self, xi: &[f64], eta: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.d;
        let np = d - 1;
        out.iter_mut().for_each(|v| *v = 0.0);
        for m in 0..self.len() {
            let k = &self.k[m * d..(m + 1) * d];
            let phase: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum();
            let (s, c) = phase.sin_cos();
            let sw = self.sqrt_weight[m];
            let b = &self.basis[m * np * d..(m + 1) * np * d];
            for p in 0..np {
                let coef = sw * (c * xi[m * np + p] + s * eta[m * np + p]);
                for i in 0..d {
                    out[i] += coef * b[p * d + i];
                }
            }
        }
    }

    /// Largest `|k · amplitude|` over all modes, in ambient coordinates.
    pub fn max_divergence(&self, state: &FieldState) -> f64 {
        let d = self.d;
        let np = d - 1;
        let mut worst = 0.0f64;
        for (m, mode) in self.modes().enumerate() {
            for amp in [&state.xi, &state.eta] {
                let mut dot = 0.0;
                for i in 0..d {
                    let a: f64 = (0..np).map(|p| amp[m * np + p] * mode.basis[p * d + i]).sum();
                    dot += mode.k[i] * a;
                }
                worst = worst.max(dot.abs());
            }
        }
        worst
    }
}

/// Current OU amplitudes of every mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub t: f64,
    /// Number of transitions applied; addresses the normals of the next transition.
    pub step: u64,
    /// Cosine-channel amplitudes, `n × (d-1)` in each mode's `k⊥` basis.
    pub xi: Vec<f64>,
    /// Sine-channel amplitudes.
    pub eta: Vec<f64>,
    pub(crate) modes_digest: u64,
    pub(crate) stream: NormalStreamState,
}

/// Serializable handle of the counter-addressed stream.
#[derive(Debug, Clone)]
pub(crate) struct NormalStreamState {
    pub(crate) inner: NormalStream,
    pub(crate) scratch: Vec<f64>,
    /// `(ρ, √(1-ρ²) σ)` per mode for the step length in `coef_dt`.
    pub(crate) coef: Vec<(f64, f64)>,
    pub(crate) coef_dt: u64,
}

impl PartialEq for NormalStreamState {
    fn eq(&self, other: &Self) -> bool {
        self.inner.key() == other.inner.key()
    }
}

impl FieldState {
    pub fn rng_key(&self) -> u64 {
        self.stream.inner.key()
    }

    pub fn modes_digest(&self) -> u64 {
        self.modes_digest
    }

    pub(crate) fn from_parts(modes: &ModeSet, t: f64, step: u64, key: u64, xi: Vec<f64>, eta: Vec<f64>) -> Self {
        let np = modes.d - 1;
        FieldState {
            t,
            step,
            xi,
            eta,
            modes_digest: modes.digest,
            stream: NormalStreamState {
                inner: NormalStream::new(key),
                scratch: vec![0.0; modes.len() * 2 * np],
                coef: Vec::new(),
                coef_dt: 0,
            },
        }
    }

    /// Exact OU transition over `dt` for every mode.
    pub fn advance(&mut self, modes: &ModeSet, dt: f64) {
        debug_assert!(dt >= 0.0);
        debug_assert_eq!(self.modes_digest, modes.digest);
        self.step += 1;
        self.t += dt;
        if dt == 0.0 {
            return;
        }
        let np = modes.d - 1;
        let NormalStreamState { inner, scratch, coef, coef_dt } = &mut self.stream;
        if coef.len() != modes.len() || *coef_dt != dt.to_bits() {
            coef.clear();
            coef.extend(modes.rate.iter().zip(&modes.sigma).map(|(&r, &sigma)| {
                let x = r * dt;
                // exp underflows to 0 for large x: exact resampling
                ((-x).exp(), (-(-2.0 * x).exp_m1()).sqrt() * sigma)
            }));
            *coef_dt = dt.to_bits();
        }
        inner.fill(self.step, scratch);
        for (m, &(rho, noise)) in coef.iter().enumerate() {
            let z = &scratch[m * 2 * np..(m + 1) * 2 * np];
            for p in 0..np {
                let i = m * np + p;
                self.xi[i] = rho * self.xi[i] + noise * z[p];
                self.eta[i] = rho * self.eta[i] + noise * z[np + p];
            }
        }
    }
}

pub fn sample_modes(params: &ModelParams, n_shells: usize, modes_per_shell: usize, k_min_ratio: f64) -> Result<ModeSet, FieldError> {
    ShellTable::new(params, ModeConfig::new(n_shells, modes_per_shell, k_min_ratio))?.sample(params.seed)
}

/// Stationary start at `t = 0`.
pub fn init_state(modes: &ModeSet, seed: u64) -> FieldState {
    let np = modes.d - 1;
    let n = modes.len();
    let mut state = FieldState::from_parts(modes, 0.0, 0, seed, vec![0.0; n * np], vec![0.0; n * np]);
    let NormalStreamState { inner, scratch, .. } = &mut state.stream;
    inner.fill(0, scratch);
    for m in 0..n {
        let z = &scratch[m * 2 * np..(m + 1) * 2 * np];
        for p in 0..np {
            state.xi[m * np + p] = modes.sigma[m] * z[p];
            state.eta[m * np + p] = modes.sigma[m] * z[np + p];
        }
    }
    state
}

pub fn advance(modes: &ModeSet, state: &FieldState, dt: f64) -> FieldState {
    let mut next = state.clone();
    next.advance(modes, dt);
    next
}

pub fn evaluate(modes: &ModeSet, state: &FieldState, x: &[f64]) -> Result<Vec<f64>, FieldError> {
    modes.check(state)?;
    if x.len() != modes.d {
        return Err(FieldError::DimensionMismatch { expected: modes.d, got: x.len() });
    }
    let mut v = vec![0.0; modes.d];
    modes.velocity_into(state, x, &mut v);
    Ok(v)
}

/// `∂v_i/∂x_j` at `x`.
pub fn evaluate_gradient(modes: &ModeSet, state: &FieldState, x: &[f64]) -> Result<DMatrix<f64>, FieldError> {
    modes.check(state)?;
    let d = modes.d;
    if x.len() != d {
        return Err(FieldError::DimensionMismatch { expected: d, got: x.len() });
    }
    let np = d - 1;
    let mut g = DMatrix::zeros(d, d);
    for (m, mode) in modes.modes().enumerate() {
        let phase: f64 = mode.k.iter().zip(x).map(|(a, b)| a * b).sum();
        let (s, c) = phase.sin_cos();
        let sw = modes.sqrt_weight[m];
        for p in 0..np {
            let coef = sw * (-s * state.xi[m * np + p] + c * state.eta[m * np + p]);
            for i in 0..d {
                let a = coef * mode.basis[p * d + i];
                for j in 0..d {
                    g[(i, j)] += a * mode.k[j];
                }
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::ShapeFn;

    fn params() -> ModelParams {
        let mut p = ModelParams::with_indicator(2, 0.25, 0.25, 1.0);
        p.seed = 17;
        p
    }

    #[test]
    fn zero_shape_is_empty_spectrum() {
        let mut p = params();
        p.shape = ShapeFn::Tabulated { knots: vec![0.0, 1.0], values: vec![0.0, 0.0] };
        assert_eq!(sample_modes(&p, 8, 4, 1e-3).unwrap_err(), FieldError::EmptySpectrum);
        // support entirely below k_min
        p.shape = ShapeFn::indicator(0.0, 1e-4);
        assert_eq!(sample_modes(&p, 8, 4, 1e-3).unwrap_err(), FieldError::EmptySpectrum);
    }

    #[test]
    fn invalid_mode_config() {
        assert!(sample_modes(&params(), 0, 4, 1e-3).is_err());
        assert!(sample_modes(&params(), 4, 0, 1e-3).is_err());
        assert!(sample_modes(&params(), 4, 4, 1.0).is_err());
    }

    #[test]
    fn energy_matches_quadrature_within_bound() {
        let p = params();
        let modes = sample_modes(&p, 32, 8, 1e-3).unwrap();
        assert_eq!(modes.len(), 256);
        let target = crate::kubo::velocity_variance(&p).unwrap();
        assert!((modes.target_energy() - target).abs() < 1e-9);
        assert!((modes.energy() - target).abs() <= modes.energy_error_bound() + 1e-9 * target);
        for m in modes.modes() {
            let n = m.k.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n > 0.0 && n <= 1.0);
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = sample_modes(&params(), 16, 4, 1e-3).unwrap();
        let b = sample_modes(&params(), 16, 4, 1e-3).unwrap();
        assert_eq!(a, b);
        let mut p = params();
        p.seed += 1;
        let c = sample_modes(&p, 16, 4, 1e-3).unwrap();
        assert_ne!(a.k, c.k);
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn bases_are_orthonormal_and_perpendicular() {
        for d in 2..=5 {
            let mut p = ModelParams::with_indicator(d, 0.3, 0.4, 2.0);
            p.seed = d as u64;
            let modes = sample_modes(&p, 6, 3, 1e-2).unwrap();
            for m in modes.modes() {
                let kn = m.k.iter().map(|x| x * x).sum::<f64>().sqrt();
                for a in 0..d - 1 {
                    let ba = &m.basis[a * d..(a + 1) * d];
                    let dotk: f64 = ba.iter().zip(m.k).map(|(x, y)| x * y).sum();
                    assert!(dotk.abs() < 1e-12 * kn.max(1.0));
                    for b in 0..d - 1 {
                        let bb = &m.basis[b * d..(b + 1) * d];
                        let dot: f64 = ba.iter().zip(bb).map(|(x, y)| x * y).sum();
                        let e = if a == b { 1.0 } else { 0.0 };
                        assert!((dot - e).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn advance_zero_dt_keeps_amplitudes() {
        let modes = sample_modes(&params(), 8, 2, 1e-3).unwrap();
        let s0 = init_state(&modes, 5);
        let s1 = advance(&modes, &s0, 0.0);
        assert_eq!(s0.xi, s1.xi);
        assert_eq!(s0.eta, s1.eta);
        assert_eq!(s1.step, s0.step + 1);
    }

    #[test]
    fn advance_huge_dt_is_fresh_draw() {
        let modes = sample_modes(&params(), 8, 2, 1e-3).unwrap();
        let s0 = init_state(&modes, 5);
        let mut other = s0.clone();
        other.xi.iter_mut().for_each(|x| *x *= -3.0);
        let a = advance(&modes, &s0, 1e300);
        let b = advance(&modes, &other, 1e300);
        assert_eq!(a.xi, b.xi);
        assert_eq!(a.eta, b.eta);
    }

    #[test]
    fn different_seeds_give_different_states() {
        let modes = sample_modes(&params(), 8, 2, 1e-3).unwrap();
        assert_ne!(init_state(&modes, 1).xi, init_state(&modes, 2).xi);
        assert_eq!(init_state(&modes, 1).xi, init_state(&modes, 1).xi);
    }

    #[test]
    fn single_mode_value_and_gradient() {
        let p = params();
        let modes = ModeSet::from_wavevectors(&p, vec![0.6, 0.0], vec![2.5], 0).unwrap();
        let mut s = init_state(&modes, 1);
        s.xi[0] = 1.0;
        s.eta[0] = 0.0;
        let b = modes.mode(0).basis.to_vec();
        let v = evaluate(&modes, &s, &[0.0, 3.0]).unwrap();
        assert!((v[0] - 2.5f64.sqrt() * b[0]).abs() < 1e-15);
        assert!((v[1] - 2.5f64.sqrt() * b[1]).abs() < 1e-15);
        s.eta[0] = 0.7;
        let x = [0.8, -0.2];
        let g = evaluate_gradient(&modes, &s, &x).unwrap();
        let ph: f64 = 0.6 * 0.8;
        let coef = 2.5f64.sqrt() * (-ph.sin() * 1.0 + ph.cos() * 0.7);
        for i in 0..2 {
            assert!((g[(i, 0)] - coef * b[i] * 0.6).abs() < 1e-14);
            assert!(g[(i, 1)].abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_state_rejected() {
        let a = sample_modes(&params(), 8, 2, 1e-3).unwrap();
        let mut p = params();
        p.seed = 99;
        let b = sample_modes(&p, 8, 2, 1e-3).unwrap();
        let s = init_state(&b, 0);
        assert!(matches!(evaluate(&a, &s, &[0.0, 0.0]), Err(FieldError::ModeSetMismatch { .. })));
        assert!(matches!(evaluate_gradient(&a, &s, &[0.0, 0.0]), Err(FieldError::ModeSetMismatch { .. })));
        assert!(matches!(evaluate(&b, &s, &[0.0]), Err(FieldError::DimensionMismatch { .. })));
    }

    #[test]
    fn isotropy_of_expected_covariance() {
        // over direction draws the discrete covariance is unbiased for the continuum one
        let p = params();
        let table = ShellTable::new(&p, ModeConfig::new(16, 4, 1e-3)).unwrap();
        let n = 1000;
        let draws: Vec<[f64; 2]> = (0..n)
            .map(|s| {
                let c = table.sample(crate::rng::split_seed(3, s, 0)).unwrap().covariance(0.0);
                [c[(0, 0)], c[(0, 1)]]
            })
            .collect();
        let e = crate::kubo::eulerian_correlation(&p, 0.0).unwrap().value[(0, 0)];
        for (c, target) in [(0, e), (1, 0.0)] {
            let mean = draws.iter().map(|x| x[c]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|x| (x[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let z = (mean - target) / (var / n as f64).sqrt();
            assert!(z.abs() < 4.0, "component {c}: mean {mean} target {target} z {z}");
        }
    }
}
