//! Run configuration: one TOML document with typed sections, unknown keys rejected.

use serde::{Deserialize, Serialize};
use turbdiff_core::analysis::Window;
use turbdiff_core::corrector::{CorrectorIntegral, ScalingParam};
use turbdiff_core::field::{ModeConfig, DEFAULT_K_MIN_RATIO};
use turbdiff_core::spectrum::ModelParams;
use turbdiff_core::tracer::{default_dt, IntegrationConfig, Method};
use turbdiff_core::validation::ValidationConfig;

use crate::error::CliError;

fn default_k_min_ratio() -> f64 {
    DEFAULT_K_MIN_RATIO
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub n_shells: usize,
    pub modes_per_shell: usize,
    #[serde(default = "default_k_min_ratio")]
    pub k_min_ratio: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection { n_shells: 32, modes_per_shell: 8, k_min_ratio: DEFAULT_K_MIN_RATIO }
    }
}

fn default_method() -> Method {
    Method::Rk4
}

fn one() -> f64 {
    1.0
}

fn default_sample_every() -> usize {
    1
}

/// Integration settings; `dt` falls back to the resolution heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_final: f64,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "one")]
    pub coupling: f64,
    #[serde(default)]
    pub freeze_field: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step_displacement: Option<f64>,
}

impl Default for IntegrationSection {
    fn default() -> Self {
        IntegrationSection {
            dt: None,
            t_final: 10.0,
            sample_every: 1,
            method: Method::Rk4,
            coupling: 1.0,
            freeze_field: false,
            max_step_displacement: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_traj: usize,
    #[serde(default)]
    pub master_seed: u64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { n_traj: 16, master_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

fn default_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir(), formats: default_formats() }
    }
}

fn default_eps_grid() -> Vec<f64> {
    vec![1.0, 0.1, 0.01, 1e-3, 1e-4]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KuboSection {
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
}

impl Default for KuboSection {
    fn default() -> Self {
        KuboSection { eps_grid: default_eps_grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    #[serde(default)]
    pub simulate: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { alpha_grid: vec![0.25, 0.5, 0.75], beta_grid: vec![0.25, 0.5, 0.75], simulate: false }
    }
}

fn default_corrector_grid() -> Vec<f64> {
    turbdiff_core::corrector::log_grid(1e-1, 3, 3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorSection {
    pub op: CorrectorIntegral,
    pub param: ScalingParam,
    #[serde(default = "default_corrector_grid")]
    pub grid: Vec<f64>,
}

impl Default for CorrectorSection {
    fn default() -> Self {
        CorrectorSection { op: CorrectorIntegral::Chi1, param: ScalingParam::Eps, grid: default_corrector_grid() }
    }
}

/// Analysis windows in microscopic time; unset values are derived from `t_final`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_lags: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vacf_max_lag: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    #[serde(default)]
    pub n_realizations: Option<usize>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub stationarity_time: Option<f64>,
    #[serde(default)]
    pub ou_steps: Option<usize>,
    #[serde(default)]
    pub ou_dt: Option<f64>,
    #[serde(default)]
    pub ou_lags: Option<Vec<usize>>,
    #[serde(default)]
    pub ou_wavenumber: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub integration: IntegrationSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub kubo: KuboSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub corrector: CorrectorSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationSection>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mode_config(&self) -> ModeConfig {
        ModeConfig::new(self.field.n_shells, self.field.modes_per_shell, self.field.k_min_ratio)
    }

    /// Resolves `dt` for `params` (the sweep resolves per grid point).
    pub fn integration_for(&self, params: &ModelParams) -> Result<IntegrationConfig, CliError> {
        let s = &self.integration;
        let dt = match s.dt {
            Some(dt) => dt,
            None => default_dt(params, s.coupling).map_err(|e| CliError::Config(e.to_string()))?,
        };
        let cfg = IntegrationConfig {
            dt,
            t_final: s.t_final,
            sample_every: s.sample_every,
            method: s.method,
            coupling: s.coupling,
            freeze_field: s.freeze_field,
            max_step_displacement: s.max_step_displacement,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn fit_window(&self, t_max: f64) -> Window {
        match self.analysis.fit_window {
            Some([lo, hi]) => Window { lo, hi },
            None => Window::last_decade(t_max),
        }
    }

    pub fn slope_lags(&self, t_max: f64) -> Window {
        match self.analysis.slope_lags {
            Some([lo, hi]) => Window { lo, hi },
            None => Window { lo: 0.05 * t_max, hi: 0.1 * t_max },
        }
    }

    pub fn vacf_max_lag(&self, t_max: f64) -> f64 {
        self.analysis.vacf_max_lag.unwrap_or(0.05 * t_max)
    }

    pub fn validation_config(&self) -> (ValidationConfig, f64) {
        let mut v = ValidationConfig { seed: self.ensemble.master_seed, ..ValidationConfig::default() };
        let mut k = 0.6 * self.model.cutoff;
        if let Some(s) = &self.validation {
            if let Some(x) = s.n_realizations {
                v.n_realizations = x;
            }
            if let Some(x) = &s.times {
                v.times = x.clone();
            }
            if let Some(x) = s.stationarity_time {
                v.stationarity_time = x;
            }
            if let Some(x) = s.ou_steps {
                v.ou_steps = x;
            }
            if let Some(x) = s.ou_dt {
                v.ou_dt = x;
            }
            if let Some(x) = &s.ou_lags {
                v.ou_lags = x.clone();
            }
            if let Some(x) = s.ou_wavenumber {
                k = x;
            }
        }
        (v, k)
    }

    /// Checks every section against the preconditions of the code that consumes it.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.mode_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.integration.t_final > 0.0) {
            return bad(format!("integration.t_final = {} must be positive", self.integration.t_final));
        }
        if let Some(dt) = self.integration.dt {
            if !(dt > 0.0) {
                return bad(format!("integration.dt = {dt} must be positive"));
            }
        }
        if self.ensemble.n_traj < 1 {
            return bad("ensemble.n_traj must be >= 1".into());
        }
        if self.output.formats.is_empty() {
            return bad("output.formats must not be empty".into());
        }
        if self.kubo.eps_grid.iter().any(|e| !(*e > 0.0)) {
            return bad("kubo.eps_grid entries must be positive".into());
        }
        if self.sweep.alpha_grid.is_empty() || self.sweep.beta_grid.is_empty() {
            return bad("sweep grids must not be empty".into());
        }
        if self.sweep.alpha_grid.iter().chain(&self.sweep.beta_grid).any(|x| !x.is_finite()) {
            return bad("sweep grids must be finite".into());
        }
        if self.corrector.grid.iter().any(|x| !(*x > 0.0)) {
            return bad("corrector.grid entries must be positive".into());
        }
        for (name, w) in [("fit_window", self.analysis.fit_window), ("slope_lags", self.analysis.slope_lags)] {
            if let Some([lo, hi]) = w {
                if !(lo >= 0.0 && lo < hi) {
                    return bad(format!("analysis.{name} = [{lo}, {hi}] must satisfy 0 <= lo < hi"));
                }
            }
        }
        if let Some(l) = self.analysis.vacf_max_lag {
            if !(l > 0.0) {
                return bad(format!("analysis.vacf_max_lag = {l} must be positive"));
            }
        }
        Ok(())
    }
}
