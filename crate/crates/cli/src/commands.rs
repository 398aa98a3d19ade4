use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use serde_json::{json, Value};
use turbdiff_core::analysis::{
    compare, fit_exponent_jackknife, green_kubo, lagrangian_vacf, msd, msd_slope_estimate, DiffusivityEstimate, MsdCurve,
    VacfCurve,
};
use turbdiff_core::corrector::fit_scaling;
use turbdiff_core::field::ShellTable;
use turbdiff_core::kubo::{classify_phase, regularized_diffusivity, taylor_kubo, DiffusivityMatrix, Phase};
use turbdiff_core::spectrum::{shell_energy_constant, ModelParams};
use turbdiff_core::tracer::{replay_velocities, run_ensemble};
use turbdiff_core::validation::{field_checks, ou_autocorrelation_checks, CheckResult};

use crate::config::{Format, RunConfig};
use crate::error::CliError;
use crate::output::{fmt_f64, sha256_hex, Csv, Outputs, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Kubo,
    Simulate,
    Sweep,
    Corrector,
    ValidateField,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Kubo => "kubo",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Corrector => "corrector",
            Command::ValidateField => "validate-field",
        }
    }
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::from((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<f64>>()).collect::<Vec<_>>())
}

fn diffusivity_json(m: &DiffusivityMatrix) -> Value {
    json!({ "kind": m.kind, "matrix": matrix_json(&m.value), "abs_error_estimate": m.abs_error_estimate })
}

fn estimate_json(e: &DiffusivityEstimate) -> Value {
    json!({ "method": e.method, "kind": e.kind, "matrix": matrix_json(&e.matrix), "ci95": matrix_json(&e.ci95) })
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s.into_bytes()
}

struct Run {
    files: BTreeMap<String, Vec<u8>>,
    summary: String,
    warnings: Vec<String>,
    status: Status,
    derived: Value,
    resolved: RunConfig,
}

impl Run {
    fn new(resolved: RunConfig) -> Self {
        Run {
            files: BTreeMap::new(),
            summary: String::new(),
            warnings: Vec::new(),
            status: Status::Ok,
            derived: json!({}),
            resolved,
        }
    }

    fn put(&mut self, name: &str, bytes: Vec<u8>) {
        let keep = match name.rsplit('.').next() {
            Some("csv") => self.resolved.output.formats.contains(&Format::Csv),
            Some("json") => self.resolved.output.formats.contains(&Format::Json),
            _ => true,
        };
        if keep {
            self.files.insert(name.to_string(), bytes);
        }
    }
}

fn shells_json(params: &ModelParams, cfg: &RunConfig) -> Value {
    match ShellTable::new(params, cfg.mode_config()) {
        Ok(t) => json!({
            "shells": t.shells().iter().map(|s| json!({ "lo": s.lo, "hi": s.hi, "mass": s.mass.value, "mass_abs_error": s.mass.abs_error })).collect::<Vec<_>>(),
            "resolved_energy": t.resolved_energy(),
            "truncated_energy": t.truncated_energy(),
        }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn validity_warning(params: &ModelParams, cfg: &RunConfig) -> Option<String> {
    let k_min = params.cutoff * cfg.field.k_min_ratio;
    let horizon = k_min.powf(-2.0 * params.beta);
    (cfg.integration.t_final > horizon).then(|| {
        format!(
            "t_final = {} exceeds the finite-mode validity window k_min^(-2 beta) = {horizon:.6e}; late-time statistics reflect the infrared truncation",
            cfg.integration.t_final
        )
    })
}

/// Validates `cfg`, runs `cmd` inside a pool of `threads` workers (the global pool if
/// `None`) and returns every output file in memory, manifest included.
pub fn execute(cmd: Command, cfg: &RunConfig, threads: Option<usize>) -> Result<Outputs, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let run = match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cmd, cfg))?
        }
        None => dispatch(cmd, cfg)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    Ok(finish(cmd, run, elapsed))
}

fn dispatch(cmd: Command, cfg: &RunConfig) -> Result<Run, CliError> {
    match cmd {
        Command::Kubo => cmd_kubo(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Sweep => cmd_sweep(cfg),
        Command::Corrector => cmd_corrector(cfg),
        Command::ValidateField => cmd_validate_field(cfg),
    }
}

fn finish(cmd: Command, mut run: Run, wall_clock: f64) -> Outputs {
    run.files.insert("resolved_config.toml".into(), run.resolved.to_toml().into_bytes());
    let digests: BTreeMap<&String, String> = run.files.iter().map(|(k, v)| (k, sha256_hex(v))).collect();
    let manifest = json!({
        "artifact": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": cmd.name(),
        "config": run.resolved,
        "derived": run.derived,
        "warnings": run.warnings,
        "wall_clock_seconds": wall_clock,
        "outputs": digests,
    });
    run.files.insert("manifest.json".into(), pretty(&manifest));
    Outputs { files: run.files, summary: run.summary, warnings: run.warnings, status: run.status }
}

fn cmd_kubo(cfg: &RunConfig) -> Result<Run, CliError> {
    let params = &cfg.model;
    let mut run = Run::new(cfg.clone());
    let phase = classify_phase(params.alpha, params.beta);
    let k = taylor_kubo(params)?;
    let dstar = k.to_covariance();
    let d = params.d;

    let mut header = vec!["eps".to_string()];
    for i in 1..=d {
        for j in 1..=d {
            header.push(format!("d_{i}{j}"));
        }
    }
    header.push("abs_error".into());
    let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let mut reg = Vec::new();
    for &eps in &cfg.kubo.eps_grid {
        let m = regularized_diffusivity(params, eps)?;
        let mut row = vec![eps];
        row.extend(m.value.transpose().iter().copied());
        row.push(m.abs_error_estimate);
        csv.row(&row);
        reg.push(json!({ "eps": eps, "value": diffusivity_json(&m) }));
    }
    let report = json!({
        "model": params,
        "phase": phase,
        "one_sided": diffusivity_json(&k),
        "covariance": diffusivity_json(&dstar),
        "regularized": reg,
    });
    run.put("kubo.json", pretty(&report));
    run.put("regularized.csv", csv.into_bytes());
    run.derived = json!({ "shell_energy_constant": shell_energy_constant(d), "field": shells_json(params, cfg) });
    run.summary = format!(
        "phase {} (margin {:.6}); K = {:.12} I, D* = {:.12} I (abs error {:.3e})",
        phase.verdict.as_str(),
        phase.margin,
        k.value[(0, 0)],
        dstar.value[(0, 0)],
        dstar.abs_error_estimate
    );
    Ok(run)
}

pub fn msd_csv(curve: &MsdCurve) -> Vec<u8> {
    let d = curve.d;
    let mut header = vec!["s".to_string(), "msd_trace".into(), "stderr".into()];
    for i in 1..=d {
        for j in 1..=d {
            header.push(format!("msd_{i}{j}"));
        }
    }
    let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let dd = d * d;
    for (j, &s) in curve.times.iter().enumerate() {
        let mut row = vec![s, curve.msd_trace[j], curve.stderr[j]];
        row.extend_from_slice(&curve.msd_matrix[j * dd..(j + 1) * dd]);
        csv.row(&row);
    }
    csv.into_bytes()
}

pub fn vacf_csv(curve: &VacfCurve) -> Vec<u8> {
    let mut csv = Csv::new(&["s", "vacf", "stderr"]);
    for l in 0..curve.n_lags() {
        csv.row(&[curve.lags[l], curve.vacf[l], curve.stderr[l]]);
    }
    csv.into_bytes()
}

/// Entrywise `|a - b| ≤ sqrt(ci_a² + ci_b²)`.
pub fn consistent_within_ci(a: &DiffusivityEstimate, b: &DiffusivityEstimate) -> bool {
    a.matrix
        .iter()
        .zip(b.matrix.iter())
        .zip(a.ci95.iter().zip(b.ci95.iter()))
        .all(|((x, y), (cx, cy))| (x - y).abs() <= (cx * cx + cy * cy).sqrt())
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Run, CliError> {
    let params = &cfg.model;
    let integration = cfg.integration_for(params)?;
    let mut resolved = cfg.clone();
    resolved.integration.dt = Some(integration.dt);
    let mut run = Run::new(resolved);
    run.warnings.extend(validity_warning(params, cfg));

    let ens = run_ensemble(params, cfg.mode_config(), &integration, cfg.ensemble.n_traj, cfg.ensemble.master_seed)?;
    let t_max = *ens.times.last().expect("at least one sample");
    let curve = msd(&ens)?;
    let fit = fit_exponent_jackknife(&ens, cfg.fit_window(t_max))?;
    let slope = msd_slope_estimate(&ens, cfg.slope_lags(t_max))?;

    let sample_dt = integration.dt * integration.sample_every as f64;
    let max_lag = ((cfg.vacf_max_lag(t_max) / sample_dt).round() as usize).clamp(1, ens.n_samples() - 1);
    let velocities = replay_velocities(&ens)?;
    let vacf = lagrangian_vacf(&ens, &velocities, max_lag)?;
    let gk = green_kubo(&vacf);

    let phase = classify_phase(params.alpha, params.beta);
    let prediction = if phase.verdict == Phase::Diffusive { Some(taylor_kubo(params)?.to_covariance()) } else { None };
    let report = match &prediction {
        Some(p) => Some(compare(&slope, p)?),
        None => None,
    };
    let gk_consistent = gk.as_ref().ok().map(|g| consistent_within_ci(g, &slope));
    let verdict = match &report {
        Some(r) if r.pass => "pass",
        Some(_) => "fail",
        None => "no_prediction",
    };
    if verdict == "fail" {
        run.status = Status::ChecksFailed;
    }

    let estimate = json!({
        "phase": phase,
        "exponent_fit": fit,
        "msd_slope": estimate_json(&slope),
        "green_kubo": match &gk {
            Ok(g) => estimate_json(g),
            Err(e) => json!({ "error": e.to_string() }),
        },
        "green_kubo_consistent_with_slope": gk_consistent,
        "prediction": prediction.as_ref().map(diffusivity_json),
        "compare": report.as_ref().map(|r| json!({
            "z": matrix_json(&r.z),
            "max_abs_z": r.max_abs_z,
            "relative_deviation": r.relative_deviation,
            "pass": r.pass,
        })),
        "verdict": verdict,
    });
    run.put("msd.csv", msd_csv(&curve));
    run.put("vacf.csv", vacf_csv(&vacf));
    run.put("estimate.json", pretty(&estimate));
    run.derived = json!({
        "dt": integration.dt,
        "sample_interval": sample_dt,
        "n_steps": integration.n_steps(),
        "vacf_max_lag_samples": max_lag,
        "shell_energy_constant": shell_energy_constant(params.d),
        "field": shells_json(params, cfg),
    });
    run.summary = format!(
        "exponent {:.4} ± {:.4}; slope D11 = {:.4} ± {:.4}; verdict {verdict}",
        fit.exponent,
        fit.stderr,
        slope.matrix[(0, 0)],
        slope.ci95[(0, 0)]
    );
    Ok(run)
}

fn cmd_sweep(cfg: &RunConfig) -> Result<Run, CliError> {
    let mut run = Run::new(cfg.clone());
    let mut csv = Csv::new(&["alpha", "beta", "margin", "verdict", "exponent", "exponent_stderr", "status"]);
    let mut points = Vec::new();
    let mut flagged = false;
    for &alpha in &cfg.sweep.alpha_grid {
        for &beta in &cfg.sweep.beta_grid {
            let verdict = classify_phase(alpha, beta);
            let params = ModelParams { alpha, beta, ..cfg.model.clone() };
            let mut exponent = (String::new(), String::new());
            let mut dt = None;
            let status = match params.validate() {
                Err(e) => format!("error: {e}"),
                Ok(()) if !cfg.sweep.simulate => "ok".to_string(),
                Ok(()) => {
                    let point = cfg.integration_for(&params).and_then(|integ| {
                        dt = Some(integ.dt);
                        let ens = run_ensemble(&params, cfg.mode_config(), &integ, cfg.ensemble.n_traj, cfg.ensemble.master_seed)?;
                        let t_max = *ens.times.last().expect("at least one sample");
                        Ok(fit_exponent_jackknife(&ens, cfg.fit_window(t_max))?)
                    });
                    match point {
                        Ok(fit) => {
                            exponent = (fmt_f64(fit.exponent), fmt_f64(fit.stderr));
                            flagged |= validity_warning(&params, cfg).is_some();
                            "ok".to_string()
                        }
                        Err(e) => format!("error: {e}"),
                    }
                }
            };
            csv.row_str([
                fmt_f64(alpha),
                fmt_f64(beta),
                fmt_f64(verdict.margin),
                verdict.verdict.as_str().to_string(),
                exponent.0,
                exponent.1,
                status.clone(),
            ]);
            points.push(json!({ "alpha": alpha, "beta": beta, "dt": dt, "status": status }));
        }
    }
    if flagged {
        run.warnings.push("some simulated sweep points exceed the finite-mode validity window k_min^(-2 beta)".into());
    }
    run.put("phase.csv", csv.into_bytes());
    let n = points.len();
    let failed = points.iter().filter(|p| p["status"] != "ok").count();
    run.derived = json!({ "shell_energy_constant": shell_energy_constant(cfg.model.d), "points": points });
    run.summary = format!("{n} sweep points, {failed} failed");
    Ok(run)
}

fn cmd_corrector(cfg: &RunConfig) -> Result<Run, CliError> {
    let c = &cfg.corrector;
    let mut run = Run::new(cfg.clone());
    let mut grid = c.grid.clone();
    grid.sort_by(|a, b| b.total_cmp(a));
    let fit = fit_scaling(c.op, &cfg.model, c.param, &grid)?;
    let mut csv = Csv::new(&["param_name", "param_value", "integral_value", "fit_exponent", "theory_exponent"]);
    for &(x, v) in &fit.grid {
        csv.row_str([
            c.param.as_str().to_string(),
            fmt_f64(x),
            fmt_f64(v),
            fmt_f64(fit.exponent),
            fmt_f64(fit.theory_exponent),
        ]);
    }
    run.put("scaling.csv", csv.into_bytes());
    run.put("scaling.json", pretty(&serde_json::to_value(&fit).expect("fit serializes")));
    run.derived = json!({ "shell_energy_constant": shell_energy_constant(cfg.model.d), "field": shells_json(&cfg.model, cfg) });
    run.summary = format!(
        "fitted exponent {:.6} ± {:.2e}; stated {:.6}; asymptotic {:.6}",
        fit.exponent, fit.stderr, fit.theory_exponent, fit.asymptotic_exponent
    );
    Ok(run)
}

fn checks_csv(checks: &[CheckResult]) -> Vec<u8> {
    let mut csv = Csv::new(&["name", "estimate", "target", "z", "pass"]);
    for c in checks {
        csv.row_str([c.name.clone(), fmt_f64(c.estimate), fmt_f64(c.target), fmt_f64(c.z), c.pass.to_string()]);
    }
    csv.into_bytes()
}

fn cmd_validate_field(cfg: &RunConfig) -> Result<Run, CliError> {
    let mut run = Run::new(cfg.clone());
    let (vcfg, k_ou) = cfg.validation_config();
    let mut checks = field_checks(&cfg.model, cfg.mode_config(), &vcfg)?;
    checks.extend(ou_autocorrelation_checks(&cfg.model, k_ou, &vcfg)?);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        run.status = Status::ChecksFailed;
    }
    run.summary = if failed.is_empty() {
        format!("{} checks passed", checks.len())
    } else {
        format!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join(", "))
    };
    run.put("validation.csv", checks_csv(&checks));
    run.put("validation.json", pretty(&json!({ "ou_wavenumber": k_ou, "config": vcfg, "checks": checks })));
    run.derived = json!({ "shell_energy_constant": shell_energy_constant(cfg.model.d), "field": shells_json(&cfg.model, cfg) });
    Ok(run)
}
