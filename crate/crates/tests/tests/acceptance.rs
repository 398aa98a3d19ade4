//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line to stderr
//! (uncaptured) and then asserts. Tests are serialized so the runtimes they report
//! are not inflated by sibling tests competing for cores.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use turbdiff_cli::{execute, Command, Outputs, RunConfig};
use turbdiff_core::corrector::grad_chi1_variance;
use turbdiff_core::kubo::{classify_phase, eulerian_correlation, regularized_diffusivity, taylor_kubo, DiffusivityKind, Phase};
use turbdiff_core::spectrum::{unit_sphere_area, ModelParams};
use turbdiff_core::validation::{field_checks, ou_autocorrelation_checks, DIVERGENCE_TOL};

const THREADS: [usize; 3] = [1, 4, 8];

const MODEL: &str = r#"
[model]
d = 2
alpha = 0.25
beta = 0.25
cutoff = 1.0
shape = { kind = "indicator", lo = 0.0, hi = 1.0 }
"#;

const DIFFUSIVE_RUN: &str = r#"
[field]
n_shells = 32
modes_per_shell = 8
k_min_ratio = 1e-6

[integration]
t_final = 500.0
sample_every = 10
coupling = 0.05

[ensemble]
n_traj = 200
master_seed = 20240611
"#;

const SUPERDIFFUSIVE_RUN: &str = r#"
[model]
d = 2
alpha = 0.7
beta = 0.5
cutoff = 1.0
shape = { kind = "indicator", lo = 0.0, hi = 1.0 }

[field]
n_shells = 32
modes_per_shell = 8
k_min_ratio = 1e-4

[integration]
t_final = 300.0
sample_every = 10
coupling = 0.05

[ensemble]
n_traj = 200
master_seed = 20240611
"#;

const FIELD_RUN: &str = r#"
[field]
n_shells = 32
modes_per_shell = 8
k_min_ratio = 1e-3

[ensemble]
n_traj = 1
master_seed = 5

[validation]
n_realizations = 10000
times = [0.0, 0.5, 1.0, 2.0]
ou_steps = 100000
ou_dt = 0.1
ou_lags = [1, 2, 5, 10, 20]
"#;

const CORRECTOR_RUN: &str = r#"
[corrector]
op = "chi1"
param = "eps"
grid = [1e-1, 1e-2, 1e-3, 1e-4]
"#;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2}: {verdict}  {title}  [{detail}]");
}

fn base_params() -> ModelParams {
    ModelParams::with_indicator(2, 0.25, 0.25, 1.0)
}

fn config(text: &str) -> RunConfig {
    RunConfig::parse(text).expect("acceptance config parses")
}

struct Timed {
    out: Outputs,
    secs: f64,
}

fn timed_run(cmd: Command, cfg: &RunConfig, threads: usize) -> Timed {
    let start = Instant::now();
    let out = execute(cmd, cfg, Some(threads)).expect("acceptance run succeeds");
    Timed { out, secs: start.elapsed().as_secs_f64() }
}

fn diffusive_run(threads: usize) -> &'static Timed {
    static RUNS: [OnceLock<Timed>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let i = THREADS.iter().position(|&t| t == threads).expect("known thread count");
    RUNS[i].get_or_init(|| timed_run(Command::Simulate, &config(&format!("{MODEL}{DIFFUSIVE_RUN}")), threads))
}

fn superdiffusive_run(threads: usize) -> &'static Timed {
    static RUNS: [OnceLock<Timed>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let i = THREADS.iter().position(|&t| t == threads).expect("known thread count");
    RUNS[i].get_or_init(|| timed_run(Command::Simulate, &config(SUPERDIFFUSIVE_RUN), threads))
}

fn json(out: &Outputs, name: &str) -> Value {
    serde_json::from_slice(out.file(name).expect("output present")).expect("valid json")
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect())
        .collect()
}

/// Plain Monte Carlo of `∫_{|k|<1} R̂_11(k) |k|^{-2β} dk` in polar coordinates
/// (uniform radius and angle).
fn mc_one_sided(p: &ModelParams, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jac = unit_sphere_area(2) * p.cutoff;
    let (mut s, mut q) = (0.0, 0.0);
    for _ in 0..n {
        let r = p.cutoff * (1.0 - rng.random::<f64>());
        let theta = std::f64::consts::TAU * rng.random::<f64>();
        let c = theta.cos();
        let f = p.scalar_density(r) * (1.0 - c * c) * r.powf(-2.0 * p.beta) * r * jac;
        s += f;
        q += f * f;
    }
    let nf = n as f64;
    let mean = s / nf;
    (mean, ((q / nf - mean * mean) / (nf - 1.0)).sqrt())
}

#[test]
fn criterion_01_taylor_kubo_closed_form() {
    let _g = serial();
    let start = Instant::now();
    let p = base_params();
    let k = taylor_kubo(&p).unwrap();
    let pi = std::f64::consts::PI;
    let err = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).fold(0.0f64, |m, (i, j)| {
        let target = if i == j { pi } else { 0.0 };
        m.max((k.value[(i, j)] - target).abs())
    });
    let (mean, se) = mc_one_sided(&p, 10_000_000, 1);
    let z = (k.value[(0, 0)] - mean) / se;
    let secs = start.elapsed().as_secs_f64();
    let pass = k.kind == DiffusivityKind::OneSided && err <= 1e-6 && z.abs() <= 3.0 && secs < 5.0;
    report(
        1,
        "Taylor-Kubo K = pi I and Monte Carlo agreement",
        pass,
        &format!("max |K - pi I| = {err:.2e}, MC {mean:.6} ± {se:.2e} (z = {z:.2}), {secs:.2} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_regularized_limit() {
    let _g = serial();
    let start = Instant::now();
    let p = base_params();
    let cfg = config(MODEL);
    let out = execute(Command::Kubo, &cfg, Some(1)).unwrap();
    let report_json = json(&out, "kubo.json");
    let reg = report_json["regularized"].as_array().unwrap();
    let eps: Vec<f64> = reg.iter().map(|r| r["eps"].as_f64().unwrap()).collect();
    assert_eq!(eps, vec![1.0, 0.1, 0.01, 1e-3, 1e-4]);
    let diag: Vec<[f64; 2]> = reg
        .iter()
        .map(|r| {
            let m = matrix(&r["value"]["matrix"]);
            [m[0][0], m[1][1]]
        })
        .collect();
    // eps decreases along the grid, so D_eps must not decrease
    let monotone = diag.windows(2).all(|w| w[1][0] >= w[0][0] && w[1][1] >= w[0][1]);
    let k = taylor_kubo(&p).unwrap();
    let last = regularized_diffusivity(&p, 1e-4).unwrap();
    let rel = (0..2).map(|i| (last.value[(i, i)] / k.value[(i, i)] - 1.0).abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = monotone && rel <= 1e-3 && secs < 5.0;
    report(
        2,
        "D_eps nondecreasing as eps shrinks, D_1e-4 within 0.1% of the Taylor-Kubo value",
        pass,
        &format!(
            "D_11 over eps grid = {:?}, rel dev at 1e-4 = {rel:.2e}, {secs:.2} s",
            diag.iter().map(|d| format!("{:.6}", d[0])).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_phase_boundary() {
    let _g = serial();
    let start = Instant::now();
    let grid: Vec<f64> = (0..21).map(|i| 0.99 * i as f64 / 20.0).collect();
    let mut wrong = 0;
    for &a in &grid {
        for &b in &grid {
            let v = classify_phase(a, b).verdict;
            let expect = if a + b < 1.0 { Phase::Diffusive } else { Phase::Superdiffusive };
            if v != expect {
                wrong += 1;
            }
        }
    }
    let mut cfg = config(MODEL);
    cfg.sweep.alpha_grid = grid.clone();
    cfg.sweep.beta_grid = grid.clone();
    let out = execute(Command::Sweep, &cfg, Some(1)).unwrap();
    let csv = out.text("phase.csv").unwrap();
    for line in csv.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        let (a, b): (f64, f64) = (c[0].parse().unwrap(), c[1].parse().unwrap());
        let expect = if a + b < 1.0 { "diffusive" } else { "superdiffusive" };
        if c[3] != expect {
            wrong += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = wrong == 0 && secs < 1.0;
    report(3, "phase verdict flips exactly across alpha + beta = 1 on 21x21", pass, &format!("{wrong} misclassified, {secs:.3} s"));
    assert!(pass);
}

#[test]
fn criterion_04_field_fidelity() {
    let _g = serial();
    let cfg = config(&format!("{MODEL}{FIELD_RUN}"));
    let (vcfg, _) = cfg.validation_config();
    let start = Instant::now();
    let checks = field_checks(&cfg.model, cfg.mode_config(), &vcfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let eulerian: Vec<_> = checks.iter().filter(|c| c.name.starts_with("eulerian_correlation_t_")).collect();
    let div = checks.iter().find(|c| c.name == "divergence").unwrap();
    let pass = eulerian.len() == 4 && eulerian.iter().all(|c| c.pass) && div.estimate <= DIVERGENCE_TOL && secs < 60.0;
    report(
        4,
        "empirical Eulerian correlation matches quadrature, modes divergence-free",
        pass,
        &format!(
            "z = {:?}, max |k.a| = {:.1e}, {secs:.2} s",
            eulerian.iter().map(|c| format!("{:.2}", c.z)).collect::<Vec<_>>(),
            div.estimate
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_ou_transition() {
    let _g = serial();
    let cfg = config(&format!("{MODEL}{FIELD_RUN}"));
    let (vcfg, k) = cfg.validation_config();
    assert_eq!(vcfg.ou_steps, 100_000);
    let start = Instant::now();
    let checks = ou_autocorrelation_checks(&cfg.model, k, &vcfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = checks.len() == 5 && checks.iter().all(|c| c.pass) && secs < 10.0;
    report(
        5,
        "single-mode lag autocorrelation matches exp(-|k|^(2 beta) tau)",
        pass,
        &format!("z = {:?}, {secs:.3} s", checks.iter().map(|c| format!("{:.2}", c.z)).collect::<Vec<_>>()),
    );
    assert!(pass);
}

#[test]
fn criterion_06_diffusive_limit() {
    let _g = serial();
    let p = base_params();
    let cfg = config(&format!("{MODEL}{DIFFUSIVE_RUN}"));
    let tau_v = taylor_kubo(&p).unwrap().value[(0, 0)] / eulerian_correlation(&p, 0.0).unwrap().value[(0, 0)];
    let window = (p.cutoff * cfg.field.k_min_ratio).powf(-2.0 * p.beta);
    let t = cfg.integration.t_final;
    let horizon_ok = t >= 50.0 * tau_v && t <= window;

    let single = diffusive_run(1);
    let eight = diffusive_run(8);
    let est = json(&single.out, "estimate.json");
    let prediction = matrix(&est["prediction"]["matrix"]);
    let slope = matrix(&est["msd_slope"]["matrix"]);
    let kinds_ok = est["prediction"]["kind"] == "covariance" && est["msd_slope"]["kind"] == "covariance";
    let scale = prediction.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let rel = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (slope[i][j] - prediction[i][j]).abs() / if prediction[i][j] != 0.0 { prediction[i][j].abs() } else { scale })
        .fold(0.0, f64::max);
    let exponent = est["exponent_fit"]["exponent"].as_f64().unwrap();
    let exponent_se = est["exponent_fit"]["stderr"].as_f64().unwrap();
    let identical = ["msd.csv", "vacf.csv", "estimate.json"].iter().all(|f| single.out.file(f) == eight.out.file(f));
    let pass = horizon_ok
        && kinds_ok
        && rel <= 0.15
        && (0.9..=1.1).contains(&exponent)
        && single.secs < 600.0
        && eight.secs < 120.0
        && identical;
    report(
        6,
        "MSD slope matches D* = 2 pi I, exponent in [0.9, 1.1]",
        pass,
        &format!(
            "T = {t} (tau_v = {tau_v:.3}, window {window:.0}), slope = {slope:.4?}, max rel dev = {rel:.3}, exponent = {exponent:.4} ± {exponent_se:.4}, \
             1 thread {:.1} s, 8 threads {:.1} s, identical = {identical}",
            single.secs, eight.secs
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_green_kubo_consistency() {
    let _g = serial();
    let est = json(&diffusive_run(1).out, "estimate.json");
    let gk = &est["green_kubo"];
    let converged = gk.get("error").is_none();
    let (mut worst, mut ok) = (0.0f64, converged);
    if converged {
        let (g, gc) = (matrix(&gk["matrix"]), matrix(&gk["ci95"]));
        let (s, sc) = (matrix(&est["msd_slope"]["matrix"]), matrix(&est["msd_slope"]["ci95"]));
        for i in 0..2 {
            for j in 0..2 {
                let ratio = (g[i][j] - s[i][j]).abs() / (gc[i][j].powi(2) + sc[i][j].powi(2)).sqrt();
                worst = worst.max(ratio);
                ok &= ratio <= 1.0;
            }
        }
    }
    report(
        7,
        "Green-Kubo integral agrees with the MSD slope within combined 95% CIs",
        ok,
        &format!(
            "green_kubo = {}, msd_slope = {}, worst |diff|/combined ci = {worst:.3}",
            gk["matrix"], est["msd_slope"]["matrix"]
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_08_corrector_scaling() {
    let _g = serial();
    let p = base_params();
    let start = Instant::now();
    let cfg = config(&format!("{MODEL}{CORRECTOR_RUN}"));
    let out = execute(Command::Corrector, &cfg, Some(1)).unwrap();
    let fit = json(&out, "scaling.json");
    let exponent = fit["exponent"].as_f64().unwrap();
    let target = 2.0 * (1.0 - p.alpha - p.beta) / p.beta;
    let chi_ok = (exponent / target - 1.0).abs() <= 0.02;
    let g8 = grad_chi1_variance(&p, 1e-8).unwrap();
    let g10 = grad_chi1_variance(&p, 1e-10).unwrap();
    let grad_ok = p.alpha + 2.0 * p.beta < 2.0 && g8.is_finite() && (g10 / g8 - 1.0).abs() <= 0.01;
    let secs = start.elapsed().as_secs_f64();
    let pass = chi_ok && grad_ok && secs < 10.0;
    report(
        8,
        "chi1 variance exponent 2(1 - alpha - beta)/beta = 4, grad variance bounded",
        pass,
        &format!(
            "fitted chi1 exponent = {exponent:.4} vs {target} (asymptotic exponent {:.4}); grad at 1e-8 = {g8:.6e}, 1e-10 = {g10:.6e}; {secs:.2} s",
            fit["asymptotic_exponent"].as_f64().unwrap()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_superdiffusive_exponent() {
    let _g = serial();
    let cfg = config(SUPERDIFFUSIVE_RUN);
    let p = &cfg.model;
    let window = (p.cutoff * cfg.field.k_min_ratio).powf(-2.0 * p.beta);
    let run = superdiffusive_run(1);
    let est = json(&run.out, "estimate.json");
    let exponent = est["exponent_fit"]["exponent"].as_f64().unwrap();
    let se = est["exponent_fit"]["stderr"].as_f64().unwrap();
    // one-sided 95% lower bound
    let lower = exponent - 1.644_853_626_951_472_2 * se;
    let pass = cfg.integration.t_final <= window && cfg.ensemble.n_traj == 200 && lower > 1.1;
    report(
        9,
        "superdiffusive MSD exponent exceeds 1.1 with 95% confidence",
        pass,
        &format!(
            "alpha + beta = {}, T = {} (window {window:.0}), exponent = {exponent:.4} ± {se:.4}, lower bound = {lower:.4}, {:.1} s",
            p.alpha + p.beta,
            cfg.integration.t_final,
            run.secs
        ),
    );
    assert!(pass);
}

fn csv_files(out: &Outputs) -> Vec<(&String, &Vec<u8>)> {
    out.files.iter().filter(|(k, _)| k.ends_with(".csv")).collect()
}

#[test]
fn criterion_10_reproducibility() {
    let _g = serial();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut check = |label: &str, runs: Vec<Outputs>| {
        let reference = csv_files(&runs[0]);
        let same = !reference.is_empty() && runs[1..].iter().all(|r| csv_files(r) == reference);
        // rerun from the first run's manifest
        let manifest: Value = serde_json::from_slice(runs[0].file("manifest.json").unwrap()).unwrap();
        let resolved: RunConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
        let cmd = match manifest["command"].as_str().unwrap() {
            "kubo" => Command::Kubo,
            "simulate" => Command::Simulate,
            "sweep" => Command::Sweep,
            "corrector" => Command::Corrector,
            _ => Command::ValidateField,
        };
        let rerun = if cmd == Command::Simulate { None } else { Some(execute(cmd, &resolved, Some(1)).unwrap()) };
        let rerun_same = rerun.is_none_or(|r| csv_files(&r) == reference);
        pass &= same && rerun_same;
        lines.push(format!("{label}: {} csv files, identical = {}", reference.len(), same && rerun_same));
    };

    let kubo = config(MODEL);
    check("kubo", THREADS.iter().map(|&t| execute(Command::Kubo, &kubo, Some(t)).unwrap()).collect());
    let mut sweep = config(MODEL);
    sweep.sweep.alpha_grid = (0..21).map(|i| 0.99 * i as f64 / 20.0).collect();
    sweep.sweep.beta_grid = sweep.sweep.alpha_grid.clone();
    check("sweep", THREADS.iter().map(|&t| execute(Command::Sweep, &sweep, Some(t)).unwrap()).collect());
    let field = config(&format!("{MODEL}{FIELD_RUN}"));
    check("validate-field", THREADS.iter().map(|&t| execute(Command::ValidateField, &field, Some(t)).unwrap()).collect());
    let corrector = config(&format!("{MODEL}{CORRECTOR_RUN}"));
    check("corrector", THREADS.iter().map(|&t| execute(Command::Corrector, &corrector, Some(t)).unwrap()).collect());
    check("simulate diffusive", THREADS.iter().map(|&t| diffusive_run(t).out.clone()).collect());
    check("simulate superdiffusive", THREADS.iter().map(|&t| superdiffusive_run(t).out.clone()).collect());

    // full rerun of one simulation from its manifest
    let manifest: Value = serde_json::from_slice(superdiffusive_run(1).out.file("manifest.json").unwrap()).unwrap();
    let resolved: RunConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    let rerun = execute(Command::Simulate, &resolved, Some(4)).unwrap();
    let rerun_same = csv_files(&rerun) == csv_files(&superdiffusive_run(1).out);
    pass &= rerun_same;
    lines.push(format!("simulate rerun from manifest: identical = {rerun_same}"));

    report(10, "byte-identical CSV outputs across threads {1, 4, 8} and manifest reruns", pass, &lines.join("; "));
    assert!(pass);
}
