//! Globally adaptive Gauss-Legendre quadrature on a geometrically graded mesh.
//!
//! Integrands of the form `k^p g(k)` on `[0, hi]` with `p > -1` (algebraic
//! endpoint singularity, `g` bounded) are handled by panels
//! `[hi 2^{-j-1}, hi 2^{-j}]` down to a floor, plus an innermost panel
//! `[0, h]` that is mapped by `k = h t^{1/(p+1)}` onto
//! `h^{p+1}/(p+1) ∫₀¹ g(h t^{1/(p+1)}) dt`, which removes the singularity.
//! Every panel error is estimated as `|G(a,b) - G(a,m) - G(m,b)|` and the
//! panel with the largest error is bisected until the total meets tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;
use thiserror::Error;

const GL_ORDER: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("adaptive quadrature did not converge: estimate {estimate:.6e}, error {error:.3e} > target {target:.3e}")]
    NotConverged { estimate: f64, error: f64, target: f64 },
    #[error("integrand is not finite at k = {at}")]
    NonFinite { at: f64 },
    #[error("integrand k^{power} is not integrable at k = 0")]
    Divergent { power: f64 },
}

/// Value and absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
}

impl Integral {
    pub const ZERO: Integral = Integral { value: 0.0, abs_error: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of panels kept in the adaptive queue.
    pub max_panels: usize,
    /// Graded mesh stops at `hi * 2^{-grading_depth}` unless a smaller floor is requested.
    pub grading_depth: i32,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions { abs_tol: 1e-15, rel_tol: 1e-11, max_panels: 20_000, grading_depth: 40 }
    }
}

fn gl_rule() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    static RULE: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    RULE.get_or_init(|| {
        let (x, w) = gauss_legendre(GL_ORDER);
        let mut xs = [0.0; GL_ORDER];
        let mut ws = [0.0; GL_ORDER];
        xs.copy_from_slice(&x);
        ws.copy_from_slice(&w);
        (xs, ws)
    })
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn gl(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (x, w) = gl_rule();
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = 0.0;
    for i in 0..GL_ORDER {
        s += w[i] * f(c + h * x[i]);
    }
    s * h
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    inner: bool,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

struct Problem<'a> {
    outer: &'a dyn Fn(f64) -> f64,
    inner: &'a dyn Fn(f64) -> f64,
}

impl Problem<'_> {
    fn panel(&self, a: f64, b: f64, inner: bool) -> Result<Panel, QuadratureError> {
        let f = if inner { self.inner } else { self.outer };
        let m = 0.5 * (a + b);
        let whole = gl(f, a, b);
        let halves = gl(f, a, m) + gl(f, m, b);
        if !halves.is_finite() || !whole.is_finite() {
            return Err(QuadratureError::NonFinite { at: m });
        }
        Ok(Panel { a, b, value: halves, error: (whole - halves).abs(), inner })
    }
}

fn run(problem: &Problem, initial: Vec<(f64, f64, bool)>, opts: &QuadratureOptions) -> Result<Integral, QuadratureError> {
    let mut heap = BinaryHeap::new();
    for (a, b, inner) in initial {
        if b > a {
            heap.push(problem.panel(a, b, inner)?);
        }
    }
    loop {
        let value: f64 = heap.iter().map(|p| p.value).sum();
        let error: f64 = heap.iter().map(|p| p.error).sum();
        let target = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= target {
            return Ok(Integral { value, abs_error: error });
        }
        if heap.len() >= opts.max_panels {
            return Err(QuadratureError::NotConverged { estimate: value, error, target });
        }
        let worst = heap.pop().expect("nonempty while error > 0");
        let m = 0.5 * (worst.a + worst.b);
        if !(m > worst.a && m < worst.b) {
            // panel cannot be split further in floating point
            return Err(QuadratureError::NotConverged { estimate: value, error, target });
        }
        heap.push(problem.panel(worst.a, m, worst.inner)?);
        heap.push(problem.panel(m, worst.b, worst.inner)?);
    }
}

/// Adaptive integral of a smooth-per-panel `f` over `[a, b]`, splitting at `breaks`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], opts: &QuadratureOptions) -> Result<Integral, QuadratureError> {
    if b <= a {
        return Ok(Integral::ZERO);
    }
    let mut pts = vec![a, b];
    pts.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let initial = pts.windows(2).map(|w| (w[0], w[1], false)).collect();
    let unused = |_: f64| 0.0;
    run(&Problem { outer: &f, inner: &unused }, initial, opts)
}

/// `∫_lo^hi k^power g(k) dk` for `g` bounded near 0.
///
/// `floor` lowers the graded mesh below the default `hi 2^{-grading_depth}`
/// when the integrand has structure at smaller scales.
pub fn power_weighted(
    power: f64,
    g: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    floor: Option<f64>,
    opts: &QuadratureOptions,
) -> Result<Integral, QuadratureError> {
    if hi <= lo {
        return Ok(Integral::ZERO);
    }
    let outer = |k: f64| {
        let gk = g(k);
        if gk == 0.0 {
            0.0
        } else {
            k.powf(power) * gk
        }
    };
    if lo > 0.0 {
        let mut pts = vec![lo, hi];
        pts.extend(breaks.iter().copied().filter(|x| *x > lo && *x < hi));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let initial = pts.windows(2).map(|w| (w[0], w[1], false)).collect();
        let unused = |_: f64| 0.0;
        return run(&Problem { outer: &outer, inner: &unused }, initial, opts);
    }
    if power <= -1.0 {
        return Err(QuadratureError::Divergent { power });
    }
    let mut h = hi * 2f64.powi(-opts.grading_depth);
    if let Some(fl) = floor {
        if fl > 0.0 && fl < h {
            h = fl;
        }
    }
    let mut pts = vec![hi];
    let mut x = hi * 0.5;
    while x > h {
        pts.push(x);
        x *= 0.5;
    }
    pts.push(h);
    pts.extend(breaks.iter().copied().filter(|x| *x > h && *x < hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut initial: Vec<(f64, f64, bool)> = pts.windows(2).map(|w| (w[0], w[1], false)).collect();
    initial.push((0.0, 1.0, true));
    let q = power + 1.0;
    let scale = h.powf(q) / q;
    let inner = |t: f64| scale * g(h * t.powf(1.0 / q));
    run(&Problem { outer: &outer, inner: &inner }, initial, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for deg in 0..32 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            assert!((q - exact).abs() < 1e-14, "degree {deg}: {q} vs {exact}");
        }
        let (x5, _) = gauss_legendre(5);
        assert!(x5[2].abs() < 1e-16);
    }

    #[test]
    fn smooth_integral() {
        let r = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, &[], &QuadratureOptions::default()).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(r.abs_error < 1e-10);
    }

    #[test]
    fn endpoint_power_singularities() {
        let opts = QuadratureOptions::default();
        for &p in &[-0.98, -0.5, -0.1, 0.0, 0.5, 1.3] {
            let r = power_weighted(p, |_| 1.0, 0.0, 1.0, &[], None, &opts).unwrap();
            let exact = 1.0 / (p + 1.0);
            assert!((r.value - exact).abs() < 1e-10 * exact, "p = {p}: {} vs {exact}", r.value);
        }
        let r = power_weighted(-0.5, |k: f64| (-k).exp(), 0.0, 4.0, &[], None, &opts).unwrap();
        // ∫₀⁴ k^{-1/2} e^{-k} dk = √π erf(2)
        let exact = std::f64::consts::PI.sqrt() * 0.995_322_265_018_952_7;
        assert!((r.value - exact).abs() < 1e-10);
    }

    #[test]
    fn divergent_power_rejected() {
        let e = power_weighted(-1.0, |_| 1.0, 0.0, 1.0, &[], None, &QuadratureOptions::default()).unwrap_err();
        assert!(matches!(e, QuadratureError::Divergent { .. }));
        // away from zero the same power is fine
        let r = power_weighted(-1.0, |_| 1.0, 0.5, 1.0, &[], None, &QuadratureOptions::default()).unwrap();
        assert!((r.value - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn discontinuity_at_breakpoint() {
        let step = |k: f64| if k >= 0.3 { 1.0 } else { 0.0 };
        let r = power_weighted(0.0, step, 0.0, 1.0, &[0.3], None, &QuadratureOptions::default()).unwrap();
        assert!((r.value - 0.7).abs() < 1e-12);
    }

    #[test]
    fn deep_floor_resolves_small_scale_structure() {
        // ∫₀¹ k / (k + s)² dk with s tiny: exact = ln((1+s)/s) - 1/(1+s)
        let s = 1e-30;
        let opts = QuadratureOptions::default();
        let r = power_weighted(1.0, |k| 1.0 / ((k + s) * (k + s)), 0.0, 1.0, &[], Some(s * 1e-3), &opts).unwrap();
        let exact = ((1.0 + s) / s).ln() - 1.0 / (1.0 + s);
        assert!((r.value - exact).abs() < 1e-9 * exact);
    }
}
