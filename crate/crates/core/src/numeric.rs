//! Small numerical kernels shared by the solvers: bracketed root finding,
//! Euclidean projection onto the simplex, adaptive quadrature, an adaptive
//! RK4 integrator for scalar ODEs, and log-log slope estimators.

/// Brent's method on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite sign
/// (or one of them zero). Returns the root estimate.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, xtol: f64, max_iter: usize) -> f64 {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    debug_assert!(fa.signum() != fb.signum(), "root not bracketed");
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    b
}

/// Euclidean projection of `v` onto `{x : x >= 0, sum x = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Result of [`integrate_scalar_ode`].
#[derive(Debug, Clone)]
pub struct OdeTrajectory {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    /// True when the step size collapsed before reaching the end point.
    pub underflow: bool,
}

/// Tuning for [`integrate_scalar_ode`].
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub h0: f64,
    pub atol: f64,
    pub rtol: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            h0: 1e-3,
            atol: 1e-13,
            rtol: 1e-12,
            h_min: 1e-14,
            max_steps: 2_000_000,
        }
    }
}

/// Classical RK4 with step-doubling error control for `y' = f(t, y)`.
///
/// `admissible(y)` rejects states outside the domain of `f` (the step is then
/// halved); `stop(t, y)` ends integration early once it returns true.
pub fn integrate_scalar_ode<F, A, S>(
    f: F,
    admissible: A,
    stop: S,
    t0: f64,
    y0: f64,
    t_end: f64,
    opts: OdeOptions,
) -> OdeTrajectory
where
    F: Fn(f64, f64) -> f64,
    A: Fn(f64) -> bool,
    S: Fn(f64, f64) -> bool,
{
    let rk4 = |t: f64, y: f64, h: f64| -> Option<f64> {
        let k1 = f(t, y);
        let y2 = y + 0.5 * h * k1;
        if !admissible(y2) {
            return None;
        }
        let k2 = f(t + 0.5 * h, y2);
        let y3 = y + 0.5 * h * k2;
        if !admissible(y3) {
            return None;
        }
        let k3 = f(t + 0.5 * h, y3);
        let y4 = y + h * k3;
        if !admissible(y4) {
            return None;
        }
        let k4 = f(t + h, y4);
        let out = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        (admissible(out) && out.is_finite()).then_some(out)
    };

    let mut t = t0;
    let mut y = y0;
    let mut h = opts.h0.min(t_end - t0);
    let mut ts = vec![t];
    let mut ys = vec![y];
    let mut underflow = false;
    for _ in 0..opts.max_steps {
        if t >= t_end || stop(t, y) {
            break;
        }
        h = h.min(t_end - t);
        if h < opts.h_min * t.abs().max(1.0) {
            underflow = true;
            break;
        }
        let full = rk4(t, y, h);
        let half = rk4(t, y, 0.5 * h).and_then(|ym| rk4(t + 0.5 * h, ym, 0.5 * h));
        let (Some(full), Some(half)) = (full, half) else {
            h *= 0.5;
            continue;
        };
        let err = (half - full).abs() / 15.0;
        let scale = opts.atol + opts.rtol * half.abs();
        if err <= scale {
            t += h;
            y = half + (half - full) / 15.0;
            if !admissible(y) {
                y = half;
            }
            ts.push(t);
            ys.push(y);
            let grow = if err == 0.0 { 2.0 } else { 0.9 * (scale / err).powf(0.2) };
            h *= grow.clamp(0.2, 2.0);
        } else {
            h *= (0.9 * (scale / err).powf(0.2)).clamp(0.1, 0.5);
        }
    }
    OdeTrajectory { t: ts, y: ys, underflow }
}

/// Central three-point derivative on a possibly non-uniform grid, at the
/// interior nodes `1..n-1`.
pub fn central_differences(x: &[f64], y: &[f64]) -> Vec<f64> {
    (1..x.len().saturating_sub(1))
        .map(|i| {
            let h1 = x[i] - x[i - 1];
            let h2 = x[i + 1] - x[i];
            -h2 / (h1 * (h1 + h2)) * y[i - 1] + (h2 - h1) / (h1 * h2) * y[i] + h1 / (h2 * (h1 + h2)) * y[i + 1]
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(&a, &b)| a > 0.0 && b > 0.0)
        .map(|(&a, &b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Local log-log slope `d ln f / d ln x` at `x`, by a symmetric difference in
/// `ln x` with relative half-width `rel`.
pub fn loglog_elasticity<F: Fn(f64) -> f64>(f: F, x: f64, rel: f64) -> f64 {
    let lo = x * (-rel).exp();
    let hi = x * rel.exp();
    (f(hi).ln() - f(lo).ln()) / (2.0 * rel)
}

/// `n` points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// `n` log-spaced points from `a` to `b` inclusive (`a, b > 0`).
pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}
