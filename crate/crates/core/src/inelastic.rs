//! Continuous-price exchange with price-insensitive buyers (`beta = 1`).
//!
//! With uniform patience (`gamma = 1`) and load `rho < 1` the equilibrium
//! price CDF is available in closed form on a bounded support `[0, K]`,
//! `K = (delta_bar / mu) * rho / (1 - rho)`. At `rho = 1` the support is
//! unbounded and, for power-law patience `F(x) = (x / delta_bar)^gamma`, the
//! price survival function is a pure power of `1 + c p` with
//! `c = (2 gamma - 1) mu / (2 gamma delta_bar)`.
//!
//! The saturated case `rho = 1` always takes its own code path.

use crate::error::{Error, Result};
use crate::numeric::{self, central_differences, integrate_scalar_ode, OdeOptions};
use crate::queue::two_class_conditional_mean;

/// Grid points with `1 - F` below this are skipped by [`ode_residual`].
pub const RESIDUAL_CUTOFF: f64 = 1e-6;
/// [`integrate_ode`] stops once `1 - F` falls below this.
pub const TERMINAL_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InelasticParams {
    /// Load `lambda / mu`, in `(0, 1]`.
    pub rho: f64,
    pub mu: f64,
    pub delta_bar: f64,
    /// Patience exponent in `(1/2, 1]`; 1 is uniform patience.
    pub gamma: f64,
}

impl InelasticParams {
    pub fn new(rho: f64, mu: f64, delta_bar: f64, gamma: f64) -> Result<Self> {
        let p = Self {
            rho,
            mu,
            delta_bar,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.delta_bar > 0.0 && self.delta_bar.is_finite()) {
            return Err(Error::invalid(format!("delta_bar must be positive, got {}", self.delta_bar)));
        }
        if !(self.gamma > 0.5 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (1/2, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn is_saturated(&self) -> bool {
        self.rho == 1.0
    }

    fn is_uniform(&self) -> bool {
        self.gamma == 1.0
    }

    /// Upper end `K` of the price support; infinite at `rho = 1`.
    pub fn support(&self) -> f64 {
        if self.is_saturated() {
            f64::INFINITY
        } else {
            self.delta_bar / self.mu * self.rho / (1.0 - self.rho)
        }
    }

    /// `c = (2 gamma - 1) mu / (2 gamma delta_bar)`, the price scale of the saturated tail.
    pub fn tail_scale(&self) -> f64 {
        (2.0 * self.gamma - 1.0) * self.mu / (2.0 * self.gamma * self.delta_bar)
    }

    /// Exponent of the saturated price survival function, `gamma / (2 gamma - 1)`.
    pub fn tail_exponent(&self) -> f64 {
        self.gamma / (2.0 * self.gamma - 1.0)
    }

    fn require_uniform_unsaturated(&self, what: &str) -> Result<()> {
        if self.is_saturated() {
            return Err(Error::invalid(format!("{what} needs rho < 1; use the rho = 1 closed forms")));
        }
        if !self.is_uniform() {
            return Err(Error::invalid(format!("{what} needs uniform patience (gamma = 1) when rho < 1")));
        }
        Ok(())
    }

    fn require_saturated(&self, what: &str) -> Result<()> {
        if !self.is_saturated() {
            return Err(Error::invalid(format!("{what} is defined at rho = 1 only")));
        }
        Ok(())
    }
}

/// Expected surplus `p - (delta / mu) [rho F / (1 - rho F)^2 + 1 / (1 - rho F)]`
/// of posting at `p` when a fraction `F` of sellers post below `p`.
pub fn surplus(params: &InelasticParams, p: f64, delta: f64, f_at_p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f_at_p) {
        return Err(Error::invalid(format!("CDF value must lie in [0, 1], got {f_at_p}")));
    }
    let load = params.rho * f_at_p;
    if load >= 1.0 {
        return Err(Error::invalid("rho * F >= 1: execution time is infinite"));
    }
    let free = 1.0 - load;
    Ok(p - delta / params.mu * (load / (free * free) + 1.0 / free))
}

/// Patience of the seller for whom `p` is optimal, from the first-order
/// condition: `delta(p) = (mu / 2) (1 - rho F)^3 / (rho * density)`.
pub fn delta_of_price(params: &InelasticParams, f_at_p: f64, density_at_p: f64) -> Result<f64> {
    if !(density_at_p > 0.0) {
        return Err(Error::invalid("price density must be positive"));
    }
    let free = 1.0 - params.rho * f_at_p;
    Ok(0.5 * params.mu * free * free * free / (params.rho * density_at_p))
}

/// Closed-form equilibrium price CDF for `rho < 1` and uniform patience.
///
/// Uses the algebraically equivalent rationalised form
/// `F = (u - 1) / (rho u + sqrt(1 - (1 - rho)(1 + rho u)))`, `u = 1 + mu p / delta_bar`,
/// which avoids cancellation near `p = 0`.
pub fn equilibrium_cdf(params: &InelasticParams, p: f64) -> Result<f64> {
    params.require_uniform_unsaturated("equilibrium_cdf")?;
    if p <= 0.0 {
        return Ok(0.0);
    }
    if p >= params.support() {
        return Ok(1.0);
    }
    let rho = params.rho;
    let u = 1.0 + params.mu * p / params.delta_bar;
    let root = (1.0 - (1.0 - rho) * (1.0 + rho * u)).max(0.0).sqrt();
    Ok(((u - 1.0) / (rho * u + root)).min(1.0))
}

/// Limit of the equilibrium CDF as `rho -> 1`: `1 - 2 delta_bar / (2 delta_bar + mu p)`.
pub fn limit_cdf(params: &InelasticParams, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    1.0 - 2.0 * params.delta_bar / (2.0 * params.delta_bar + params.mu * p)
}

/// Saturated price survival `1 - F = (1 + c p)^(-gamma / (2 gamma - 1))`.
pub fn gamma_tail(params: &InelasticParams, p: f64) -> Result<f64> {
    params.require_saturated("gamma_tail")?;
    if p <= 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 + params.tail_scale() * p).powf(-params.tail_exponent()))
}

/// Equilibrium price CDF from whichever closed form applies.
pub fn price_cdf(params: &InelasticParams, p: f64) -> Result<f64> {
    if params.is_saturated() {
        Ok(1.0 - gamma_tail(params, p)?)
    } else {
        equilibrium_cdf(params, p)
    }
}

/// Price at which the equilibrium CDF equals `q`: the exact inverse of
/// [`price_cdf`], obtained by integrating `dp/dF` in closed form.
pub fn price_quantile(params: &InelasticParams, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level must lie in [0, 1], got {q}")));
    }
    if params.is_saturated() {
        if q == 1.0 {
            return Ok(f64::INFINITY);
        }
        let x = (1.0 - q).powf(-1.0 / params.tail_exponent());
        return Ok((x - 1.0) / params.tail_scale());
    }
    params.require_uniform_unsaturated("price_quantile")?;
    let rho = params.rho;
    let y = 1.0 - rho * q;
    let p = 2.0 * params.delta_bar / (params.mu * rho) * ((rho - 1.0) / (2.0 * y * y) + 1.0 / y - 0.5 * (rho + 1.0));
    Ok(p.clamp(0.0, params.support()))
}

/// Equilibrium price density, by analytic differentiation of the closed form.
/// Infinite at `p = K` for `rho < 1`, zero beyond it.
pub fn equilibrium_density(params: &InelasticParams, p: f64) -> Result<f64> {
    if params.is_saturated() {
        let c = params.tail_scale();
        let x = 1.0 + c * p.max(0.0);
        let e = (3.0 * params.gamma - 1.0) / (2.0 * params.gamma - 1.0);
        return Ok(0.5 * params.mu / params.delta_bar * x.powf(-e));
    }
    params.require_uniform_unsaturated("equilibrium_density")?;
    let k = params.support();
    if p > k {
        return Ok(0.0);
    }
    if p == k {
        return Ok(f64::INFINITY);
    }
    let rho = params.rho;
    let u = 1.0 + params.mu * p.max(0.0) / params.delta_bar;
    let root = (1.0 - (1.0 - rho) * (1.0 + rho * u)).max(0.0).sqrt();
    if root == 0.0 {
        return Ok(f64::INFINITY);
    }
    let droot = -(1.0 - rho) * rho / (2.0 * root);
    let den = rho * u + root;
    let df_du = (den - (u - 1.0) * (rho + droot)) / (den * den);
    Ok(df_du * params.mu / params.delta_bar)
}

/// Right-hand side of the equilibrium ODE,
/// `dF/dp = mu / (2 delta_bar) * (1 - rho F)^3 / (rho (1 - F)^(1/gamma))`.
pub fn ode_rhs(params: &InelasticParams, f: f64) -> f64 {
    let free = 1.0 - params.rho * f;
    0.5 * params.mu / params.delta_bar * free * free * free / (params.rho * (1.0 - f).powf(1.0 / params.gamma))
}

/// Sup-norm mismatch between central-difference slopes of `f_values` on
/// `grid` and [`ode_rhs`], over interior nodes with `1 - F >= 1e-6`.
pub fn ode_residual(params: &InelasticParams, grid: &[f64], f_values: &[f64]) -> Result<f64> {
    if grid.len() != f_values.len() || grid.len() < 3 {
        return Err(Error::invalid("grid and values need equal length >= 3"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("price grid must be strictly increasing"));
    }
    if f_values.windows(2).any(|w| w[1] < w[0]) || f_values.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid("CDF values must be non-decreasing in [0, 1]"));
    }
    let slopes = central_differences(grid, f_values);
    Ok(slopes
        .iter()
        .zip(&f_values[1..])
        .filter(|(_, &f)| 1.0 - f >= RESIDUAL_CUTOFF)
        .map(|(&d, &f)| (d - ode_rhs(params, f)).abs())
        .fold(0.0, f64::max))
}

/// `n` prices from 0 to `p_end` spaced log-uniformly in `1 - F`, so the
/// grid refines wherever the CDF bends.
pub fn quantile_grid(params: &InelasticParams, p_end: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid("grid needs at least two points"));
    }
    let f_end = price_cdf(params, p_end)?;
    if f_end >= 1.0 {
        return Err(Error::invalid("grid end must lie strictly inside the support"));
    }
    let mut grid = numeric::geomspace(1.0, 1.0 - f_end, n)
        .into_iter()
        .map(|gap| price_quantile(params, 1.0 - gap))
        .collect::<Result<Vec<_>>>()?;
    grid[0] = 0.0;
    grid[n - 1] = p_end;
    // guard against ties from rounding at the very ends
    for i in 1..n {
        if grid[i] <= grid[i - 1] {
            grid[i] = grid[i - 1].next_up();
        }
    }
    Ok(grid)
}

/// Numerical solution of the equilibrium ODE from `F(0) = 0`.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub grid: Vec<f64>,
    pub f_values: Vec<f64>,
    /// Last price reached.
    pub reached_p: f64,
    /// The step size collapsed against the singularity before `p_max`
    /// or the terminal gap was reached.
    pub underflow: bool,
}

/// Integrates the equilibrium ODE on `[0, p_max]` with an adaptive RK4
/// (step doubling) that halves its step as `F -> 1`. Stops at `p_max`, when
/// `1 - F < 1e-9`, or when the step underflows.
pub fn integrate_ode(params: &InelasticParams, p_max: f64, opts: OdeOptions) -> Result<OdeSolution> {
    params.validate()?;
    if !(p_max > 0.0) {
        return Err(Error::invalid("p_max must be positive"));
    }
    let traj = integrate_scalar_ode(
        |_, f| ode_rhs(params, f),
        |f| f < 1.0,
        |_, f| 1.0 - f < TERMINAL_GAP,
        0.0,
        0.0,
        p_max,
        opts,
    );
    let reached_p = *traj.t.last().unwrap_or(&0.0);
    Ok(OdeSolution {
        grid: traj.t,
        f_values: traj.y,
        reached_p,
        underflow: traj.underflow,
    })
}

/// Expected order density at price `p`.
///
/// `gamma = 1, rho < 1`: `mu/(2 delta_bar) (1 + (1 - rho) F / (1 - F))` on `[0, K)`.
/// `rho = 1`: `mu/(2 delta_bar) (1 + c p)^((1 - gamma) / (2 gamma - 1))`.
pub fn inventory_density(params: &InelasticParams, p: f64) -> Result<f64> {
    let base = 0.5 * params.mu / params.delta_bar;
    if p < 0.0 {
        return Err(Error::invalid("price must be non-negative"));
    }
    if params.is_saturated() {
        let e = (1.0 - params.gamma) / (2.0 * params.gamma - 1.0);
        return Ok(base * (1.0 + params.tail_scale() * p).powf(e));
    }
    params.require_uniform_unsaturated("inventory_density")?;
    if p >= params.support() {
        return Err(Error::invalid(format!("price {p} outside the support [0, {})", params.support())));
    }
    let f = equilibrium_cdf(params, p)?;
    Ok(base * (1.0 + (1.0 - params.rho) * f / (1.0 - f)))
}

/// Expected number of orders priced in `(s, p]` given the best price is `s`:
/// the two-class conditional mean with `r1 = rho F(s)`, `r2 = rho (F(p) - F(s))`.
pub fn conditional_count(params: &InelasticParams, p: f64, s: f64) -> Result<f64> {
    if !(p >= s && s >= 0.0) {
        return Err(Error::invalid(format!("need p >= s >= 0, got p = {p}, s = {s}")));
    }
    let r1 = params.rho * price_cdf(params, s)?;
    let r2 = params.rho * price_cdf(params, p)?;
    Ok(two_class_conditional_mean(r1, r2 - r1))
}

/// `d/dp` of [`conditional_count`]:
/// `(1 - 3 r1 + r1^2 + 2 r1 r2 - r1 r2^2) / ((1 - r1)^2 (1 - r2)^2) * rho * alpha_P(p)`
/// with `r1 = rho F(s)`, `r2 = rho F(p)`.
pub fn conditional_density(params: &InelasticParams, p: f64, s: f64) -> Result<f64> {
    if !(p >= s && s >= 0.0) {
        return Err(Error::invalid(format!("need p >= s >= 0, got p = {p}, s = {s}")));
    }
    let r1 = params.rho * price_cdf(params, s)?;
    let r2 = params.rho * price_cdf(params, p)?;
    if r2 >= 1.0 {
        return Ok(f64::INFINITY);
    }
    let density = equilibrium_density(params, p)?;
    let a = 1.0 - r1;
    let b = 1.0 - r2;
    let bracket = (1.0 - 3.0 * r1 + r1 * r1 + 2.0 * r1 * r2 - r1 * r2 * r2) / (a * a * b * b);
    Ok(bracket * params.rho * density)
}

/// Market depth `D(p) = int_0^p Q(u) du`.
///
/// Below saturation this is the expected number of orders priced under `p`,
/// `rho F / (1 - rho F)`; at `rho = 1` it is integrated by adaptive quadrature.
pub fn market_depth(params: &InelasticParams, p: f64) -> Result<f64> {
    if p < 0.0 {
        return Err(Error::invalid("price must be non-negative"));
    }
    if !params.is_saturated() {
        let load = params.rho * equilibrium_cdf(params, p)?;
        return Ok(load / (1.0 - load));
    }
    let q = |u: f64| inventory_density(params, u).unwrap_or(f64::NAN);
    let scale = q(p).max(q(0.0)) * p.max(1.0);
    Ok(numeric::integrate(q, 0.0, p, 1e-13 * scale))
}

/// Price posted by a seller with patience `delta` at saturation:
/// `2 gamma delta_bar / (mu (2 gamma - 1)) ((delta_bar / delta)^(2 gamma - 1) - 1)`.
/// Infinite at `delta = 0`.
pub fn price_of_delta(params: &InelasticParams, delta: f64) -> Result<f64> {
    params.require_saturated("price_of_delta")?;
    if !(0.0..=params.delta_bar).contains(&delta) {
        return Err(Error::PatienceOutOfRange {
            delta,
            delta_bar: params.delta_bar,
        });
    }
    if delta == 0.0 {
        return Ok(f64::INFINITY);
    }
    let g = params.gamma;
    let e = 2.0 * g - 1.0;
    Ok(2.0 * g * params.delta_bar / (params.mu * e) * ((params.delta_bar / delta).powf(e) - 1.0))
}

/// Local log-log slope of the saturated price survival function at `p`.
pub fn tail_slope(params: &InelasticParams, p: f64) -> Result<f64> {
    params.require_saturated("tail_slope")?;
    Ok(numeric::loglog_elasticity(
        |x| gamma_tail(params, x).unwrap_or(f64::NAN),
        p,
        SLOPE_STEP,
    ))
}

/// Local log-log slope of market depth at `p`.
pub fn depth_slope(params: &InelasticParams, p: f64) -> Result<f64> {
    params.require_saturated("depth_slope")?;
    Ok(numeric::loglog_elasticity(
        |x| market_depth(params, x).unwrap_or(f64::NAN),
        p,
        SLOPE_STEP,
    ))
}

/// Exponent of price as a function of consumed depth at `p`: `d ln p / d ln D`.
pub fn impact_exponent(params: &InelasticParams, p: f64) -> Result<f64> {
    Ok(1.0 / depth_slope(params, p)?)
}

const SLOPE_STEP: f64 = 1e-4;
