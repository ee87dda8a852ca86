//! End-to-end acceptance checks.
//!
//! Each check returns a [`CheckOutcome`] with the measured quantities, so a
//! failure says by how much it missed. [`Budget::quick`] cuts simulation
//! horizons tenfold and doubles the statistical tolerances; analytic checks
//! keep their tolerances in both modes.

use std::fmt;
use std::time::Instant;

use crate::error::Result;
use crate::inelastic::{self, InelasticParams};
use crate::market::{DemandCurve, MarketConfig, PatienceDistribution};
use crate::numeric::{linspace, OdeOptions};
use crate::queue::{conditional_inventory, two_class_conditional_mean, QueueAnalytics, ThinningDistribution};
use crate::sim::{self, empirical_best_response, SimConfig, SimMode};
use crate::solver::{psi_map, solve_equilibrium, EquilibriumResult, SolverOptions};
use crate::two_price::{two_price_equilibrium, TwoPriceProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    /// Buyer arrivals for the wait-time comparison.
    pub wait_horizon: u64,
    /// Buyer arrivals for the two-class conditional inventory run.
    pub conditional_horizon: u64,
    /// Buyer arrivals for each self-consistency run.
    pub loop_horizon: u64,
    /// Independent replications the self-consistency horizon is split into.
    pub loop_replications: usize,
    /// Multiplier on statistical tolerances.
    pub widen: f64,
    pub seed: u64,
}

impl Budget {
    pub fn full() -> Self {
        Self {
            wait_horizon: 1_000_000,
            conditional_horizon: 1_000_000,
            loop_horizon: 3_000_000_000,
            loop_replications: 10,
            widen: 1.0,
            seed: 20_240_601,
        }
    }

    pub fn quick() -> Self {
        let full = Self::full();
        Self {
            wait_horizon: full.wait_horizon / 10,
            conditional_horizon: full.conditional_horizon / 10,
            loop_horizon: full.loop_horizon / 10,
            widen: 2.0,
            ..full
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: &'static str,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} [{}] {} ({:.1}s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.seconds
        )
    }
}

/// The 50-tick market solved once and shared by the checks that need it.
pub struct SolvedMarket {
    pub config: MarketConfig,
    pub result: EquilibriumResult,
}

impl SolvedMarket {
    pub fn solve(seed: u64) -> Result<Self> {
        let config = MarketConfig::elastic_example();
        let opts = SolverOptions {
            seed,
            ..SolverOptions::default()
        };
        let result = match solve_equilibrium(&config, &opts) {
            Ok(r) => r,
            Err(crate::Error::NoConvergence { best, .. }) => *best,
            Err(e) => return Err(e),
        };
        Ok(Self { config, result })
    }
}

fn timed(id: &'static str, title: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(x) => x,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        id,
        title,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Single tick with `lambda = 3`, `mu = 12`: `T = 1/9`, `Q = 1/3`.
pub fn check_single_tick() -> CheckOutcome {
    timed("A1", "single-tick M/M/1 exactness", || {
        let cfg = MarketConfig::single_tick(3.0, 12.0, 1.0);
        let a = QueueAnalytics::compute(&cfg, &ThinningDistribution::uniform(1));
        let et = (a.exec_time[0] - 1.0 / 9.0).abs();
        let eq = (a.inventory[0] - 1.0 / 3.0).abs();
        Ok((
            et <= 1e-12 && eq <= 1e-12,
            format!("|T - 1/9| = {et:.1e}, |Q - 1/3| = {eq:.1e} (tol 1e-12)"),
        ))
    })
}

/// Simulated mean waits against the analytic execution times at the equilibrium.
pub fn check_waits(solved: &SolvedMarket, budget: &Budget) -> CheckOutcome {
    timed("A2", "execution times vs simulation", || {
        let tol = 0.05 * budget.widen;
        let sim_cfg = SimConfig::new(
            solved.config.clone(),
            SimMode::AlphaDriven(solved.result.alpha_star.clone()),
            budget.wait_horizon,
            budget.seed,
        );
        let est = sim::run(&sim_cfg)?;
        let t = &solved.result.analytics.exec_time;
        let mut compared = 0;
        let mut worst = (0.0f64, 0usize, 0.0f64);
        for j in 0..t.len() {
            if est.trades_per_tick[j] < 1000 {
                continue;
            }
            compared += 1;
            let rel = (est.mean_wait[j].value - t[j]).abs() / t[j];
            if rel > worst.0 {
                worst = (rel, j + 1, est.mean_wait[j].half_width / t[j]);
            }
        }
        Ok((
            compared > 0 && worst.0 <= tol,
            format!(
                "{compared} ticks with >= 1000 trades; worst relative error {:.4} at tick {} (relative half-width there {:.4}, tol {tol})",
                worst.0, worst.1, worst.2
            ),
        ))
    })
}

/// Two classes at load 0.25 each: simulated inventory of class 2 while
/// class 1 is empty, plus the exact reduction for the first tick.
pub fn check_conditional_inventory(budget: &Budget) -> CheckOutcome {
    timed("A3", "two-class conditional inventory", || {
        let tol = 0.10 * budget.widen;
        let rho = [0.25, 0.25];
        let reduction = conditional_inventory(&rho, 1, 1)?;
        let red_err = (reduction - 0.25 / 0.75).abs();
        let exact = two_class_conditional_mean(0.25, 0.25);
        let cfg = MarketConfig {
            lambda: 6.0,
            mu: 12.0,
            epsilon: 1.0,
            n_ticks: 2,
            demand: DemandCurve::inelastic(2),
            patience: PatienceDistribution::uniform(1.0),
        };
        let sim_cfg = SimConfig::new(
            cfg,
            SimMode::AlphaDriven(ThinningDistribution::uniform(2)),
            budget.conditional_horizon,
            budget.seed,
        );
        let est = sim::run(&sim_cfg)?;
        let got = est.cond_inventory[1].value;
        let rel = (got - exact).abs() / exact;
        let enough_time = !est.cond_low_confidence(1);
        Ok((
            red_err <= 1e-12 && enough_time && rel <= tol,
            format!(
                "simulated {got:.5} vs {exact:.5} (rel {rel:.4}, tol {tol}), conditioning time {:.3}; reduction error {red_err:.1e}",
                est.cond_time_fraction[1]
            ),
        ))
    })
}

/// Equilibrium of the 50-tick market against the published summary statistics.
pub fn check_equilibrium(solved: &SolvedMarket) -> CheckOutcome {
    timed("A4", "50-tick equilibrium reproduction", || {
        let r = &solved.result;
        let (am, asd) = r.alpha_star.tick_moments();
        let (pm, psd) = r.analytics.time_average_price_moments();
        let near = |x: f64, target: f64| (x - target).abs() <= 1.0;
        let moments = near(am, 12.70) && near(asd, 10.52) && near(pm, 23.77) && near(psd, 15.55);
        let monotone = !r.premise_holds || r.strategy_monotone;
        Ok((
            r.residual < 1e-6 && moments && monotone,
            format!(
                "residual {:.1e}; alpha mean/std {am:.3}/{asd:.3}; price mean/std {pm:.3}/{psd:.3}; convex T {} monotone strategy {}",
                r.residual, r.premise_holds, r.strategy_monotone
            ),
        ))
    })
}

/// Closed forms against the equilibrium ODE and against direct integration.
pub fn check_closed_forms() -> CheckOutcome {
    timed("A5", "closed forms vs ODE", || {
        let bounded = InelasticParams::new(0.5, 12.0, 160.0, 1.0)?;
        let k = bounded.support();
        let grid = inelastic::quantile_grid(&bounded, 0.999 * k, 10_001)?;
        let f: Vec<f64> = grid
            .iter()
            .map(|&p| inelastic::equilibrium_cdf(&bounded, p))
            .collect::<Result<_>>()?;
        let res_bounded = inelastic::ode_residual(&bounded, &grid, &f)?;

        let tail = InelasticParams::new(1.0, 12.0, 160.0, 0.75)?;
        let grid_t = inelastic::quantile_grid(&tail, 1e4, 10_001)?;
        let f_t: Vec<f64> = grid_t
            .iter()
            .map(|&p| inelastic::price_cdf(&tail, p))
            .collect::<Result<_>>()?;
        let res_tail = inelastic::ode_residual(&tail, &grid_t, &f_t)?;

        let ode_gap = |params: &InelasticParams, p_max: f64| -> Result<f64> {
            let sol = inelastic::integrate_ode(params, p_max, OdeOptions::default())?;
            let mut gap = 0.0f64;
            for (&p, &fv) in sol.grid.iter().zip(&sol.f_values) {
                gap = gap.max((fv - inelastic::price_cdf(params, p)?).abs());
            }
            Ok(gap)
        };
        let gap_bounded = ode_gap(&bounded, 0.999 * k)?;
        let gap_tail = ode_gap(&tail, 1e4)?;

        let f0 = inelastic::equilibrium_cdf(&bounded, 0.0)?;
        let fk = inelastic::equilibrium_cdf(&bounded, k)?;
        let ends = f0.abs() <= 1e-9 && (fk - 1.0).abs() <= 1e-9;
        let worst = res_bounded.max(res_tail).max(gap_bounded).max(gap_tail);
        Ok((
            worst < 1e-6 && ends,
            format!(
                "ODE residual {res_bounded:.1e} (rho 0.5) {res_tail:.1e} (rho 1, gamma 3/4); integration gap {gap_bounded:.1e} / {gap_tail:.1e}; F(0) = {f0}, F(K) = {fk}, K = {k:.4}"
            ),
        ))
    })
}

/// Heavy-load limit and the power-law exponents of price, depth and impact.
pub fn check_power_law() -> CheckOutcome {
    timed("A6", "power-law limit and exponents", || {
        let near = InelasticParams::new(0.999, 12.0, 160.0, 1.0)?;
        let mut sup = 0.0f64;
        for p in linspace(0.0, 100.0 * near.delta_bar / near.mu, 20_001) {
            sup = sup.max((inelastic::equilibrium_cdf(&near, p)? - inelastic::limit_cdf(&near, p)).abs());
        }
        // unit price scale, so that the tail scale is 1/3
        let tail = InelasticParams::new(1.0, 1.0, 1.0, 0.75)?;
        let p = SLOPE_PRICE;
        let ts = inelastic::tail_slope(&tail, p)?;
        let ds = inelastic::depth_slope(&tail, p)?;
        let ie = inelastic::impact_exponent(&tail, p)?;
        let ok = sup < 0.01 && (ts + 1.5).abs() <= 0.01 && (ds - 1.5).abs() <= 0.01 && (ie - 2.0 / 3.0).abs() <= 0.01;
        Ok((
            ok,
            format!("sup |F - limit| {sup:.2e}; at p = {p}: tail slope {ts:.4}, depth slope {ds:.4}, impact exponent {ie:.4}"),
        ))
    })
}

/// Price at which local power-law exponents are read off.
pub const SLOPE_PRICE: f64 = 1000.0;

/// Moves `min(0.1, alpha_1)` of mass from the lowest to the highest tick.
pub fn perturb_low_to_high(alpha: &ThinningDistribution) -> Result<ThinningDistribution> {
    let mut v = alpha.values().to_vec();
    let n = v.len();
    let m = v[0].min(0.1);
    v[0] -= m;
    v[n - 1] += m;
    ThinningDistribution::new(v)
}

/// Closes the equilibrium loop through the simulator, and checks a perturbed
/// distribution is told apart.
pub fn check_self_consistency(solved: &SolvedMarket, budget: &Budget) -> CheckOutcome {
    timed("A7", "self-consistency through simulation", || {
        let tol = 0.05 * budget.widen;
        let cfg = &solved.config;
        let loop_tv = |alpha: &ThinningDistribution, seed: u64| -> Result<f64> {
            let reps = budget.loop_replications.max(1);
            let sim_cfg = SimConfig::new(
                cfg.clone(),
                SimMode::AlphaDriven(alpha.clone()),
                budget.loop_horizon / reps as u64,
                seed,
            );
            let est = sim::run_replications(&sim_cfg, reps)?;
            Ok(empirical_best_response(&est, cfg.epsilon, &cfg.patience)?.total_variation(alpha))
        };
        let star = &solved.result.alpha_star;
        let tv_star = loop_tv(star, budget.seed)?;
        let perturbed = perturb_low_to_high(star)?;
        let tv_pert = loop_tv(&perturbed, budget.seed.wrapping_add(1))?;
        let analytic = psi_map(cfg, &perturbed)?.total_variation(&perturbed);
        Ok((
            tv_star < tol && tv_pert > tol,
            format!(
                "TV at equilibrium {tv_star:.4} (< {tol}); TV perturbed {tv_pert:.4} (> {tol}, analytic {analytic:.4}); {} arrivals per run",
                budget.loop_horizon
            ),
        ))
    })
}

/// Two-price game root and the quadratic it satisfies under uniform patience.
pub fn check_two_price() -> CheckOutcome {
    timed("A8", "two-price equilibrium", || {
        let prob = TwoPriceProblem {
            p1: 0.0,
            p2: 0.5,
            mu1: 2.0,
            mu2: 1.0,
            patience: PatienceDistribution::uniform(1.0),
        };
        let s = two_price_equilibrium(&prob)?;
        let a = 0.5 * (prob.mu1 + prob.mu2);
        let b = prob.mu1 - prob.mu2;
        let c = prob.mu1 * prob.mu2 * (prob.p2 - prob.p1);
        let quad = (a * s.alpha2 * s.alpha2 + b * s.alpha2 - c).abs();
        Ok((
            s.residual < 1e-10 && quad < 1e-10,
            format!("alpha2 = {:.12}; fixed-point residual {:.1e}; quadratic residual {quad:.1e}", s.alpha2, s.residual),
        ))
    })
}

/// Runs every check in order.
pub fn run_all(budget: &Budget) -> Vec<CheckOutcome> {
    let solved = SolvedMarket::solve(budget.seed);
    let needs_market = |id: &'static str, title: &'static str, e: &crate::Error| CheckOutcome {
        id,
        title,
        passed: false,
        detail: format!("equilibrium solve failed: {e}"),
        seconds: 0.0,
    };
    let mut out = vec![check_single_tick()];
    match &solved {
        Ok(s) => out.push(check_waits(s, budget)),
        Err(e) => out.push(needs_market("A2", "execution times vs simulation", e)),
    }
    out.push(check_conditional_inventory(budget));
    match &solved {
        Ok(s) => out.push(check_equilibrium(s)),
        Err(e) => out.push(needs_market("A4", "50-tick equilibrium reproduction", e)),
    }
    out.push(check_closed_forms());
    out.push(check_power_law());
    match &solved {
        Ok(s) => out.push(check_self_consistency(s, budget)),
        Err(e) => out.push(needs_market("A7", "self-consistency through simulation", e)),
    }
    out.push(check_two_price());
    out
}
