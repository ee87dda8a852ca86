//! Symmetric Bayesian-Nash equilibrium of the seller pricing game.
//!
//! A seller with waiting cost `delta` posts at the tick maximising
//! `j * epsilon - delta * T(j)`. For fixed execution times the optimal tick as
//! a function of `delta` is read off the upper envelope of the lines
//! `h_j(delta) = j * epsilon - delta * T(j)`; the patience distribution then
//! turns the envelope into a new thinning distribution `Psi(alpha)`. An
//! equilibrium is a fixed point of `Psi`.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::{MarketConfig, PatienceDistribution};
use crate::numeric::project_simplex;
use crate::queue::{execution_time, QueueAnalytics, ThinningDistribution};

/// One interval of patience values sharing the same optimal tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionCell {
    /// 1-based tick.
    pub tick: usize,
    pub lo: f64,
    pub hi: f64,
    /// `F(hi) - F(lo)`.
    pub measure: f64,
}

/// Optimal tick as a piecewise-constant function of patience on `[0, delta_bar]`.
///
/// Cells are ordered by increasing `delta`, are contiguous and cover the
/// whole support.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponsePartition {
    pub cells: Vec<PartitionCell>,
    pub n_ticks: usize,
    pub delta_bar: f64,
}

impl BestResponsePartition {
    /// Probability mass assigned to each tick.
    pub fn thinning(&self) -> ThinningDistribution {
        let mut alpha = vec![0.0; self.n_ticks];
        for c in &self.cells {
            alpha[c.tick - 1] += c.measure;
        }
        ThinningDistribution::from_simplex(alpha)
    }

    pub fn total_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }

    /// True when the assigned tick never increases as `delta` grows.
    pub fn is_monotone(&self) -> bool {
        self.cells.windows(2).all(|w| w[1].tick <= w[0].tick)
    }

    /// Optimal tick for patience `delta`. At a breakpoint, where two ticks tie,
    /// the lower tick is returned.
    pub fn tick_at(&self, delta: f64) -> Result<usize> {
        if !(0.0..=self.delta_bar).contains(&delta) {
            return Err(Error::PatienceOutOfRange {
                delta,
                delta_bar: self.delta_bar,
            });
        }
        // first cell whose upper end reaches delta
        let k = self
            .cells
            .partition_point(|c| c.hi < delta)
            .min(self.cells.len() - 1);
        let mut tick = self.cells[k].tick;
        // cells touching delta from the right also tie there
        for c in &self.cells[k + 1..] {
            if c.lo > delta {
                break;
            }
            tick = tick.min(c.tick);
        }
        if delta == 0.0 {
            // no tie at the origin: the highest-intercept line wins outright
            tick = self.cells[0].tick;
        }
        Ok(tick)
    }

    /// Like [`tick_at`](Self::tick_at) but clamps `delta` into the support;
    /// used on the simulator's hot path.
    pub(crate) fn tick_at_clamped(&self, delta: f64) -> usize {
        let d = delta.clamp(0.0, self.delta_bar);
        let k = self.cells.partition_point(|c| c.hi <= d).min(self.cells.len() - 1);
        self.cells[k].tick
    }
}

/// Upper envelope of `j * epsilon - delta * T(j)` over `delta` in `[0, delta_bar]`.
///
/// Ticks with infinite execution time never win for `delta > 0`; at
/// `delta = 0` the highest tick with a finite time is chosen.
pub fn best_response(
    exec_time: &[f64],
    epsilon: f64,
    patience: &PatienceDistribution,
) -> Result<BestResponsePartition> {
    let delta_bar = patience.delta_bar();
    let n_ticks = exec_time.len();
    let mut current = exec_time
        .iter()
        .rposition(|t| t.is_finite())
        .ok_or(Error::NoFeasibleTick)?;
    let mut lo = 0.0;
    let mut cells = Vec::new();
    loop {
        let t_cur = exec_time[current];
        // next line to overtake: smallest crossing point, ties to the flattest line
        let mut next: Option<(f64, usize)> = None;
        for (k, &t_k) in exec_time.iter().enumerate() {
            if !(t_k < t_cur) {
                continue;
            }
            let x = (current as f64 - k as f64) * epsilon / (t_cur - t_k);
            if x < lo {
                continue;
            }
            next = match next {
                Some((bx, bk)) if bx < x || (bx == x && exec_time[bk] <= t_k) => Some((bx, bk)),
                _ => Some((x, k)),
            };
        }
        match next {
            Some((x, k)) if x < delta_bar => {
                cells.push(make_cell(current, lo, x, patience));
                lo = x;
                current = k;
            }
            _ => {
                cells.push(make_cell(current, lo, delta_bar, patience));
                break;
            }
        }
    }
    Ok(BestResponsePartition {
        cells,
        n_ticks,
        delta_bar,
    })
}

fn make_cell(index: usize, lo: f64, hi: f64, patience: &PatienceDistribution) -> PartitionCell {
    PartitionCell {
        tick: index + 1,
        lo,
        hi,
        measure: patience.cdf_unchecked(hi) - patience.cdf_unchecked(lo),
    }
}

/// The best-response map: thinning distribution induced when every seller
/// optimises against the execution times implied by `alpha`.
pub fn psi_map(config: &MarketConfig, alpha: &ThinningDistribution) -> Result<ThinningDistribution> {
    let t = execution_time(config, alpha);
    Ok(best_response(&t, config.epsilon, &config.patience)?.thinning())
}

fn residual_vector(config: &MarketConfig, alpha: &[f64]) -> Result<Vec<f64>> {
    let a = ThinningDistribution::from_simplex(alpha.to_vec());
    let psi = psi_map(config, &a)?;
    Ok(psi.values().iter().zip(alpha).map(|(p, a)| p - a).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Knobs for [`solve_equilibrium`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Target for `||Psi(alpha) - alpha||_2`.
    pub tol: f64,
    /// Iteration budget for the damped fixed-point phase.
    pub max_iter: usize,
    /// Number of independent starts; start 0 is the uniform distribution.
    pub restarts: usize,
    /// Initial damping `eta` in `alpha <- (1 - eta) alpha + eta Psi(alpha)`.
    pub eta: f64,
    /// Iterations without a 0.1% improvement before the step is halved.
    pub stall_window: usize,
    /// Smallest damping tried before handing over to residual minimisation.
    pub eta_min: f64,
    /// Iteration budget for the residual minimisation phase.
    pub polish_iter: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5_000,
            restarts: 20,
            eta: 0.5,
            stall_window: 50,
            eta_min: 1e-3,
            polish_iter: 200,
            seed: 0,
        }
    }
}

/// Outcome of the equilibrium search.
#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub alpha_star: ThinningDistribution,
    /// Recomputed from `alpha_star`.
    pub analytics: QueueAnalytics,
    /// `||Psi(alpha_star) - alpha_star||_2`, re-evaluated on the returned vector.
    pub residual: f64,
    pub partition: BestResponsePartition,
    /// Execution times are strictly increasing with non-decreasing increments.
    pub premise_holds: bool,
    /// The partition assigns non-increasing ticks as patience cost grows.
    pub strategy_monotone: bool,
    pub restarts_used: usize,
    /// Restarts that individually met the tolerance.
    pub converged_restarts: usize,
    /// Two converged restarts ended more than `1e-4` apart in sup-norm.
    pub multiple_equilibria: bool,
}

impl EquilibriumResult {
    fn assemble(config: &MarketConfig, alpha: Vec<f64>, restarts_used: usize) -> Result<Self> {
        let alpha_star = ThinningDistribution::from_simplex(alpha);
        let analytics = QueueAnalytics::compute(config, &alpha_star);
        let partition = best_response(&analytics.exec_time, config.epsilon, &config.patience)?;
        let psi = partition.thinning();
        let residual = alpha_star.l2_distance(&psi);
        let premise_holds = convexity_premise(&analytics.exec_time);
        let strategy_monotone = partition.is_monotone();
        if premise_holds && !strategy_monotone {
            warn!("execution times are increasing and convex but the strategy is not monotone");
        }
        Ok(Self {
            alpha_star,
            analytics,
            residual,
            partition,
            premise_holds,
            strategy_monotone,
            restarts_used,
            converged_restarts: 0,
            multiple_equilibria: false,
        })
    }
}

/// Strictly increasing with non-decreasing first differences (all finite).
pub fn convexity_premise(exec_time: &[f64]) -> bool {
    if exec_time.iter().any(|t| !t.is_finite()) {
        return false;
    }
    let diffs: Vec<f64> = exec_time.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.iter().all(|&d| d > 0.0) && diffs.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12))
}

/// Optimal tick at the equilibrium for a seller with patience `delta`.
pub fn strategy_of_delta(result: &EquilibriumResult, delta: f64) -> Result<usize> {
    result.partition.tick_at(delta)
}

struct RestartOutcome {
    alpha: Vec<f64>,
    residual: f64,
}

/// Searches for `alpha*` with `||Psi(alpha*) - alpha*||_2 < tol`.
///
/// Each restart runs a damped fixed-point iteration, halving the damping when
/// progress stalls, then minimises the squared residual over the simplex with
/// a Levenberg-Marquardt iteration on finite-difference Jacobians. Restarts
/// run in parallel with independent seeded streams; the smallest residual
/// wins.
pub fn solve_equilibrium(config: &MarketConfig, opts: &SolverOptions) -> Result<EquilibriumResult> {
    config.validate().into_result()?;
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    if !(opts.eta > 0.0 && opts.eta <= 1.0) {
        return Err(Error::invalid("eta must lie in (0, 1]"));
    }
    let n = config.n_ticks;
    let restarts = opts.restarts.max(1);

    let outcomes: Vec<Result<RestartOutcome>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 {
                vec![1.0 / n as f64; n]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(r as u64)));
                random_simplex_point(n, &mut rng)
            };
            run_restart(config, start, opts)
        })
        .collect();

    let mut converged: Vec<&RestartOutcome> = Vec::new();
    let mut best: Option<&RestartOutcome> = None;
    for o in &outcomes {
        let o = match o {
            Ok(o) => o,
            Err(e) => {
                debug!("restart failed: {e}");
                continue;
            }
        };
        if o.residual < opts.tol {
            converged.push(o);
        }
        if best.is_none_or(|b| o.residual < b.residual) {
            best = Some(o);
        }
    }
    let best = best.ok_or(Error::NoFeasibleTick)?;
    let mut result = EquilibriumResult::assemble(config, best.alpha.clone(), restarts)?;
    result.converged_restarts = converged.len();
    result.multiple_equilibria = converged.iter().any(|a| {
        converged.iter().any(|b| {
            a.alpha
                .iter()
                .zip(&b.alpha)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
                > 1e-4
        })
    });
    if result.multiple_equilibria {
        warn!("restarts converged to distinct equilibria");
    }
    if result.residual < opts.tol {
        Ok(result)
    } else {
        Err(Error::NoConvergence {
            tol: opts.tol,
            best: Box::new(result),
        })
    }
}

fn random_simplex_point(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn run_restart(config: &MarketConfig, start: Vec<f64>, opts: &SolverOptions) -> Result<RestartOutcome> {
    let mut alpha = start;
    let mut r = residual_vector(config, &alpha)?;
    let mut res = norm(&r);
    let mut best = RestartOutcome {
        alpha: alpha.clone(),
        residual: res,
    };
    let mut eta = opts.eta;
    let mut last_gain = 0;
    let mut level = res;
    for it in 0..opts.max_iter {
        if best.residual < opts.tol {
            return Ok(best);
        }
        for (a, d) in alpha.iter_mut().zip(&r) {
            *a += eta * d;
        }
        r = residual_vector(config, &alpha)?;
        res = norm(&r);
        if res < best.residual {
            best.residual = res;
            best.alpha.clone_from(&alpha);
        }
        if res < level * 0.999 {
            level = res;
            last_gain = it;
        } else if it - last_gain >= opts.stall_window {
            eta *= 0.5;
            if eta < opts.eta_min {
                break;
            }
            last_gain = it;
            level = res;
        }
    }
    if best.residual < opts.tol {
        return Ok(best);
    }
    let (alpha, residual) = minimise_residual(config, best.alpha.clone(), opts)?;
    if residual < best.residual {
        best = RestartOutcome { alpha, residual };
    }
    Ok(best)
}

/// Levenberg-Marquardt on `r(alpha) = Psi(alpha) - alpha` in tangent
/// coordinates of the simplex, with projection back after every step.
fn minimise_residual(config: &MarketConfig, mut alpha: Vec<f64>, opts: &SolverOptions) -> Result<(Vec<f64>, f64)> {
    let n = alpha.len();
    if n == 1 {
        return Ok((vec![1.0], 0.0));
    }
    let mut r = residual_vector(config, &alpha)?;
    let mut res = norm(&r);
    let mut damping = 1e-3;
    let fd_step = 1e-7;
    for _ in 0..opts.polish_iter {
        if res < opts.tol {
            break;
        }
        // tangent directions e_i - e_pivot, pivot = heaviest tick
        let pivot = alpha
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let free: Vec<usize> = (0..n).filter(|&i| i != pivot).collect();
        let mut jac = DMatrix::<f64>::zeros(n, free.len());
        for (col, &i) in free.iter().enumerate() {
            let mut probe = alpha.clone();
            probe[i] += fd_step;
            probe[pivot] -= fd_step;
            let rp = residual_vector(config, &probe)?;
            for row in 0..n {
                jac[(row, col)] = (rp[row] - r[row]) / fd_step;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * &rv;
        let mut improved = false;
        for _ in 0..12 {
            let mut lhs = jtj.clone();
            for d in 0..free.len() {
                lhs[(d, d)] += damping * (jtj[(d, d)] + 1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-&g)) else {
                damping *= 10.0;
                continue;
            };
            let mut cand = alpha.clone();
            for (col, &i) in free.iter().enumerate() {
                cand[i] += step[col];
                cand[pivot] -= step[col];
            }
            let cand = project_simplex(&cand);
            let rc = residual_vector(config, &cand)?;
            let rc_norm = norm(&rc);
            if rc_norm < res {
                alpha = cand;
                r = rc;
                res = rc_norm;
                damping = (damping / 3.0).max(1e-12);
                improved = true;
                break;
            }
            damping *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Ok((alpha, res))
}
