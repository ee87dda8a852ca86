//! Stationary analysis of the book as a Markovian preemptive-priority queue.
//!
//! Sellers posting at tick `j` form customer class `j`; arrivals are Poisson
//! with rate `lambda * alpha_j` and service (a buyer accepting the tick) is
//! Poisson with rate `mu * beta_j`. Lower ticks pre-empt higher ones.
//!
//! Unbounded execution times are represented by `f64::INFINITY`, which
//! propagates through sums and products with positive numbers.

use crate::error::{Error, Result};
use crate::market::MarketConfig;

/// Cumulative intensities within this distance of 1 are treated as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Probability that an arriving seller posts at each tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinningDistribution {
    alpha: Vec<f64>,
}

impl ThinningDistribution {
    /// Normalises a non-negative weight vector onto the simplex. Vectors whose
    /// sum is within `1e-12` of one are taken as they are.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("thinning distribution needs at least one tick"));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("thinning weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("thinning weights sum to zero"));
        }
        // vectors already on the simplex are kept bit-for-bit
        if (total - 1.0).abs() <= 1e-12 {
            return Ok(Self { alpha: weights });
        }
        Ok(Self {
            alpha: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(n_ticks: usize) -> Self {
        Self {
            alpha: vec![1.0 / n_ticks as f64; n_ticks],
        }
    }

    /// All mass on one tick (1-based).
    pub fn point_mass(n_ticks: usize, tick: usize) -> Self {
        assert!((1..=n_ticks).contains(&tick), "tick {tick} outside 1..={n_ticks}");
        let mut alpha = vec![0.0; n_ticks];
        alpha[tick - 1] = 1.0;
        Self { alpha }
    }

    /// Wraps a vector already on the simplex without renormalising.
    pub(crate) fn from_simplex(alpha: Vec<f64>) -> Self {
        Self { alpha }
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Mean and standard deviation of the posted tick index.
    pub fn tick_moments(&self) -> (f64, f64) {
        tick_moments(&self.alpha)
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        total_variation(&self.alpha, &other.alpha)
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        l2_distance(&self.alpha, &other.alpha)
    }
}

/// Mean and standard deviation of `j` (1-based) under the weights `w`,
/// normalised by their sum.
pub fn tick_moments(w: &[f64]) -> (f64, f64) {
    let total: f64 = w.iter().sum();
    let mean = w
        .iter()
        .enumerate()
        .map(|(i, &x)| (i + 1) as f64 * x)
        .sum::<f64>()
        / total;
    let var = w
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let d = (i + 1) as f64 - mean;
            d * d * x
        })
        .sum::<f64>()
        / total;
    (mean, var.sqrt())
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `rho_j = (lambda / mu) * alpha_j / beta_j`.
pub fn traffic_intensity(config: &MarketConfig, alpha: &ThinningDistribution) -> Vec<f64> {
    let load = config.lambda / config.mu;
    alpha
        .values()
        .iter()
        .zip(config.beta())
        .map(|(&a, &b)| load * a / b)
        .collect()
}

fn prefix_sums(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

fn is_unstable(cum: f64) -> bool {
    cum >= 1.0 - STABILITY_MARGIN
}

/// Expected time from posting at each tick until sale.
///
/// For ticks with `sum_{i<=j} rho_i < 1`:
/// `T(j) = 1/mu * 1/(1 - sum_{i<j} rho_i) * [1/beta_j + (sum_{i<=j} rho_i/beta_i) / (1 - sum_{i<=j} rho_i)]`,
/// and infinite otherwise.
pub fn execution_time(config: &MarketConfig, alpha: &ThinningDistribution) -> Vec<f64> {
    let rho = traffic_intensity(config, alpha);
    execution_time_from_rho(config.mu, config.beta(), &rho)
}

pub(crate) fn execution_time_from_rho(mu: f64, beta: &[f64], rho: &[f64]) -> Vec<f64> {
    let mut before = 0.0;
    let mut weighted = 0.0;
    let mut out = Vec::with_capacity(rho.len());
    for (&r, &b) in rho.iter().zip(beta) {
        let upto = before + r;
        weighted += r / b;
        if is_unstable(upto) {
            out.push(f64::INFINITY);
        } else {
            out.push((1.0 / b + weighted / (1.0 - upto)) / (mu * (1.0 - before)));
        }
        before = upto;
    }
    out
}

/// Little's law: `Q_j = lambda * alpha_j * T(j)`. Ticks nobody posts at hold no inventory.
pub fn expected_inventory(config: &MarketConfig, alpha: &ThinningDistribution) -> Vec<f64> {
    let t = execution_time(config, alpha);
    inventory_from_times(config.lambda, alpha.values(), &t)
}

fn inventory_from_times(lambda: f64, alpha: &[f64], exec_time: &[f64]) -> Vec<f64> {
    alpha
        .iter()
        .zip(exec_time)
        .map(|(&a, &t)| if a == 0.0 { 0.0 } else { lambda * a * t })
        .collect()
}

/// `E[sum_{l=j..=k} X(l) | ticks 1..j-1 empty]` for 1-based `j <= k`.
///
/// With `r1 = sum_{i<j} rho_i` and `r2 = sum_{i=j..=k} rho_i` this is
/// `r2 (1 - 2 r1 + r1^2 + r1 r2) / ((1 - r1)^2 (1 - r1 - r2))`; infinite when
/// `r1 + r2 >= 1`.
pub fn conditional_inventory(rho: &[f64], j: usize, k: usize) -> Result<f64> {
    if j == 0 || j > k || k > rho.len() {
        return Err(Error::invalid(format!(
            "need 1 <= j <= k <= {}, got j = {j}, k = {k}",
            rho.len()
        )));
    }
    let r1: f64 = rho[..j - 1].iter().sum();
    let r2: f64 = rho[j - 1..k].iter().sum();
    Ok(two_class_conditional_mean(r1, r2))
}

/// Mean number of low-priority customers in a two-class preemptive M/M/1
/// given the high-priority class is empty.
pub fn two_class_conditional_mean(r1: f64, r2: f64) -> f64 {
    if is_unstable(r1 + r2) {
        return f64::INFINITY;
    }
    let one_minus = 1.0 - r1;
    r2 * (1.0 - 2.0 * r1 + r1 * r1 + r1 * r2) / (one_minus * one_minus * (1.0 - r1 - r2))
}

/// `P(best price > j * epsilon) = max(0, 1 - sum_{k<=j} rho_k)`.
pub fn price_tail(rho: &[f64]) -> Vec<f64> {
    prefix_sums(rho).into_iter().map(|c| (1.0 - c).max(0.0)).collect()
}

/// Per-tick stationary quantities for one thinning distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueAnalytics {
    pub rho: Vec<f64>,
    pub cum_rho: Vec<f64>,
    pub exec_time: Vec<f64>,
    pub inventory: Vec<f64>,
    pub tail: Vec<f64>,
    /// Largest 1-based tick with `cum_rho < 1`; 0 when even tick 1 is unstable.
    pub stable_up_to: usize,
}

impl QueueAnalytics {
    pub fn compute(config: &MarketConfig, alpha: &ThinningDistribution) -> Self {
        let rho = traffic_intensity(config, alpha);
        let cum_rho = prefix_sums(&rho);
        let exec_time = execution_time_from_rho(config.mu, config.beta(), &rho);
        let inventory = inventory_from_times(config.lambda, alpha.values(), &exec_time);
        let tail = price_tail(&rho);
        let stable_up_to = cum_rho.iter().take_while(|&&c| !is_unstable(c)).count();
        Self {
            rho,
            cum_rho,
            exec_time,
            inventory,
            tail,
            stable_up_to,
        }
    }

    /// Mean and standard deviation of the best price over time, conditioned on
    /// the book being non-empty: tick `j` has weight `rho_j / sum_k rho_k`.
    pub fn time_average_price_moments(&self) -> (f64, f64) {
        tick_moments(&self.rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::DemandCurve;
    use proptest::prelude::*;

    fn mm1() -> MarketConfig {
        MarketConfig::single_tick(3.0, 12.0, 1.0)
    }

    #[test]
    fn single_tick_intensity() {
        let rho = traffic_intensity(&mm1(), &ThinningDistribution::uniform(1));
        assert_eq!(rho, vec![0.25]);
    }

    #[test]
    fn mm1_reduction() {
        let cfg = mm1();
        let a = ThinningDistribution::uniform(1);
        let t = execution_time(&cfg, &a);
        assert!((t[0] - 1.0 / 9.0).abs() < 1e-12);
        let q = expected_inventory(&cfg, &a);
        assert!((q[0] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(price_tail(&traffic_intensity(&cfg, &a)), vec![0.75]);
    }

    #[test]
    fn zero_mass_tick_has_zero_intensity_and_inventory() {
        let cfg = MarketConfig::elastic_example();
        let a = ThinningDistribution::point_mass(50, 3);
        let rho = traffic_intensity(&cfg, &a);
        assert_eq!(rho[0], 0.0);
        assert_eq!(rho[49], 0.0);
        let q = expected_inventory(&cfg, &a);
        assert_eq!(q[0], 0.0);
        assert!(q[2] > 0.0);
    }

    #[test]
    fn unstable_ticks_are_infinite() {
        let mut cfg = MarketConfig::single_tick(3.0, 12.0, 1.0);
        cfg.n_ticks = 3;
        cfg.demand = DemandCurve::new(vec![0.2, 0.2, 0.1]);
        // rho_1 = 0.25 * 0.8 / 0.2 = 1
        let a = ThinningDistribution::new(vec![0.8, 0.1, 0.1]).unwrap();
        let an = QueueAnalytics::compute(&cfg, &a);
        assert!(an.exec_time.iter().all(|t| t.is_infinite()));
        assert_eq!(an.stable_up_to, 0);
        assert!(an.inventory.iter().all(|q| q.is_infinite()));
        assert_eq!(an.tail[0], 0.0);
    }

    #[test]
    fn partially_stable_book() {
        let mut cfg = MarketConfig::single_tick(3.0, 12.0, 1.0);
        cfg.n_ticks = 3;
        cfg.demand = DemandCurve::new(vec![1.0, 0.5, 0.1]);
        let a = ThinningDistribution::new(vec![0.4, 0.2, 0.4]).unwrap();
        let an = QueueAnalytics::compute(&cfg, &a);
        // rho = (0.1, 0.1, 1.0)
        assert_eq!(an.stable_up_to, 2);
        assert!(an.exec_time[1].is_finite());
        assert!(an.exec_time[2].is_infinite());
    }

    #[test]
    fn conditional_inventory_reductions() {
        let rho = [0.3, 0.1, 0.2];
        let v = conditional_inventory(&rho, 1, 1).unwrap();
        assert!((v - 0.3 / 0.7).abs() < 1e-12);
        assert_eq!(conditional_inventory(&[0.3, 0.0], 2, 2).unwrap(), 0.0);
        assert!(conditional_inventory(&[0.6, 0.5], 1, 2).unwrap().is_infinite());
        assert!(conditional_inventory(&rho, 0, 1).is_err());
        assert!(conditional_inventory(&rho, 3, 2).is_err());
        assert!(conditional_inventory(&rho, 1, 4).is_err());
    }

    #[test]
    fn conditional_inventory_merges_to_total_inventory() {
        // j = 1, k = N: all classes merged into one M/M/1 with equal service rate
        let mut cfg = MarketConfig::single_tick(3.0, 12.0, 1.0);
        cfg.n_ticks = 4;
        cfg.demand = DemandCurve::inelastic(4);
        let a = ThinningDistribution::new(vec![0.1, 0.4, 0.3, 0.2]).unwrap();
        let an = QueueAnalytics::compute(&cfg, &a);
        let total: f64 = an.inventory.iter().sum();
        let merged = conditional_inventory(&an.rho, 1, 4).unwrap();
        assert!((total - merged).abs() < 1e-12, "{total} vs {merged}");
    }

    fn arb_market() -> impl Strategy<Value = (MarketConfig, ThinningDistribution)> {
        (1usize..12)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    0.1f64..5.0,
                    1.0f64..20.0,
                    prop::collection::vec(0.05f64..1.0, n),
                    prop::collection::vec(0.0f64..1.0, n),
                )
            })
            .prop_filter_map("zero weights", |(n, lambda, mu, mut beta, w)| {
                beta.sort_by(|a, b| b.total_cmp(a));
                let a = ThinningDistribution::new(w).ok()?;
                let cfg = MarketConfig {
                    lambda,
                    mu,
                    epsilon: 1.0,
                    n_ticks: n,
                    demand: DemandCurve::new(beta),
                    patience: crate::market::PatienceDistribution::uniform(1.0),
                };
                Some((cfg, a))
            })
    }

    proptest! {
        #[test]
        fn exec_time_non_decreasing((cfg, a) in arb_market()) {
            let an = QueueAnalytics::compute(&cfg, &a);
            for w in an.exec_time.windows(2) {
                prop_assert!(w[1] >= w[0] * (1.0 - 1e-12));
            }
            for (t, c) in an.exec_time.iter().zip(&an.cum_rho) {
                prop_assert_eq!(t.is_infinite(), *c >= 1.0 - STABILITY_MARGIN);
            }
            for w in an.tail.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }

        #[test]
        fn single_tick_is_mm1(lambda in 0.01f64..10.0, mu in 10.5f64..50.0) {
            let cfg = MarketConfig::single_tick(lambda, mu, 1.0);
            let t = execution_time(&cfg, &ThinningDistribution::uniform(1));
            prop_assert!((t[0] - 1.0 / (mu - lambda)).abs() < 1e-12);
        }
    }
}
