//! Discrete-event simulation of the exchange.
//!
//! Seller and buyer arrivals form one merged Poisson stream of rate
//! `lambda + mu`. A seller enqueues one unit at its tick; a buyer looks at the
//! lowest non-empty tick `j`, buys its head-of-line unit with probability
//! `beta_j` and otherwise leaves. Buyers facing an empty book are lost.
//!
//! The horizon counts buyer arrivals. The first `warmup_fraction` of them are
//! discarded; the rest are split into equal batches for batch-means
//! confidence intervals.

use std::collections::VecDeque;

use log::warn;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Exp1;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::market::{MarketConfig, PatienceDistribution};
use crate::queue::{QueueAnalytics, ThinningDistribution, STABILITY_MARGIN};
use crate::solver::{best_response, BestResponsePartition};

/// Share of post-warmup time below which a conditional estimate is low-confidence.
pub const LOW_CONDITIONING_TIME: f64 = 0.01;

/// How sellers choose their tick.
#[derive(Debug, Clone, PartialEq)]
pub enum SimMode {
    /// Each seller draws a tick from the thinning distribution.
    AlphaDriven(ThinningDistribution),
    /// Each seller draws a patience value and posts at the partition's tick.
    StrategyDriven(BestResponsePartition),
}

/// Service order among units resting at the same tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Discipline {
    #[default]
    Fifo,
    /// A uniformly chosen resting unit at the tick is sold.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub market: MarketConfig,
    pub mode: SimMode,
    /// Number of buyer arrivals to simulate.
    pub horizon: u64,
    pub warmup_fraction: f64,
    pub n_batches: usize,
    pub seed: u64,
    pub discipline: Discipline,
}

impl SimConfig {
    pub fn new(market: MarketConfig, mode: SimMode, horizon: u64, seed: u64) -> Self {
        Self {
            market,
            mode,
            horizon,
            warmup_fraction: 0.2,
            n_batches: 20,
            seed,
            discipline: Discipline::Fifo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut report = self.market.validate();
        // an empty supply side is a legitimate experiment here
        if self.market.lambda == 0.0 {
            report.violations.retain(|v| v.field != "lambda");
        }
        report.into_result()?;
        if self.n_batches < 2 {
            return Err(Error::invalid("n_batches must be at least 2"));
        }
        if self.horizon < 10 * self.n_batches as u64 {
            return Err(Error::invalid(format!(
                "horizon must be at least 10 * n_batches = {}, got {}",
                10 * self.n_batches,
                self.horizon
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction must lie in [0, 1)"));
        }
        let n = self.market.n_ticks;
        let ok = match &self.mode {
            SimMode::AlphaDriven(a) => a.len() == n,
            SimMode::StrategyDriven(p) => p.n_ticks == n && !p.cells.is_empty(),
        };
        if !ok {
            return Err(Error::invalid("seller behaviour does not match n_ticks"));
        }
        if (self.horizon - self.post_warmup_start()) < self.n_batches as u64 {
            return Err(Error::invalid("too few post-warmup buyers for the batch count"));
        }
        Ok(())
    }

    /// Thinning distribution sellers follow in this run.
    pub fn thinning(&self) -> ThinningDistribution {
        match &self.mode {
            SimMode::AlphaDriven(a) => a.clone(),
            SimMode::StrategyDriven(p) => p.thinning(),
        }
    }

    fn post_warmup_start(&self) -> u64 {
        (self.warmup_fraction * self.horizon as f64).floor() as u64
    }
}

/// Point estimate with a 95% batch-means half-width. `half_width` is NaN
/// when fewer than two batches carry data; `value` is NaN without data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub half_width: f64,
}

impl Estimate {
    /// `|value - target| <= k * half_width`.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.half_width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimates {
    /// Mean time from posting to sale per tick.
    pub mean_wait: Vec<Estimate>,
    /// Time-averaged resting units per tick.
    pub time_avg_inventory: Vec<Estimate>,
    /// Share of time the lowest non-empty tick exceeds `j` (empty book included).
    pub best_price_tail: Vec<Estimate>,
    /// Share of executed trades at each tick.
    pub exec_price_pmf: Vec<f64>,
    /// Share of sellers posting at each tick.
    pub posting_fraction: Vec<f64>,
    /// Time average of `sum_{l>=j} X(l)` over periods where ticks `< j` are empty.
    pub cond_inventory: Vec<Estimate>,
    /// Share of time ticks `< j` are empty.
    pub cond_time_fraction: Vec<f64>,
    pub trades_per_tick: Vec<u64>,
    /// Cumulative load reaches one at or below this tick.
    pub non_stationary: Vec<bool>,
    pub n_buyers: u64,
    pub n_trades: u64,
    /// Buyers who met an empty book or declined.
    pub n_lost_buyers: u64,
    pub n_sellers: u64,
    /// Length of the post-warmup window.
    pub elapsed: f64,
}

impl SimEstimates {
    /// Conditional estimate at tick `j` rests on too little conditioning time.
    pub fn cond_low_confidence(&self, j: usize) -> bool {
        self.cond_time_fraction[j] < LOW_CONDITIONING_TIME
    }
}

struct Batch {
    wait_sum: Vec<f64>,
    wait_count: Vec<u64>,
    inventory_area: Vec<f64>,
    time_by_low: Vec<f64>,
    mass_by_low: Vec<f64>,
    duration: f64,
}

impl Batch {
    fn new(n: usize) -> Self {
        Self {
            wait_sum: vec![0.0; n],
            wait_count: vec![0; n],
            inventory_area: vec![0.0; n],
            time_by_low: vec![0.0; n + 1],
            mass_by_low: vec![0.0; n + 1],
            duration: 0.0,
        }
    }
}

enum SellerChoice {
    Ticks(WeightedAliasIndex<f64>),
    Patience(BestResponsePartition, PatienceDistribution),
    None,
}

impl SellerChoice {
    /// 0-based tick.
    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            SellerChoice::Ticks(w) => w.sample(rng),
            SellerChoice::Patience(p, f) => p.tick_at_clamped(f.sample(rng)) - 1,
            SellerChoice::None => unreachable!("no sellers arrive when lambda = 0"),
        }
    }
}

/// The book plus lazily integrated per-tick inventory.
struct Book {
    queues: Vec<VecDeque<f64>>,
    /// 0 for an empty book, else the 1-based lowest non-empty tick.
    low: usize,
    total: usize,
    last_touch: Vec<f64>,
    last_event: f64,
}

impl Book {
    fn new(n: usize) -> Self {
        Self {
            queues: vec![VecDeque::new(); n],
            low: 0,
            total: 0,
            last_touch: vec![0.0; n],
            last_event: 0.0,
        }
    }

    /// Brings the per-tick area of tick `j` up to time `t`.
    fn touch(&mut self, j: usize, t: f64, batch: &mut Batch) {
        batch.inventory_area[j] += self.queues[j].len() as f64 * (t - self.last_touch[j]);
        self.last_touch[j] = t;
    }

    /// Integrates the lowest-tick process up to `t`.
    fn advance(&mut self, t: f64, batch: &mut Batch) {
        let dt = t - self.last_event;
        batch.time_by_low[self.low] += dt;
        batch.mass_by_low[self.low] += self.total as f64 * dt;
        batch.duration += dt;
        self.last_event = t;
    }

    fn flush(&mut self, t: f64, batch: &mut Batch) {
        for j in 0..self.queues.len() {
            self.touch(j, t, batch);
        }
    }

    fn next_low(&self, from: usize) -> usize {
        (from..self.queues.len())
            .find(|&j| !self.queues[j].is_empty())
            .map_or(0, |j| j + 1)
    }
}

/// Runs one simulation.
pub fn run(sim: &SimConfig) -> Result<SimEstimates> {
    sim.validate()?;
    let raw = simulate_stream(sim, 0)?;
    Ok(summarise(sim, vec![raw]))
}

/// Runs `replications` independent copies of `sim`, each on its own random
/// stream and with its own warmup, in parallel, and pools their batches.
/// One replication reproduces [`run`] exactly.
pub fn run_replications(sim: &SimConfig, replications: usize) -> Result<SimEstimates> {
    sim.validate()?;
    let raws = (0..replications.max(1) as u64)
        .into_par_iter()
        .map(|r| simulate_stream(sim, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarise(sim, raws))
}

/// Unsummarised output of one replication.
struct RawRun {
    batches: Vec<Batch>,
    trades: Vec<u64>,
    wait_sum: Vec<f64>,
    posts: Vec<u64>,
    n_buyers: u64,
    n_sellers: u64,
    n_trades: u64,
    n_lost: u64,
}

fn simulate_stream(sim: &SimConfig, stream: u64) -> Result<RawRun> {
    let market = &sim.market;
    let n = market.n_ticks;
    let beta = market.beta();
    let lambda = market.lambda;
    let rate = lambda + market.mu;
    let p_seller = lambda / rate;

    let choice = if lambda == 0.0 {
        SellerChoice::None
    } else {
        match &sim.mode {
            SimMode::AlphaDriven(a) => SellerChoice::Ticks(
                WeightedAliasIndex::new(a.values().to_vec()).map_err(|e| Error::invalid(format!("thinning weights: {e}")))?,
            ),
            SimMode::StrategyDriven(p) => SellerChoice::Patience(p.clone(), market.patience.clone()),
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    rng.set_stream(stream);
    let warm = sim.post_warmup_start();
    let n_post = sim.horizon - warm;
    let nb = sim.n_batches as u64;

    let mut book = Book::new(n);
    let mut batches: Vec<Batch> = Vec::with_capacity(sim.n_batches);
    let mut cur = Batch::new(n);
    let mut in_window = warm == 0;

    let mut t = 0.0;
    let mut buyers = 0u64;
    let mut trades = vec![0u64; n];
    let mut wait_sum = vec![0.0; n];
    let mut posts = vec![0u64; n];
    let mut n_sellers = 0u64;
    let mut n_trades = 0u64;
    let mut n_lost = 0u64;

    while buyers < sim.horizon {
        let dt: f64 = Exp1.sample(&mut rng);
        t += dt / rate;
        book.advance(t, &mut cur);
        // one uniform decides the event type and, for a buyer, acceptance
        let u: f64 = rng.random();
        if u < p_seller {
            let j = choice.draw(&mut rng);
            book.touch(j, t, &mut cur);
            book.queues[j].push_back(t);
            book.total += 1;
            if book.low == 0 || j + 1 < book.low {
                book.low = j + 1;
            }
            if in_window {
                posts[j] += 1;
                n_sellers += 1;
            }
            continue;
        }

        buyers += 1;
        let counted = in_window;
        if book.low == 0 {
            if counted {
                n_lost += 1;
            }
        } else {
            let j = book.low - 1;
            if (u - p_seller) / (1.0 - p_seller) < beta[j] {
                book.touch(j, t, &mut cur);
                let q = &mut book.queues[j];
                let posted = match sim.discipline {
                    Discipline::Fifo => q.pop_front(),
                    Discipline::Random => {
                        let k = rng.random_range(0..q.len());
                        q.swap_remove_back(k)
                    }
                }
                .expect("lowest tick is non-empty");
                book.total -= 1;
                if book.queues[j].is_empty() {
                    book.low = book.next_low(j + 1);
                }
                if counted {
                    let w = t - posted;
                    trades[j] += 1;
                    wait_sum[j] += w;
                    cur.wait_sum[j] += w;
                    cur.wait_count[j] += 1;
                    n_trades += 1;
                }
            } else if counted {
                n_lost += 1;
            }
        }

        if !in_window {
            if buyers == warm {
                // start the measurement window at this buyer
                book.flush(t, &mut cur);
                cur = Batch::new(n);
                in_window = true;
            }
            continue;
        }
        let k = buyers - warm;
        // buyer k (1-based) is the last of its batch
        if k * nb / n_post != (k - 1) * nb / n_post {
            book.flush(t, &mut cur);
            batches.push(std::mem::replace(&mut cur, Batch::new(n)));
        }
    }

    Ok(RawRun {
        batches,
        trades,
        wait_sum,
        posts,
        n_buyers: n_post,
        n_sellers,
        n_trades,
        n_lost,
    })
}

fn summarise(sim: &SimConfig, raws: Vec<RawRun>) -> SimEstimates {
    let market = &sim.market;
    let n = market.n_ticks;
    let mut trades = vec![0u64; n];
    let mut wait_sum = vec![0.0; n];
    let mut posts = vec![0u64; n];
    let (mut n_buyers, mut n_sellers, mut n_trades, mut n_lost) = (0, 0, 0, 0);
    let mut batches = Vec::new();
    for raw in raws {
        for j in 0..n {
            trades[j] += raw.trades[j];
            wait_sum[j] += raw.wait_sum[j];
            posts[j] += raw.posts[j];
        }
        n_buyers += raw.n_buyers;
        n_sellers += raw.n_sellers;
        n_trades += raw.n_trades;
        n_lost += raw.n_lost;
        batches.extend(raw.batches);
    }

    let alpha = sim.thinning();
    let analytics = QueueAnalytics::compute(market, &alpha);
    let non_stationary: Vec<bool> = analytics.cum_rho.iter().map(|&c| c >= 1.0 - STABILITY_MARGIN).collect();
    if non_stationary.iter().any(|&b| b) {
        warn!("cumulative load reaches one; upper ticks are not stationary");
    }

    let elapsed: f64 = batches.iter().map(|b| b.duration).sum();
    let tq = t_quantile(batches.len());

    let mean_wait = (0..n)
        .map(|j| {
            let per: Vec<f64> = batches
                .iter()
                .filter(|b| b.wait_count[j] > 0)
                .map(|b| b.wait_sum[j] / b.wait_count[j] as f64)
                .collect();
            let value = if trades[j] > 0 {
                wait_sum[j] / trades[j] as f64
            } else {
                f64::NAN
            };
            Estimate {
                value,
                half_width: half_width(&per, tq),
            }
        })
        .collect();

    let time_avg_inventory = (0..n)
        .map(|j| {
            let per: Vec<f64> = batches.iter().map(|b| b.inventory_area[j] / b.duration).collect();
            let area: f64 = batches.iter().map(|b| b.inventory_area[j]).sum();
            Estimate {
                value: area / elapsed,
                half_width: half_width(&per, tq),
            }
        })
        .collect();

    // lowest tick above j, or an empty book
    let above = |v: &[f64], j: usize| v[0] + v[j + 2..].iter().sum::<f64>();
    let best_price_tail = (0..n)
        .map(|j| {
            let per: Vec<f64> = batches.iter().map(|b| above(&b.time_by_low, j) / b.duration).collect();
            let total: f64 = batches.iter().map(|b| above(&b.time_by_low, j)).sum();
            Estimate {
                value: total / elapsed,
                half_width: half_width(&per, tq),
            }
        })
        .collect();

    // ticks below j (1-based j+1) empty: lowest tick is j+1 or higher, or none
    let from = |v: &[f64], j: usize| v[0] + v[j + 1..].iter().sum::<f64>();
    let mut cond_inventory = Vec::with_capacity(n);
    let mut cond_time_fraction = Vec::with_capacity(n);
    for j in 0..n {
        let time: f64 = batches.iter().map(|b| from(&b.time_by_low, j)).sum();
        let mass: f64 = batches.iter().map(|b| from(&b.mass_by_low, j)).sum();
        let per: Vec<f64> = batches
            .iter()
            .filter_map(|b| {
                let tt = from(&b.time_by_low, j);
                (tt > 0.0).then(|| from(&b.mass_by_low, j) / tt)
            })
            .collect();
        cond_inventory.push(Estimate {
            value: if time > 0.0 { mass / time } else { f64::NAN },
            half_width: half_width(&per, tq),
        });
        cond_time_fraction.push(time / elapsed);
    }

    let exec_price_pmf = normalise_counts(&trades);
    let posting_fraction = normalise_counts(&posts);

    SimEstimates {
        mean_wait,
        time_avg_inventory,
        best_price_tail,
        exec_price_pmf,
        posting_fraction,
        cond_inventory,
        cond_time_fraction,
        trades_per_tick: trades,
        non_stationary,
        n_buyers,
        n_trades,
        n_lost_buyers: n_lost,
        n_sellers,
        elapsed,
    }
}

fn normalise_counts(c: &[u64]) -> Vec<f64> {
    let total: u64 = c.iter().sum();
    if total == 0 {
        return vec![0.0; c.len()];
    }
    c.iter().map(|&x| x as f64 / total as f64).collect()
}

fn t_quantile(batches: usize) -> f64 {
    if batches < 2 {
        return f64::NAN;
    }
    StudentsT::new(0.0, 1.0, (batches - 1) as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::NAN)
}

fn half_width(per_batch: &[f64], tq: f64) -> f64 {
    let m = per_batch.len();
    if m < 2 {
        return f64::NAN;
    }
    let mean = per_batch.iter().sum::<f64>() / m as f64;
    let var = per_batch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    tq * (var / m as f64).sqrt()
}

/// Best response of a seller population to the empirical mean waits.
///
/// Ticks without trades or flagged non-stationary get an infinite wait, so no
/// seller picks them.
pub fn empirical_best_response(
    estimates: &SimEstimates,
    epsilon: f64,
    patience: &PatienceDistribution,
) -> Result<ThinningDistribution> {
    let waits: Vec<f64> = estimates
        .mean_wait
        .iter()
        .zip(&estimates.trades_per_tick)
        .zip(&estimates.non_stationary)
        .enumerate()
        .map(|(j, ((w, &count), &unstable))| {
            if count == 0 || unstable || !w.value.is_finite() {
                warn!("tick {} has no usable wait estimate; excluded", j + 1);
                f64::INFINITY
            } else {
                w.value
            }
        })
        .collect();
    Ok(best_response(&waits, epsilon, patience)?.thinning())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::DemandCurve;

    fn mm1(horizon: u64, seed: u64) -> SimConfig {
        SimConfig::new(
            MarketConfig::single_tick(3.0, 12.0, 1.0),
            SimMode::AlphaDriven(ThinningDistribution::uniform(1)),
            horizon,
            seed,
        )
    }

    #[test]
    fn mm1_wait_and_inventory() {
        let est = run(&mm1(1_000_000, 7)).unwrap();
        let w = est.mean_wait[0].value;
        assert!((w - 1.0 / 9.0).abs() < 0.02 / 9.0, "wait {w}");
        let q = est.time_avg_inventory[0].value;
        assert!((q - 1.0 / 3.0).abs() < 0.02, "inventory {q}");
        assert!((est.best_price_tail[0].value - 0.75).abs() < 0.01);
        assert_eq!(est.exec_price_pmf, vec![1.0]);
    }

    #[test]
    fn no_supply_loses_every_buyer() {
        let mut cfg = mm1(1000, 1);
        cfg.market.lambda = 0.0;
        let est = run(&cfg).unwrap();
        assert_eq!(est.n_trades, 0);
        assert_eq!(est.n_lost_buyers, est.n_buyers);
        assert_eq!(est.best_price_tail[0].value, 1.0);
        assert!(est.mean_wait[0].value.is_nan());
    }

    #[test]
    fn buyer_accounting_and_determinism() {
        let cfg = SimConfig::new(
            MarketConfig {
                lambda: 2.0,
                mu: 5.0,
                epsilon: 1.0,
                n_ticks: 3,
                demand: DemandCurve::new(vec![0.9, 0.7, 0.6]),
                patience: PatienceDistribution::uniform(1.0),
            },
            SimMode::AlphaDriven(ThinningDistribution::new(vec![0.3, 0.3, 0.4]).unwrap()),
            50_000,
            11,
        );
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_eq!(a.n_trades + a.n_lost_buyers, a.n_buyers);
        assert_eq!(a.n_buyers, 40_000);
        assert!((a.exec_price_pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.best_price_tail.windows(2).all(|w| w[1].value <= w[0].value));
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = mm1(100, 0);
        cfg.horizon = 199;
        assert!(run(&cfg).is_err());
        let mut cfg = mm1(1000, 0);
        cfg.warmup_fraction = 1.0;
        assert!(run(&cfg).is_err());
        let mut cfg = mm1(1000, 0);
        cfg.mode = SimMode::AlphaDriven(ThinningDistribution::uniform(2));
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn unstable_ticks_are_flagged() {
        let mut cfg = mm1(10_000, 3);
        cfg.market.lambda = 15.0;
        let est = run(&cfg).unwrap();
        assert_eq!(est.non_stationary, vec![true]);
        let out = empirical_best_response(&est, 1.0, &cfg.market.patience);
        assert!(matches!(out, Err(Error::NoFeasibleTick)));
    }

    #[test]
    fn single_tick_best_response_is_trivial() {
        let cfg = mm1(10_000, 5);
        let est = run(&cfg).unwrap();
        let out = empirical_best_response(&est, 1.0, &cfg.market.patience).unwrap();
        assert_eq!(out.values(), &[1.0]);
    }
}
