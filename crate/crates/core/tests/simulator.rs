use lob_equilibrium::queue::QueueAnalytics;
use lob_equilibrium::sim::{self, Discipline, SimConfig, SimMode};
use lob_equilibrium::{best_response, DemandCurve, MarketConfig, PatienceDistribution, ThinningDistribution};

fn three_tick_market() -> MarketConfig {
    MarketConfig {
        lambda: 4.0,
        mu: 12.0,
        epsilon: 1.0,
        n_ticks: 3,
        demand: DemandCurve::new(vec![1.0, 0.8, 0.6]),
        patience: PatienceDistribution::uniform(10.0),
    }
}

fn alpha_run(market: MarketConfig, alpha: Vec<f64>, horizon: u64, seed: u64) -> SimConfig {
    let a = ThinningDistribution::new(alpha).unwrap();
    SimConfig::new(market, SimMode::AlphaDriven(a), horizon, seed)
}

#[test]
fn single_tick_matches_mm1() {
    let cfg = alpha_run(MarketConfig::single_tick(3.0, 12.0, 1.0), vec![1.0], 400_000, 7);
    let est = sim::run(&cfg).unwrap();
    assert!(est.mean_wait[0].covers(1.0 / 9.0, 3.0), "{:?}", est.mean_wait[0]);
    assert!(est.time_avg_inventory[0].covers(1.0 / 3.0, 3.0));
    // the book is empty a fraction 1 - rho of the time
    assert!(est.best_price_tail[0].covers(0.75, 3.0));
}

#[test]
fn waits_and_inventory_match_analytics() {
    let market = three_tick_market();
    let alpha = vec![0.5, 0.3, 0.2];
    let exact = QueueAnalytics::compute(&market, &ThinningDistribution::new(alpha.clone()).unwrap());
    let est = sim::run(&alpha_run(market, alpha, 1_000_000, 11)).unwrap();
    for j in 0..3 {
        assert!(est.mean_wait[j].covers(exact.exec_time[j], 4.0), "wait at {j}");
        assert!(est.time_avg_inventory[j].covers(exact.inventory[j], 4.0), "inventory at {j}");
        assert!(est.best_price_tail[j].covers(exact.tail[j], 4.0), "tail at {j}");
    }
}

#[test]
fn littles_law_holds_on_the_path() {
    let market = three_tick_market();
    let est = sim::run(&alpha_run(market.clone(), vec![0.5, 0.3, 0.2], 600_000, 3)).unwrap();
    let posted = [0.5, 0.3, 0.2];
    for j in 0..3 {
        let rate = market.lambda * posted[j];
        let implied = rate * est.mean_wait[j].value;
        let q = est.time_avg_inventory[j];
        assert!((implied - q.value).abs() < 0.05 * q.value, "tick {j}: {implied} vs {}", q.value);
    }
}

#[test]
fn trades_and_lost_buyers_account_for_every_buyer() {
    let est = sim::run(&alpha_run(three_tick_market(), vec![0.2, 0.3, 0.5], 200_000, 5)).unwrap();
    let trades: u64 = est.trades_per_tick.iter().sum();
    assert_eq!(trades, est.n_trades);
    assert_eq!(est.n_trades + est.n_lost_buyers, est.n_buyers);
    let pmf: f64 = est.exec_price_pmf.iter().sum();
    assert!((pmf - 1.0).abs() < 1e-12);
    let posting: f64 = est.posting_fraction.iter().sum();
    assert!((posting - 1.0).abs() < 1e-12);
}

#[test]
fn service_order_does_not_change_mean_wait() {
    let mut cfg = alpha_run(three_tick_market(), vec![0.4, 0.4, 0.2], 800_000, 21);
    let fifo = sim::run(&cfg).unwrap();
    cfg.discipline = Discipline::Random;
    let random = sim::run(&cfg).unwrap();
    for j in 0..3 {
        let a = fifo.mean_wait[j];
        let b = random.mean_wait[j];
        let spread = 3.0 * (a.half_width.powi(2) + b.half_width.powi(2)).sqrt();
        assert!((a.value - b.value).abs() <= spread, "tick {j}: {a:?} vs {b:?}");
    }
}

#[test]
fn runs_are_reproducible() {
    let cfg = alpha_run(three_tick_market(), vec![0.5, 0.3, 0.2], 100_000, 99);
    assert_eq!(sim::run(&cfg).unwrap(), sim::run(&cfg).unwrap());
    let other = SimConfig { seed: 100, ..cfg.clone() };
    assert_ne!(sim::run(&cfg).unwrap().n_trades, sim::run(&other).unwrap().n_trades);
}

#[test]
fn one_replication_is_a_plain_run() {
    let cfg = alpha_run(three_tick_market(), vec![0.5, 0.3, 0.2], 100_000, 4);
    assert_eq!(sim::run_replications(&cfg, 1).unwrap(), sim::run(&cfg).unwrap());
    let pooled = sim::run_replications(&cfg, 4).unwrap();
    assert_eq!(pooled.n_buyers, 4 * sim::run(&cfg).unwrap().n_buyers);
}

#[test]
fn strategy_mode_posts_according_to_the_partition() {
    let market = three_tick_market();
    let exact = QueueAnalytics::compute(&market, &ThinningDistribution::uniform(3));
    let partition = best_response(&exact.exec_time, market.epsilon, &market.patience).unwrap();
    let target = partition.thinning();
    let cfg = SimConfig::new(market, SimMode::StrategyDriven(partition), 300_000, 8);
    let est = sim::run(&cfg).unwrap();
    for j in 0..3 {
        assert!((est.posting_fraction[j] - target.values()[j]).abs() < 0.01);
    }
}

#[test]
fn no_sellers_means_every_buyer_is_lost() {
    let mut market = three_tick_market();
    market.lambda = 0.0;
    let est = sim::run(&alpha_run(market, vec![1.0, 0.0, 0.0], 10_000, 1)).unwrap();
    assert_eq!(est.n_trades, 0);
    assert_eq!(est.n_lost_buyers, est.n_buyers);
    assert_eq!(est.n_sellers, 0);
}

#[test]
fn overloaded_ticks_are_flagged() {
    let market = MarketConfig::single_tick(13.0, 12.0, 1.0);
    let est = sim::run(&alpha_run(market, vec![1.0], 50_000, 2)).unwrap();
    assert!(est.non_stationary[0]);
}

#[test]
fn bad_configurations_are_rejected() {
    let mut cfg = alpha_run(three_tick_market(), vec![0.5, 0.3, 0.2], 100_000, 1);
    cfg.n_batches = 1;
    assert!(sim::run(&cfg).is_err());
    let cfg = alpha_run(three_tick_market(), vec![1.0, 0.0], 100_000, 1);
    assert!(sim::run(&cfg).is_err());
    let cfg = alpha_run(three_tick_market(), vec![0.5, 0.3, 0.2], 5, 1);
    assert!(sim::run(&cfg).is_err());
}
