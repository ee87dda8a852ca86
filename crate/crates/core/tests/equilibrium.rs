use approx::assert_abs_diff_eq;
use lob_equilibrium::queue::QueueAnalytics;
use lob_equilibrium::{psi_map, solve_equilibrium, MarketConfig, SolverOptions, ThinningDistribution};
use proptest::prelude::*;

// Psi at the uniform distribution on the 50-tick market, ticks 6..=43.
const PSI_UNIFORM: [f64; 38] = [
    0.003622947373926655,
    0.07545561352796326,
    0.0715121322967418,
    0.06767818849912655,
    0.06395359551508395,
    0.060338159864248286,
    0.05683168022025631,
    0.053433946263676146,
    0.05014473734396280,
    0.0469638209148166,
    0.04389095070062021,
    0.04092586454306535,
    0.03806828186790978,
    0.03531790070041951,
    0.03267439414633189,
    0.030137406241881215,
    0.02770654706456982,
    0.02538138698672912,
    0.023161449952121993,
    0.02104620566905277,
    0.019035060656047154,
    0.017127348171312284,
    0.015322317245810166,
    0.013619121388260713,
    0.012016808150050143,
    0.010514311807245075,
    0.009110453217882973,
    0.007803953871536942,
    0.006593475867746595,
    0.0054777067880680316,
    0.004455518827345704,
    0.003526244982877914,
    0.002690128880326415,
    0.0019490103179583902,
    0.0013072864744098096,
    0.0007731071757936523,
    0.00035959500898973223,
    7.334147583428968e-5,
];

#[test]
fn psi_at_uniform_is_pinned() {
    let cfg = MarketConfig::elastic_example();
    let psi = psi_map(&cfg, &ThinningDistribution::uniform(50)).unwrap();
    let v = psi.values();
    for j in 0..50 {
        let expected = if (5..43).contains(&j) { PSI_UNIFORM[j - 5] } else { 0.0 };
        assert_abs_diff_eq!(v[j], expected, epsilon = 1e-12);
    }
}

#[test]
fn uniform_is_unstable_above_tick_43() {
    let cfg = MarketConfig::elastic_example();
    let a = QueueAnalytics::compute(&cfg, &ThinningDistribution::uniform(50));
    assert_abs_diff_eq!(a.exec_time[0], 0.0865717583686033, epsilon = 1e-13);
    assert!(a.exec_time[42].is_finite());
    assert!(a.exec_time[43..].iter().all(|t| t.is_infinite()));
}

#[test]
fn elastic_equilibrium_shape() {
    let cfg = MarketConfig::elastic_example();
    let r = solve_equilibrium(&cfg, &SolverOptions::default()).unwrap();
    assert!(r.residual < 1e-8);
    assert!(r.premise_holds && r.strategy_monotone);
    assert!(!r.multiple_equilibria);
    let (mean, sd) = r.alpha_star.tick_moments();
    assert!((mean - 12.705).abs() < 0.01 && (sd - 10.526).abs() < 0.01);
    let (pm, ps) = r.analytics.time_average_price_moments();
    assert!((pm - 23.770).abs() < 0.01 && (ps - 15.550).abs() < 0.01);
    let total: f64 = r.analytics.rho.iter().sum();
    assert!(total < 1.0);
    // inventory dips in the middle and rises again toward the top tick
    let q = &r.analytics.inventory;
    let dip = q[30..45].iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(q[49] > 5.0 * dip);
    assert!(q[49] > q[0]);
}

#[test]
fn single_tick_is_mm1() {
    let cfg = MarketConfig::single_tick(3.0, 12.0, 1.0);
    let a = QueueAnalytics::compute(&cfg, &ThinningDistribution::uniform(1));
    assert_abs_diff_eq!(a.exec_time[0], 1.0 / 9.0, epsilon = 1e-12);
    assert_abs_diff_eq!(a.inventory[0], 1.0 / 3.0, epsilon = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psi_maps_into_the_simplex(w in prop::collection::vec(0.0f64..1.0, 50)) {
        prop_assume!(w.iter().sum::<f64>() > 1e-3);
        let cfg = MarketConfig::elastic_example();
        let alpha = ThinningDistribution::new(w).unwrap();
        let psi = psi_map(&cfg, &alpha).unwrap();
        let s: f64 = psi.values().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
        prop_assert!(psi.values().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn execution_times_increase_with_tick(w in prop::collection::vec(0.0f64..1.0, 50)) {
        prop_assume!(w.iter().sum::<f64>() > 1e-3);
        let cfg = MarketConfig::elastic_example();
        let a = QueueAnalytics::compute(&cfg, &ThinningDistribution::new(w).unwrap());
        for j in 1..50 {
            prop_assert!(a.exec_time[j] >= a.exec_time[j - 1]);
        }
    }
}
