use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn lobeq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lobeq"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn summary_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in summary"))
        .parse()
        .unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn equilibrate_reproduces_the_elastic_market() {
    let dir = TempDir::new().unwrap();
    let out = lobeq(dir.path(), &["equilibrate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary_value(&s, "residual") < 1e-8);
    assert!((summary_value(&s, "alpha_mean_tick") - 12.705).abs() < 0.01);
    assert!((summary_value(&s, "price_std_tick") - 15.550).abs() < 0.01);
    let csv = fs::read_to_string(dir.path().join("equilibrium.csv")).unwrap();
    assert!(csv.starts_with("# config_sha256="));
    assert_eq!(data_rows(&csv).len(), 50);
    assert!(dir.path().join("partition.csv").exists());
}

#[test]
fn outputs_are_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["--seed", "5", "--set", "simulation.horizon=20000", "simulate"];
    assert_eq!(lobeq(a.path(), &args).status.code(), Some(0));
    assert_eq!(lobeq(b.path(), &args).status.code(), Some(0));
    for name in ["sim.csv", "comparison.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn analyze_round_trips_the_equilibrium() {
    let dir = TempDir::new().unwrap();
    assert_eq!(lobeq(dir.path(), &["equilibrate"]).status.code(), Some(0));
    let eq = dir.path().join("equilibrium.csv");
    let out = lobeq(dir.path(), &["analyze", "--alpha-from", eq.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let eq_rows = data_rows(&fs::read_to_string(&eq).unwrap());
    let an_rows = data_rows(&fs::read_to_string(dir.path().join("analytics.csv")).unwrap());
    assert_eq!(eq_rows.len(), an_rows.len());
    for (e, a) in eq_rows.iter().zip(&an_rows) {
        assert_eq!(e[1], a[1], "alpha");
        assert_eq!(e[2], a[3], "exec_time");
        assert_eq!(e[3], a[4], "inventory");
    }
}

#[test]
fn single_tick_analysis() {
    let dir = TempDir::new().unwrap();
    let out = lobeq(
        dir.path(),
        &["--set", "market.n_ticks=1", "--set", "market.demand={kind=\"vector\", values=[1.0]}", "analyze", "--alpha", "1"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&fs::read_to_string(dir.path().join("analytics.csv")).unwrap());
    let t: f64 = rows[0][3].parse().unwrap();
    let q: f64 = rows[0][4].parse().unwrap();
    assert!((t - 1.0 / 9.0).abs() < 1e-12);
    assert!((q - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn overloaded_ticks_print_inf() {
    let dir = TempDir::new().unwrap();
    let out = lobeq(
        dir.path(),
        &[
            "--set",
            "market.lambda=13",
            "--set",
            "market.n_ticks=1",
            "--set",
            "market.demand={kind=\"vector\", values=[1.0]}",
            "analyze",
            "--alpha",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let rows = data_rows(&fs::read_to_string(dir.path().join("analytics.csv")).unwrap());
    assert_eq!(rows[0][3], "inf");
    assert_eq!(rows[0][4], "inf");
}

#[test]
fn two_price_solution() {
    let dir = TempDir::new().unwrap();
    let out = lobeq(dir.path(), &["two-price"]);
    assert_eq!(out.status.code(), Some(0));
    let s = fs::read_to_string(dir.path().join("two_price.txt")).unwrap();
    assert!((summary_value(&s, "alpha2") - 0.548583770355).abs() < 1e-9);
}

#[test]
fn inelastic_support_and_ode_check() {
    let dir = TempDir::new().unwrap();
    assert_eq!(lobeq(dir.path(), &["inelastic"]).status.code(), Some(0));
    let s = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!((summary_value(&s, "support_K") - 40.0 / 3.0).abs() < 1e-9);
    let check = fs::read_to_string(dir.path().join("ode_check.txt")).unwrap();
    assert!(summary_value(&check, "closed_form_ode_residual") < 1e-6);
    assert!(dir.path().join("curves.csv").exists());
    assert!(dir.path().join("conditional.csv").exists());
}

#[test]
fn saturated_book_reports_exponents() {
    let dir = TempDir::new().unwrap();
    let out = lobeq(
        dir.path(),
        &["--set", "inelastic.rho=1", "--set", "inelastic.mu=1", "--set", "inelastic.delta_bar=1", "--set", "inelastic.gamma=0.75", "inelastic"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!((summary_value(&s, "tail_loglog_slope") + 1.5).abs() < 0.01);
    assert!((summary_value(&s, "depth_loglog_slope") - 1.5).abs() < 0.01);
    assert!((summary_value(&s, "price_impact_exponent") - 2.0 / 3.0).abs() < 0.01);
}

#[test]
fn invalid_input_exits_with_usage_code() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["--set", "market.lamda=3", "equilibrate"],
        vec!["--set", "market.lambda=0", "equilibrate"],
        vec!["--set", "two_price.p2=-0.5", "two-price"],
        vec!["--set", "inelastic.gamma=0.4", "inelastic"],
        vec!["--set", "simulation.horizon=0", "simulate"],
        vec!["analyze", "--alpha", "1,2"],
    ] {
        let out = lobeq(dir.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn config_file_is_read() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 3\n[two_price]\np2 = 0.25\n").unwrap();
    let out = lobeq(dir.path(), &["--config", cfg.to_str().unwrap(), "two-price"]);
    assert_eq!(out.status.code(), Some(0));
    let default_dir = TempDir::new().unwrap();
    lobeq(default_dir.path(), &["two-price"]);
    let a = fs::read_to_string(dir.path().join("two_price.txt")).unwrap();
    let b = fs::read_to_string(default_dir.path().join("two_price.txt")).unwrap();
    assert_ne!(summary_value(&a, "alpha2"), summary_value(&b, "alpha2"));
}
