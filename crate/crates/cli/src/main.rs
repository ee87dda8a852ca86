use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::warn;
use sha2::{Digest, Sha256};

use lob_equilibrium::config::{parse_override, RunConfig, SellerMode};
use lob_equilibrium::inelastic::{self, InelasticParams};
use lob_equilibrium::numeric::OdeOptions;
use lob_equilibrium::queue::{QueueAnalytics, ThinningDistribution};
use lob_equilibrium::sim::{self, SimConfig, SimMode};
use lob_equilibrium::verify::{self, Budget, SLOPE_PRICE};
use lob_equilibrium::{best_response, solve_equilibrium, two_price_equilibrium, EquilibriumResult, Error, MarketConfig};

const USAGE: u8 = 1;
const NO_CONVERGENCE: u8 = 2;
const ACCEPTANCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "lobeq", version, about = "Seller-pricing equilibria of a limit-order exchange")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; built-in defaults fill missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Random seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a config key, e.g. `--set market.lambda=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorter simulations and wider statistical tolerances.
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Queue analytics for a given thinning distribution.
    Analyze {
        /// CSV with an `alpha_star` or `alpha` column (e.g. an equilibrium.csv).
        #[arg(long, conflicts_with = "alpha")]
        alpha_from: Option<PathBuf>,
        /// Comma-separated thinning weights.
        #[arg(long)]
        alpha: Option<String>,
    },
    /// Solve for the equilibrium thinning distribution.
    Equilibrate,
    /// Simulate the exchange and compare with the analytics.
    Simulate {
        /// Use the thinning distribution from this CSV instead of solving.
        #[arg(long)]
        alpha_from: Option<PathBuf>,
    },
    /// Continuous-price curves for price-insensitive buyers.
    Inelastic,
    /// Two-seller, two-price game.
    TwoPrice,
    /// Run the acceptance checks.
    Verify,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    hash: String,
    quick: bool,
}

impl Ctx {
    fn csv_preamble(&self, header: &str) -> String {
        format!("# config_sha256={} seed={}\n{header}\n", self.hash, self.cfg.seed)
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(USAGE)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let c = cli.common;
    let text = match &c.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let mut overrides = c
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = c.seed {
        overrides.push(("seed".to_string(), seed.to_string()));
    }
    let cfg = RunConfig::resolve(text.as_deref(), &overrides)?;
    let hash = Sha256::digest(cfg.to_toml().as_bytes())
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
    let ctx = Ctx {
        cfg,
        out: c.out,
        hash,
        quick: c.quick,
    };
    if !matches!(cli.command, Command::Verify) {
        fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    }
    match cli.command {
        Command::Analyze { alpha_from, alpha } => cmd_analyze(&ctx, alpha_from.as_deref(), alpha.as_deref()),
        Command::Equilibrate => cmd_equilibrate(&ctx),
        Command::Simulate { alpha_from } => cmd_simulate(&ctx, alpha_from.as_deref()),
        Command::Inelastic => cmd_inelastic(&ctx),
        Command::TwoPrice => cmd_two_price(&ctx),
        Command::Verify => cmd_verify(&ctx),
    }
}

fn validated_market(ctx: &Ctx) -> Result<MarketConfig> {
    let market = ctx.cfg.market();
    let report = market.validate();
    if !report.is_pass() {
        bail!("invalid market configuration:\n{report}");
    }
    Ok(market)
}

/// Reads the `alpha_star` (or `alpha`) column of a CSV written by this tool.
fn read_alpha(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| anyhow!("{} is empty", path.display()))?.split(',').collect();
    let col = header
        .iter()
        .position(|h| h.trim() == "alpha_star")
        .or_else(|| header.iter().position(|h| h.trim() == "alpha"))
        .ok_or_else(|| anyhow!("{} has no alpha_star or alpha column", path.display()))?;
    lines
        .map(|l| {
            let field = l.split(',').nth(col).ok_or_else(|| anyhow!("short row `{l}`"))?;
            field.trim().parse::<f64>().with_context(|| format!("bad number `{field}`"))
        })
        .collect()
}

fn thinning_for(market: &MarketConfig, weights: Vec<f64>) -> Result<ThinningDistribution> {
    if weights.len() != market.n_ticks {
        bail!("thinning distribution has {} entries, market has {} ticks", weights.len(), market.n_ticks);
    }
    Ok(ThinningDistribution::new(weights)?)
}

fn cmd_analyze(ctx: &Ctx, alpha_from: Option<&Path>, alpha: Option<&str>) -> Result<u8> {
    let market = validated_market(ctx)?;
    let weights = match (alpha_from, alpha) {
        (Some(p), _) => read_alpha(p)?,
        (None, Some(list)) => list
            .split(',')
            .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad weight `{s}`")))
            .collect::<Result<_>>()?,
        (None, None) => bail!("analyze needs --alpha-from FILE or --alpha LIST"),
    };
    let alpha = thinning_for(&market, weights)?;
    let a = QueueAnalytics::compute(&market, &alpha);
    let mut csv = ctx.csv_preamble("tick,alpha,rho,exec_time,inventory,tail");
    for j in 0..market.n_ticks {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            j + 1,
            alpha.values()[j],
            a.rho[j],
            a.exec_time[j],
            a.inventory[j],
            a.tail[j]
        );
    }
    ctx.write("analytics.csv", &csv)?;
    Ok(0)
}

fn write_equilibrium(ctx: &Ctx, r: &EquilibriumResult, failed: bool) -> Result<()> {
    let a = &r.analytics;
    let mut csv = ctx.csv_preamble("tick,alpha_star,exec_time,inventory,tail");
    for j in 0..r.alpha_star.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            j + 1,
            r.alpha_star.values()[j],
            a.exec_time[j],
            a.inventory[j],
            a.tail[j]
        );
    }
    ctx.write("equilibrium.csv", &csv)?;

    let mut part = ctx.csv_preamble("delta_lo,delta_hi,tick");
    for c in &r.partition.cells {
        let _ = writeln!(part, "{},{},{}", c.lo, c.hi, c.tick);
    }
    ctx.write("partition.csv", &part)?;

    let (am, asd) = r.alpha_star.tick_moments();
    let (pm, psd) = a.time_average_price_moments();
    let mut s = String::new();
    if failed {
        s.push_str("FAILED: residual above tolerance; best iterate written\n");
    }
    let _ = writeln!(s, "config_sha256 = {}", ctx.hash);
    let _ = writeln!(s, "seed = {}", ctx.cfg.seed);
    let _ = writeln!(s, "residual = {:e}", r.residual);
    let _ = writeln!(s, "tolerance = {:e}", ctx.cfg.solver.tol);
    let _ = writeln!(s, "alpha_mean_tick = {am}");
    let _ = writeln!(s, "alpha_std_tick = {asd}");
    let _ = writeln!(s, "price_mean_tick = {pm}");
    let _ = writeln!(s, "price_std_tick = {psd}");
    let _ = writeln!(s, "total_load = {}", a.cum_rho.last().copied().unwrap_or(0.0));
    let _ = writeln!(s, "exec_time_increasing_convex = {}", r.premise_holds);
    let _ = writeln!(s, "strategy_monotone = {}", r.strategy_monotone);
    let _ = writeln!(s, "restarts = {}", r.restarts_used);
    let _ = writeln!(s, "converged_restarts = {}", r.converged_restarts);
    let _ = writeln!(s, "multiple_equilibria = {}", r.multiple_equilibria);
    ctx.write("summary.txt", &s)
}

fn cmd_equilibrate(ctx: &Ctx) -> Result<u8> {
    let market = validated_market(ctx)?;
    match solve_equilibrium(&market, &ctx.cfg.solver_options()) {
        Ok(r) => {
            write_equilibrium(ctx, &r, false)?;
            Ok(0)
        }
        Err(Error::NoConvergence { tol, best }) => {
            write_equilibrium(ctx, &best, true)?;
            eprintln!("equilibrium search did not reach {tol:e}; best residual {:e}", best.residual);
            Ok(NO_CONVERGENCE)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_simulate(ctx: &Ctx, alpha_from: Option<&Path>) -> Result<u8> {
    let market = validated_market(ctx)?;
    let s = &ctx.cfg.simulation;
    let alpha = match alpha_from {
        Some(p) => thinning_for(&market, read_alpha(p)?)?,
        None => match solve_equilibrium(&market, &ctx.cfg.solver_options()) {
            Ok(r) => r.alpha_star,
            Err(Error::NoConvergence { best, .. }) => {
                warn!("equilibrium not reached; simulating the best iterate");
                best.alpha_star
            }
            Err(e) => return Err(e.into()),
        },
    };
    let analytics = QueueAnalytics::compute(&market, &alpha);
    let mode = match s.mode {
        SellerMode::Alpha => SimMode::AlphaDriven(alpha.clone()),
        SellerMode::Strategy => {
            SimMode::StrategyDriven(best_response(&analytics.exec_time, market.epsilon, &market.patience)?)
        }
    };
    let horizon = if ctx.quick { s.horizon / 10 } else { s.horizon };
    let sim_cfg = SimConfig {
        market: market.clone(),
        mode,
        horizon,
        warmup_fraction: s.warmup_fraction,
        n_batches: s.n_batches,
        seed: ctx.cfg.seed,
        discipline: s.discipline.into(),
    };
    let est = sim::run(&sim_cfg)?;

    let mut csv = ctx.csv_preamble(
        "tick,trades,posting_fraction,exec_price_pmf,mean_wait,mean_wait_hw,inventory,inventory_hw,best_price_tail,best_price_tail_hw,cond_inventory,cond_inventory_hw,cond_time_fraction,non_stationary",
    );
    for j in 0..market.n_ticks {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            j + 1,
            est.trades_per_tick[j],
            est.posting_fraction[j],
            est.exec_price_pmf[j],
            est.mean_wait[j].value,
            est.mean_wait[j].half_width,
            est.time_avg_inventory[j].value,
            est.time_avg_inventory[j].half_width,
            est.best_price_tail[j].value,
            est.best_price_tail[j].half_width,
            est.cond_inventory[j].value,
            est.cond_inventory[j].half_width,
            est.cond_time_fraction[j],
            est.non_stationary[j]
        );
    }
    ctx.write("sim.csv", &csv)?;

    let tol = s.wait_tolerance * if ctx.quick { 2.0 } else { 1.0 };
    let mut cmp = ctx.csv_preamble("tick,trades,exec_time,mean_wait,half_width,rel_error,status");
    let (mut compared, mut passed) = (0, 0);
    for j in 0..market.n_ticks {
        let t = analytics.exec_time[j];
        let w = est.mean_wait[j];
        let rel = (w.value - t).abs() / t;
        let status = if est.non_stationary[j] {
            "non-stationary"
        } else if est.trades_per_tick[j] < s.min_trades {
            "skipped"
        } else {
            compared += 1;
            if rel <= tol {
                passed += 1;
                "pass"
            } else {
                "fail"
            }
        };
        let _ = writeln!(
            cmp,
            "{},{},{},{},{},{},{}",
            j + 1,
            est.trades_per_tick[j],
            t,
            w.value,
            w.half_width,
            rel,
            status
        );
    }
    ctx.write("comparison.csv", &cmp)?;

    let mut sum = String::new();
    let _ = writeln!(sum, "config_sha256 = {}", ctx.hash);
    let _ = writeln!(sum, "seed = {}", ctx.cfg.seed);
    let _ = writeln!(sum, "horizon = {horizon}");
    let _ = writeln!(sum, "buyers_after_warmup = {}", est.n_buyers);
    let _ = writeln!(sum, "sellers_after_warmup = {}", est.n_sellers);
    let _ = writeln!(sum, "trades = {}", est.n_trades);
    let _ = writeln!(sum, "lost_buyers = {}", est.n_lost_buyers);
    let _ = writeln!(sum, "elapsed_time = {}", est.elapsed);
    let _ = writeln!(sum, "wait_tolerance = {tol}");
    let _ = writeln!(sum, "ticks_compared = {compared}");
    let _ = writeln!(sum, "ticks_passing = {passed}");
    let _ = writeln!(
        sum,
        "non_stationary_ticks = {}",
        est.non_stationary.iter().filter(|&&b| b).count()
    );
    ctx.write("sim_summary.txt", &sum)?;
    Ok(0)
}

fn cmd_inelastic(ctx: &Ctx) -> Result<u8> {
    let params = ctx.cfg.inelastic_params()?;
    let sec = &ctx.cfg.inelastic;
    if !params.is_saturated() && params.gamma != 1.0 {
        bail!("rho < 1 is supported for uniform patience (gamma = 1) only");
    }
    if sec.grid_points < 3 {
        bail!("inelastic.grid_points must be at least 3");
    }
    let p_end = if params.is_saturated() {
        sec.p_max
    } else {
        0.999 * params.support()
    };
    let grid = inelastic::quantile_grid(&params, p_end, sec.grid_points)?;
    let f: Vec<f64> = grid
        .iter()
        .map(|&p| inelastic::price_cdf(&params, p))
        .collect::<Result<_, _>>()?;

    let mut curves = ctx.csv_preamble("p,F,Q,D");
    for (&p, &fv) in grid.iter().zip(&f) {
        let q = inelastic::inventory_density(&params, p)?;
        let d = inelastic::market_depth(&params, p)?;
        let _ = writeln!(curves, "{p},{fv},{q},{d}");
    }
    ctx.write("curves.csv", &curves)?;

    let mut cond = ctx.csv_preamble("p,s,Qc");
    for &s in &sec.conditional_s {
        if !(s >= 0.0 && s < p_end) {
            warn!("conditional price s = {s} lies outside the tabulated range; skipped");
            continue;
        }
        for &p in grid.iter().filter(|&&p| p >= s) {
            let qc = inelastic::conditional_density(&params, p, s)?;
            let _ = writeln!(cond, "{p},{s},{qc}");
        }
    }
    ctx.write("conditional.csv", &cond)?;

    let residual = inelastic::ode_residual(&params, &grid, &f)?;
    let sol = inelastic::integrate_ode(&params, p_end, OdeOptions::default())?;
    let mut gap = 0.0f64;
    for (&p, &fv) in sol.grid.iter().zip(&sol.f_values) {
        gap = gap.max((fv - inelastic::price_cdf(&params, p)?).abs());
    }
    let mut check = String::new();
    let _ = writeln!(check, "closed_form_ode_residual = {residual:e}");
    let _ = writeln!(check, "integration_max_gap = {gap:e}");
    let _ = writeln!(check, "integration_steps = {}", sol.grid.len());
    let _ = writeln!(check, "integration_reached_p = {}", sol.reached_p);
    let _ = writeln!(check, "integration_underflow = {}", sol.underflow);
    ctx.write("ode_check.txt", &check)?;

    let mut sum = String::new();
    let _ = writeln!(sum, "config_sha256 = {}", ctx.hash);
    let _ = writeln!(sum, "rho = {}", params.rho);
    let _ = writeln!(sum, "mu = {}", params.mu);
    let _ = writeln!(sum, "delta_bar = {}", params.delta_bar);
    let _ = writeln!(sum, "gamma = {}", params.gamma);
    if params.is_saturated() {
        write_tail_summary(&mut sum, &params)?;
    } else {
        let _ = writeln!(sum, "support_K = {}", params.support());
        let _ = writeln!(sum, "F_at_0 = {}", inelastic::equilibrium_cdf(&params, 0.0)?);
        let _ = writeln!(sum, "F_at_K = {}", inelastic::equilibrium_cdf(&params, params.support())?);
    }
    ctx.write("summary.txt", &sum)?;
    Ok(0)
}

fn write_tail_summary(sum: &mut String, params: &InelasticParams) -> Result<()> {
    let _ = writeln!(sum, "tail_scale_c = {}", params.tail_scale());
    let _ = writeln!(sum, "tail_exponent = {}", params.tail_exponent());
    // exponents are read at a fixed multiple of the tail's own price scale
    let p = SLOPE_PRICE / (3.0 * params.tail_scale());
    let _ = writeln!(sum, "slope_price = {p}");
    let _ = writeln!(sum, "tail_loglog_slope = {}", inelastic::tail_slope(params, p)?);
    let _ = writeln!(sum, "depth_loglog_slope = {}", inelastic::depth_slope(params, p)?);
    let _ = writeln!(sum, "price_impact_exponent = {}", inelastic::impact_exponent(params, p)?);
    Ok(())
}

fn cmd_two_price(ctx: &Ctx) -> Result<u8> {
    let prob = ctx.cfg.two_price_problem();
    let s = two_price_equilibrium(&prob)?;
    let mut out = String::new();
    let _ = writeln!(out, "config_sha256 = {}", ctx.hash);
    let _ = writeln!(out, "alpha2 = {}", s.alpha2);
    let _ = writeln!(out, "residual = {:e}", s.residual);
    let _ = writeln!(out, "boundary = {}", s.boundary);
    let _ = writeln!(out, "threshold = {}", prob.threshold(s.alpha2));
    ctx.write("two_price.txt", &out)?;
    print!("{out}");
    Ok(0)
}

fn cmd_verify(ctx: &Ctx) -> Result<u8> {
    let mut budget = if ctx.quick { Budget::quick() } else { Budget::full() };
    if ctx.cfg.seed != 0 {
        budget.seed = ctx.cfg.seed;
    }
    let outcomes = verify::run_all(&budget);
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    Ok(if failed == 0 { 0 } else { ACCEPTANCE })
}
