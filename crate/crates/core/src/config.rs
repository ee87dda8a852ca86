//! Run configuration file (TOML).
//!
//! Every key has a default; the defaults describe the 50-tick elastic market.
//! A file only needs the keys it changes. `key=value` overrides address
//! dotted paths (`market.lambda=4`) and must name a key that exists after the
//! file is merged.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::inelastic::InelasticParams;
use crate::market::{DemandCurve, MarketConfig, PatienceDistribution};
use crate::sim::Discipline;
use crate::solver::SolverOptions;
use crate::two_price::TwoPriceProblem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub market: MarketSection,
    pub solver: SolverSection,
    pub simulation: SimulationSection,
    pub inelastic: InelasticSection,
    pub two_price: TwoPriceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub lambda: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub n_ticks: usize,
    pub demand: DemandSpec,
    pub patience: PatienceDistribution,
}

/// Demand as an explicit vector or as `scale * (offset + ((N - j + 1) / width)^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DemandSpec {
    Quadratic { offset: f64, width: f64, scale: f64 },
    Vector { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub eta: f64,
    pub stall_window: usize,
    pub eta_min: f64,
    pub polish_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SellerMode {
    /// Sellers draw ticks from the thinning distribution.
    Alpha,
    /// Sellers draw patience and follow the best-response partition.
    Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Buyer arrivals per run.
    pub horizon: u64,
    pub warmup_fraction: f64,
    pub n_batches: usize,
    pub discipline: DisciplineSpec,
    pub mode: SellerMode,
    /// Relative tolerance on mean waits for the comparison table.
    pub wait_tolerance: f64,
    /// Ticks with fewer trades are not compared.
    pub min_trades: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisciplineSpec {
    Fifo,
    Random,
}

impl From<DisciplineSpec> for Discipline {
    fn from(d: DisciplineSpec) -> Self {
        match d {
            DisciplineSpec::Fifo => Discipline::Fifo,
            DisciplineSpec::Random => Discipline::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InelasticSection {
    pub rho: f64,
    pub mu: f64,
    pub delta_bar: f64,
    pub gamma: f64,
    pub grid_points: usize,
    /// Right end of the price grid when `rho = 1`.
    pub p_max: f64,
    /// Best prices `s` at which the conditional density is tabulated.
    pub conditional_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPriceSection {
    pub p1: f64,
    pub p2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub patience: PatienceDistribution,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverOptions::default();
        Self {
            seed: 0,
            market: MarketSection {
                lambda: 3.0,
                mu: 12.0,
                epsilon: 1.0,
                n_ticks: 50,
                demand: DemandSpec::Quadratic {
                    offset: 0.5,
                    width: 15.0,
                    scale: 1.0 / 12.0,
                },
                patience: PatienceDistribution::uniform(160.0),
            },
            solver: SolverSection {
                tol: solver.tol,
                max_iter: solver.max_iter,
                restarts: solver.restarts,
                eta: solver.eta,
                stall_window: solver.stall_window,
                eta_min: solver.eta_min,
                polish_iter: solver.polish_iter,
            },
            simulation: SimulationSection {
                horizon: 1_000_000,
                warmup_fraction: 0.2,
                n_batches: 20,
                discipline: DisciplineSpec::Fifo,
                mode: SellerMode::Alpha,
                wait_tolerance: 0.05,
                min_trades: 1000,
            },
            inelastic: InelasticSection {
                rho: 0.5,
                mu: 12.0,
                delta_bar: 160.0,
                gamma: 1.0,
                grid_points: 10_001,
                p_max: 1000.0,
                conditional_s: vec![0.0, 1.0, 5.0],
            },
            two_price: TwoPriceSection {
                p1: 0.0,
                p2: 0.5,
                mu1: 2.0,
                mu2: 1.0,
                patience: PatienceDistribution::uniform(1.0),
            },
        }
    }
}

impl RunConfig {
    /// Defaults, then `file` (a TOML document), then `overrides`.
    pub fn resolve(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = Value::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(text) = file {
            let user: Table = text.parse().map_err(|e| Error::Config(format!("parse error: {e}")))?;
            merge(&mut doc, Value::Table(user), "")?;
        }
        for (key, raw) in overrides {
            apply_override(&mut doc, key, raw)?;
        }
        doc.try_into().map_err(|e| Error::Config(e.to_string()))
    }

    /// Canonical TOML text of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn market(&self) -> MarketConfig {
        let m = &self.market;
        let demand = match &m.demand {
            DemandSpec::Quadratic { offset, width, scale } => DemandCurve::quadratic(m.n_ticks, *offset, *width, *scale),
            DemandSpec::Vector { values } => DemandCurve::new(values.clone()),
        };
        MarketConfig {
            lambda: m.lambda,
            mu: m.mu,
            epsilon: m.epsilon,
            n_ticks: m.n_ticks,
            demand,
            patience: m.patience.clone(),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            tol: s.tol,
            max_iter: s.max_iter,
            restarts: s.restarts,
            eta: s.eta,
            stall_window: s.stall_window,
            eta_min: s.eta_min,
            polish_iter: s.polish_iter,
            seed: self.seed,
        }
    }

    pub fn inelastic_params(&self) -> Result<InelasticParams> {
        let i = &self.inelastic;
        InelasticParams::new(i.rho, i.mu, i.delta_bar, i.gamma)
    }

    pub fn two_price_problem(&self) -> TwoPriceProblem {
        let t = &self.two_price;
        TwoPriceProblem {
            p1: t.p1,
            p2: t.p2,
            mu1: t.mu1,
            mu2: t.mu2,
            patience: t.patience.clone(),
        }
    }
}

fn merge(base: &mut Value, incoming: Value, path: &str) -> Result<()> {
    match (base, incoming) {
        (Value::Table(b), Value::Table(inc)) => {
            for (k, v) in inc {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    None => return Err(Error::Config(format!("unknown key `{sub}`"))),
                    // a tagged table is replaced as a whole so fields of another kind do not leak in
                    Some(slot) if v.as_table().is_some_and(|t| t.contains_key("kind")) => *slot = v,
                    Some(slot) => merge(slot, v, &sub)?,
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut slot = &mut *doc;
    for part in key.split('.') {
        slot = slot
            .as_table_mut()
            .and_then(|t| t.get_mut(part))
            .ok_or_else(|| Error::Config(format!("override `{key}` names no existing key")))?;
    }
    let parsed = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    // integers given where floats live stay floats
    *slot = match (&*slot, parsed) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    };
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Config(format!("override `{s}` has an empty key")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}
