//! Exogenous model parameters: arrival rates, the tick grid, the demand curve
//! and the distribution of seller patience.
//!
//! Ticks are numbered `1..=N` in the public API wherever a single tick is
//! named; per-tick vectors are stored 0-based, so entry `j - 1` belongs to
//! tick `j`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One broken invariant, naming the offending field and the rule it violates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Outcome of [`MarketConfig::validate`]. An empty list means the config passed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, rule: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            rule: rule.into(),
        });
    }

    fn extend_prefixed(&mut self, prefix: &str, other: ValidationReport) {
        for v in other.violations {
            self.push(format!("{prefix}.{}", v.field), v.rule);
        }
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_pass() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_pass() {
            return write!(f, "pass");
        }
        writeln!(f, "fail:")?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Buy probability at each tick, given that tick is the lowest outstanding price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandCurve {
    beta: Vec<f64>,
}

impl DemandCurve {
    pub fn new(beta: Vec<f64>) -> Self {
        Self { beta }
    }

    /// `beta_j = scale * (offset + ((N - j + 1) / width)^2)`, decreasing in `j`.
    pub fn quadratic(n_ticks: usize, offset: f64, width: f64, scale: f64) -> Self {
        let n = n_ticks as f64;
        let beta = (1..=n_ticks)
            .map(|j| {
                let x = (n - j as f64 + 1.0) / width;
                scale * (offset + x * x)
            })
            .collect();
        Self { beta }
    }

    /// Price-insensitive buyers: `beta_j = 1` everywhere.
    pub fn inelastic(n_ticks: usize) -> Self {
        Self {
            beta: vec![1.0; n_ticks],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.beta
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (i, &b) in self.beta.iter().enumerate() {
            if !(b > 0.0 && b <= 1.0) {
                report.push(format!("beta[{}]", i + 1), format!("must lie in (0, 1], got {b}"));
            }
        }
        if self.beta.windows(2).any(|w| w[1] > w[0]) {
            report.push("beta", "demand must be non-increasing in the tick");
        }
        report
    }
}

/// Distribution `F_delta` of the per-unit-time waiting cost of an arriving seller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PatienceDistribution {
    /// Uniform on `[0, delta_bar]`.
    Uniform { delta_bar: f64 },
    /// `F(x) = (x / delta_bar)^gamma` with `gamma` in `(1/2, 1]`.
    Power { delta_bar: f64, gamma: f64 },
    /// Piecewise-linear CDF through `(x, F(x))` knots; the last knot fixes `delta_bar`.
    Tabulated { table: Vec<(f64, f64)> },
}

impl PatienceDistribution {
    pub fn uniform(delta_bar: f64) -> Self {
        Self::Uniform { delta_bar }
    }

    pub fn power(delta_bar: f64, gamma: f64) -> Self {
        Self::Power { delta_bar, gamma }
    }

    pub fn tabulated(table: Vec<(f64, f64)>) -> Self {
        Self::Tabulated { table }
    }

    /// Upper end of the support.
    pub fn delta_bar(&self) -> f64 {
        match self {
            Self::Uniform { delta_bar } | Self::Power { delta_bar, .. } => *delta_bar,
            Self::Tabulated { table } => table.last().map_or(0.0, |&(x, _)| x),
        }
    }

    /// Exponent of the power family; uniform reports 1.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            Self::Uniform { .. } => Some(1.0),
            Self::Power { gamma, .. } => Some(*gamma),
            Self::Tabulated { .. } => None,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        match self {
            Self::Uniform { delta_bar } => {
                if !(*delta_bar > 0.0 && delta_bar.is_finite()) {
                    report.push("delta_bar", format!("must be finite and > 0, got {delta_bar}"));
                }
            }
            Self::Power { delta_bar, gamma } => {
                if !(*delta_bar > 0.0 && delta_bar.is_finite()) {
                    report.push("delta_bar", format!("must be finite and > 0, got {delta_bar}"));
                }
                if !(*gamma > 0.5 && *gamma <= 1.0) {
                    report.push("gamma", format!("must lie in (1/2, 1], got {gamma}"));
                }
            }
            Self::Tabulated { table } => {
                if table.len() < 2 {
                    report.push("table", "needs at least two knots");
                    return report;
                }
                let (x0, f0) = table[0];
                let (xn, fn_) = table[table.len() - 1];
                if x0 != 0.0 || f0 != 0.0 {
                    report.push("table", "first knot must be (0, 0)");
                }
                if fn_ != 1.0 {
                    report.push("table", "last knot must have F = 1");
                }
                if !(xn > 0.0 && xn.is_finite()) {
                    report.push("table", "last knot must sit at a finite delta_bar > 0");
                }
                if table.windows(2).any(|w| w[1].0 <= w[0].0) {
                    report.push("table", "x grid must be strictly increasing");
                }
                if table.windows(2).any(|w| w[1].1 < w[0].1) {
                    report.push("table", "F values must be non-decreasing");
                }
                if table.iter().any(|&(_, f)| !(0.0..=1.0).contains(&f)) {
                    report.push("table", "F values must lie in [0, 1]");
                }
            }
        }
        report
    }

    /// `F(min(x, delta_bar))`, clamped to `[0, 1]`. Negative `x` is rejected.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(Error::NegativePatience(x));
        }
        Ok(self.cdf_unchecked(x))
    }

    /// Same as [`cdf`](Self::cdf) but maps negative arguments to 0.
    pub(crate) fn cdf_unchecked(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let db = self.delta_bar();
        if x >= db {
            return 1.0;
        }
        let f = match self {
            Self::Uniform { delta_bar } => x / delta_bar,
            Self::Power { delta_bar, gamma } => (x / delta_bar).powf(*gamma),
            Self::Tabulated { table } => {
                let k = table.partition_point(|&(tx, _)| tx <= x);
                let (xa, fa) = table[k - 1];
                let (xb, fb) = table[k];
                fa + (fb - fa) * (x - xa) / (xb - xa)
            }
        };
        f.clamp(0.0, 1.0)
    }

    /// Generalised inverse `inf { x : F(x) >= u }` for `u` in `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            Self::Uniform { delta_bar } => u * delta_bar,
            Self::Power { delta_bar, gamma } => delta_bar * u.powf(1.0 / gamma),
            Self::Tabulated { table } => {
                if u <= 0.0 {
                    // flat leading segments carry no mass; start of the support
                    let k = table.partition_point(|&(_, f)| f <= 0.0);
                    return table[k.saturating_sub(1)].0;
                }
                let k = table.partition_point(|&(_, f)| f < u).max(1);
                let (xa, fa) = table[k - 1];
                let (xb, fb) = table[k.min(table.len() - 1)];
                if fb == fa {
                    xb
                } else {
                    xa + (xb - xa) * (u - fa) / (fb - fa)
                }
            }
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    /// `E[delta]`.
    pub fn mean(&self) -> f64 {
        match self {
            Self::Uniform { delta_bar } => 0.5 * delta_bar,
            Self::Power { delta_bar, gamma } => delta_bar * gamma / (gamma + 1.0),
            Self::Tabulated { table } => table
                .windows(2)
                .map(|w| (w[1].1 - w[0].1) * 0.5 * (w[0].0 + w[1].0))
                .sum(),
        }
    }
}

/// All exogenous parameters of the discrete-tick exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketConfig {
    /// Seller arrival rate.
    pub lambda: f64,
    /// Buyer arrival rate.
    pub mu: f64,
    /// Tick size; tick `j` sells at price `j * epsilon`.
    pub epsilon: f64,
    pub n_ticks: usize,
    pub demand: DemandCurve,
    pub patience: PatienceDistribution,
}

impl MarketConfig {
    /// The 50-tick elastic-demand market used as the built-in default:
    /// `lambda = 3`, `mu = 12`, `epsilon = 1`, `delta ~ U[0, 160]` and
    /// `beta_j = (1/12) (0.5 + ((N - j + 1) / 15)^2)`.
    pub fn elastic_example() -> Self {
        let n_ticks = 50;
        Self {
            lambda: 3.0,
            mu: 12.0,
            epsilon: 1.0,
            n_ticks,
            demand: DemandCurve::quadratic(n_ticks, 0.5, 15.0, 1.0 / 12.0),
            patience: PatienceDistribution::uniform(160.0),
        }
    }

    /// Single tick, `beta = 1`: the exchange collapses to an M/M/1 queue.
    pub fn single_tick(lambda: f64, mu: f64, delta_bar: f64) -> Self {
        Self {
            lambda,
            mu,
            epsilon: 1.0,
            n_ticks: 1,
            demand: DemandCurve::inelastic(1),
            patience: PatienceDistribution::uniform(delta_bar),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            report.push("lambda", format!("lambda > 0 required, got {}", self.lambda));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            report.push("mu", format!("mu > 0 required, got {}", self.mu));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            report.push("epsilon", format!("epsilon > 0 required, got {}", self.epsilon));
        }
        if self.n_ticks == 0 {
            report.push("n_ticks", "n_ticks >= 1 required");
        }
        if self.demand.len() != self.n_ticks {
            report.push(
                "demand",
                format!("has {} entries, expected n_ticks = {}", self.demand.len(), self.n_ticks),
            );
        }
        report.extend_prefixed("demand", self.demand.validate());
        report.extend_prefixed("patience", self.patience.validate());
        report
    }

    pub fn beta(&self) -> &[f64] {
        self.demand.values()
    }

    pub fn delta_bar(&self) -> f64 {
        self.patience.delta_bar()
    }
}
