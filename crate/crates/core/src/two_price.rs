//! One-shot game with two sellers and two admissible prices.
//!
//! A seller picks the high price `p2` exactly when its patience falls below
//! the threshold `mu1 mu2 (p2 - p1) / (mu1 - mu2 + alpha2/2 (mu1 + mu2))`, so
//! the equilibrium probability of the high price solves
//! `alpha2 = F(threshold(alpha2))`.

use crate::error::{Error, Result};
use crate::market::PatienceDistribution;
use crate::numeric::brent;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPriceProblem {
    pub p1: f64,
    pub p2: f64,
    /// Buyer rate while the cheapest unit sits at `p1`.
    pub mu1: f64,
    /// Buyer rate while the cheapest unit sits at `p2`.
    pub mu2: f64,
    pub patience: PatienceDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPriceSolution {
    pub alpha2: f64,
    /// `|alpha2 - F(threshold(alpha2))|`.
    pub residual: f64,
    /// The root sits at an end of `[0, 1]`.
    pub boundary: bool,
}

impl TwoPriceProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.p1.is_finite() && self.p2.is_finite()) || self.p2 < self.p1 {
            return Err(Error::invalid(format!(
                "prices must satisfy p1 <= p2, got p1 = {}, p2 = {}",
                self.p1, self.p2
            )));
        }
        if !(self.mu2 > 0.0 && self.mu1 > self.mu2 && self.mu1.is_finite()) {
            return Err(Error::invalid(format!(
                "buyer rates must satisfy mu1 > mu2 > 0, got mu1 = {}, mu2 = {}",
                self.mu1, self.mu2
            )));
        }
        self.patience.validate().into_result()
    }

    /// Patience level below which a seller prefers the high price.
    pub fn threshold(&self, alpha2: f64) -> f64 {
        self.mu1 * self.mu2 * (self.p2 - self.p1)
            / (self.mu1 - self.mu2 + 0.5 * alpha2 * (self.mu1 + self.mu2))
    }

    /// `alpha2 - F(threshold(alpha2))`; increasing in `alpha2`.
    pub fn fixed_point_gap(&self, alpha2: f64) -> f64 {
        alpha2 - self.patience.cdf_unchecked(self.threshold(alpha2))
    }
}

/// Equilibrium probability of posting the high price.
pub fn two_price_equilibrium(problem: &TwoPriceProblem) -> Result<TwoPriceSolution> {
    problem.validate()?;
    let g = |a: f64| problem.fixed_point_gap(a);
    let g0 = g(0.0);
    let g1 = g(1.0);
    let (alpha2, boundary) = if g0 >= 0.0 {
        (0.0, true)
    } else if g1 <= 0.0 {
        (1.0, true)
    } else {
        (brent(g, 0.0, 1.0, 1e-16, 500), false)
    };
    Ok(TwoPriceSolution {
        alpha2,
        residual: g(alpha2).abs(),
        boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(p1: f64, p2: f64, mu1: f64, mu2: f64) -> TwoPriceProblem {
        TwoPriceProblem {
            p1,
            p2,
            mu1,
            mu2,
            patience: PatienceDistribution::uniform(1.0),
        }
    }

    #[test]
    fn equal_prices_give_zero() {
        let s = two_price_equilibrium(&problem(1.0, 1.0, 2.0, 1.0)).unwrap();
        assert_eq!(s.alpha2, 0.0);
        assert_eq!(s.residual, 0.0);
    }

    #[test]
    fn quadratic_oracle() {
        // alpha = 1 / (1 + 1.5 alpha)  =>  1.5 a^2 + a - 1 = 0
        let s = two_price_equilibrium(&problem(0.0, 0.5, 2.0, 1.0)).unwrap();
        let expected = (7f64.sqrt() - 1.0) / 3.0;
        assert!((s.alpha2 - expected).abs() < 1e-12, "{}", s.alpha2);
        assert!(s.residual < 1e-10);
        assert!(!s.boundary);
    }

    #[test]
    fn general_uniform_quadratic() {
        for &(mu1, mu2, dp) in &[(3.0, 1.0, 0.2), (5.0, 4.0, 0.05), (10.0, 0.5, 0.01)] {
            let s = two_price_equilibrium(&problem(1.0, 1.0 + dp, mu1, mu2)).unwrap();
            let a = 0.5 * (mu1 + mu2);
            let b = mu1 - mu2;
            let c = mu1 * mu2 * dp;
            let q = a * s.alpha2 * s.alpha2 + b * s.alpha2 - c;
            assert!(q.abs() < 1e-10, "quadratic residual {q}");
            assert!(s.residual < 1e-10);
        }
    }

    #[test]
    fn large_gap_saturates() {
        // threshold exceeds delta_bar for every alpha2: everyone posts high
        let s = two_price_equilibrium(&problem(0.0, 10.0, 2.0, 1.0)).unwrap();
        assert_eq!(s.alpha2, 1.0);
        assert!(s.boundary);
        assert_eq!(s.residual, 0.0);
    }

    #[test]
    fn bad_orderings_rejected() {
        assert!(two_price_equilibrium(&problem(2.0, 1.0, 2.0, 1.0)).is_err());
        assert!(two_price_equilibrium(&problem(1.0, 2.0, 1.0, 2.0)).is_err());
        assert!(two_price_equilibrium(&problem(1.0, 2.0, 1.0, 0.0)).is_err());
    }
}
