//! Equilibrium analysis of limit order books with heterogeneous seller patience.
//!
//! Sellers arrive at rate `lambda`, choose a price tick to maximise
//! `j * epsilon - delta * T_j`, and queue under price-time priority. Buyers
//! arrive at rate `mu` and take the cheapest unit with probability `beta_j`.

pub mod config;
pub mod error;
pub mod inelastic;
pub mod market;
pub mod numeric;
pub mod queue;
pub mod sim;
pub mod solver;
pub mod two_price;
pub mod verify;

pub use error::{Error, Result};
pub use market::{DemandCurve, MarketConfig, PatienceDistribution, ValidationReport, Violation};
pub use queue::{QueueAnalytics, ThinningDistribution};
pub use solver::{
    best_response, psi_map, solve_equilibrium, BestResponsePartition, EquilibriumResult, PartitionCell,
    SolverOptions,
};
pub use two_price::{two_price_equilibrium, TwoPriceProblem, TwoPriceSolution};
pub use sim::{empirical_best_response, run_replications, Discipline, Estimate, SimConfig, SimEstimates, SimMode};
