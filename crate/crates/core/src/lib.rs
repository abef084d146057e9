//! Exact and uncertain Shapley values.
//!
//! The crate covers three layers:
//!
//! * exact Shapley values of deterministic coalition games, together with the
//!   full distribution of marginal contributions under the Shapley weights
//!   ([`shapley_exact`]);
//! * Shapley values of games whose value function carries additive random
//!   noise: the mean bias `Γ_i`, the equivalent shifted deterministic game,
//!   higher moments, the variance decomposition and mixture densities
//!   ([`shapley_uncertain`]);
//! * sample-mean and permutation-sampling estimators with confidence
//!   intervals for the case where the noise law is unknown ([`estimator`]).
//!
//! [`mlvf`] builds the R² feature-attribution game for a linear model with
//! zero imputation, and [`cli`] wires everything into the `ushap` binary.
//!
//! Player indices are zero-based throughout the library API. Human-readable
//! output (CSV, coalition lists such as `[1,3]`) uses one-based numbering.

pub mod cli;
pub mod coalition;
pub mod error;
pub mod estimator;
pub mod game;
pub mod mlvf;
pub mod rng;
pub mod shapley_exact;
pub mod shapley_uncertain;
mod sum;
mod text;

pub use coalition::{Coalition, CoalitionWeight, MAX_EXACT_PLAYERS, MAX_PLAYERS};
pub use error::{Result, ShapleyError};
pub use estimator::{Estimate, EstimatorConfig, EstimatorMode};
pub use game::{DeterministicGame, NoiseModel, UncertainGame};
pub use shapley_exact::{Atom, MarginalDistribution, ShapleyResult};
pub use shapley_uncertain::{MixtureDensity, UncertainShapleyResult, VarianceDecomposition};
