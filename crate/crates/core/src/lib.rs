//! Drift estimation for discretely observed diffusions with sparse deep ReLU
//! networks.
//!
//! The pipeline is: simulate a path of `dX = b(X) dt + Σ(X) dw` ([`sde_sim`]),
//! turn it into difference-quotient regression pairs, fit a member of the
//! bounded sparse network class `F(L, p, s, F)` by projected gradient descent
//! ([`relu_net`], [`trainer`]), and measure its risk against the true drift
//! component by Monte Carlo ([`risk`]). [`theory`] holds the closed-form rate
//! and architecture quantities, [`drift_models`] the ground-truth drift
//! families and class validators, and [`experiment`] the config-driven sweep
//! runner behind the `driftnet` binary.

pub mod config;
pub mod drift_models;
pub mod error;
pub mod experiment;
pub mod function;
pub mod relu_net;
pub mod risk;
pub mod rng;
pub mod sde_sim;
pub mod stats;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use function::ScalarField;
