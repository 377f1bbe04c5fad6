//! Simulation and verification laboratory for a two-manager stochastic
//! investment game under partial observation.
//!
//! The library is organised around four layers:
//!
//! * [`stochastic_core`] — time grids, reproducible Brownian increment
//!   bundles, Itô sums, stochastic exponentials and likelihood-ratio weights;
//! * [`ou_filter`] — mean-reverting drift simulation, the matrix Riccati
//!   equation for the conditional error covariance, observation synthesis and
//!   the Kalman–Bucy filter, plus filtered coefficient and adjoint paths;
//! * [`market_game`] — the market scenario itself: deflator and adjoint
//!   processes, candidate injection strategies, wealth and cost estimators,
//!   Hamiltonians, and a least-squares Monte Carlo backward solver used as an
//!   independent cross-check;
//! * [`equilibrium_lab`] — statistical verification: regression-based
//!   conditional expectations, stationarity residuals, common-random-number
//!   deviation tests of the equilibrium property, saddle and convexity checks,
//!   and an adaptedness audit for strategy rules.
//!
//! The `scenario` and `runner` modules wire everything to the
//! `fbsde-game-lab` command line binary.

pub mod equilibrium_lab;
pub mod error;
pub mod market_game;
pub mod ou_filter;
pub mod runner;
pub mod scenario;
pub mod stats;
pub mod stochastic_core;

pub use error::{LabError, Result};
