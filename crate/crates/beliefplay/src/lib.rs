//! Coupled Bayesian-belief / strategy-update learning dynamics in repeated
//! games with an unknown payoff parameter, plus the analysis toolkit that
//! verifies convergence, fixed-point, rate, and stability behavior on a set
//! of built-in example games.
//!
//! Modules:
//! - [`model`]: core domain types and the [`model::GameModel`] interface
//! - [`belief`]: Bayesian, MAP, and OLS parameter estimation
//! - [`dynamics`]: the learning loops, stepsize schedules, and diagnostics
//! - [`games`]: concrete games behind a name-keyed registry
//! - [`analysis`]: fixed points, stability thresholds, rates, and flows
//! - [`config`] / [`runner`] / [`commands`]: the experiment CLI

pub mod analysis;
pub mod belief;
pub mod commands;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod games;
pub mod model;
pub mod runner;

pub use error::{Error, Result};
