//! Collective risk dilemmas with two risk classes.
//!
//! The crate is split along the pipeline it supports:
//!
//! - [`game`]: parameters, payoffs and stochastic resolution of a single group.
//! - [`learner`]: Roth-Erev propensity learners trained by random-group play.
//! - [`analytic`]: closed-form class payoffs, class-based Nash and welfare
//!   solvers, and the single-agent deviation audit.
//! - [`evaluator`]: Monte Carlo group-achievement estimates for a population.
//! - [`experiment`]: declarative sweeps, seeding, CSV and manifest output.

pub mod analytic;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod game;
pub mod learner;
pub mod seeds;
mod util;

pub use error::{CrdError, Result};
pub use game::{Action, GameParams, GameSettings, PayoffSpec, RiskClass, Utility};
