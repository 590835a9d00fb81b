//! Simulation and estimation for the optimal dividend problem with capital
//! injection when dividends are paid at a bounded rate and the surplus is a
//! two-sided Lévy process.
//!
//! The crate is organised bottom-up:
//!
//! * [`levy_model`]: model specification, validation, path sampling.
//! * [`path_engine`]: exact refraction / reflection of event paths.
//! * [`strategy`]: refraction-reflection strategies on exact and Euler grids.
//! * [`estimation`]: passage-time transforms, the optimal barrier, values.
//! * [`properties`]: structural property checkers with negative controls.

pub mod error;
pub mod estimation;
pub mod levy_model;
pub mod path_engine;
pub mod properties;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod strategy;

pub use error::{Error, Result};
pub use levy_model::{
    Case, CaseLabel, JumpComponent, JumpDiffusionSpec, MarkDistribution, PathMode, SampledPath, Sign,
};
pub use path_engine::{EventPath, Jump, Trajectory};
pub use rng::{Purpose, RngStream};
pub use stats::McEstimate;
pub use strategy::{Engine, StrategyParams};
