//! Shared fixtures for the benchmarks in `benches/`.

use levy_refract::estimation::SimSettings;
use levy_refract::levy_model::{reference_model, sample_event_path, sample_grid_into};
use levy_refract::{EventPath, Purpose, RngStream, StrategyParams};

pub const SEED: u64 = 7;

pub fn params(b: f64) -> StrategyParams {
    StrategyParams { b, alpha: 0.5, beta: 1.5, q: 0.05 }
}

/// One bounded-variation reference path on `[0, horizon]`.
pub fn event_path(horizon: f64) -> EventPath {
    sample_event_path(&reference_model(0.0), horizon, RngStream::new(SEED, Purpose::Paths, 0)).expect("bounded variation")
}

/// One Gaussian reference path on a grid of `steps` steps.
pub fn grid_path(horizon: f64, steps: usize) -> Vec<f64> {
    let mut xs = Vec::with_capacity(steps + 1);
    sample_grid_into(&reference_model(1.0), horizon, steps, RngStream::new(SEED, Purpose::Paths, 0), &mut xs);
    xs
}

pub fn sim(paths: usize, steps: usize, gaussian: bool) -> SimSettings {
    SimSettings::auto(&reference_model(if gaussian { 1.0 } else { 0.0 }), 100.0, steps, paths, SEED)
}
