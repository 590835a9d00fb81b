//! Refraction-reflection strategies: dividends at rate α above the barrier
//! `b`, injections that keep the surplus non-negative.

use crate::error::{Error, Result};
use crate::levy_model::{sample_event_path, sample_grid_into, CaseLabel, JumpDiffusionSpec};
use crate::path_engine::{self, Controls, EventPath, Knot, KnotKind, Rates, Refraction, Trajectory};
use crate::rng::{Purpose, RngStream};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    /// Barrier above which dividends are paid.
    pub b: f64,
    /// Maximal dividend rate, `f64::INFINITY` for a reflection barrier.
    pub alpha: f64,
    /// Proportional cost of injected capital.
    pub beta: f64,
    /// Discount rate.
    pub q: f64,
}

impl StrategyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("alpha", "must be positive"));
        }
        if !(self.beta > 1.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta", "must exceed 1"));
        }
        if !(self.q > 0.0) || !self.q.is_finite() {
            return Err(Error::invalid("q", "must be positive"));
        }
        if !(self.b >= 0.0) || !self.b.is_finite() {
            return Err(Error::InvalidBarrier(self.b));
        }
        Ok(())
    }

    pub fn with_barrier(self, b: f64) -> Self {
        Self { b, ..self }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }
}

/// How sample paths are generated and controlled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    /// Event-driven, exact for bounded-variation models.
    Exact,
    /// Three-branch recursion on `steps + 1` equally spaced points.
    Euler { steps: usize },
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Exact => "exact",
            Engine::Euler { .. } => "euler",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Start,
    Jump,
    Level,
    Horizon,
    /// Euler step that injected capital.
    Inject,
    /// Euler step that paid dividends.
    Dividend,
    /// Euler step with no control.
    Hold,
}

impl Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Branch::Start => "start",
            Branch::Jump => "jump",
            Branch::Level => "level",
            Branch::Horizon => "horizon",
            Branch::Inject => "inject",
            Branch::Dividend => "dividend",
            Branch::Hold => "hold",
        }
    }
}

/// Tabulated controlled path (knots of the exact engine or Euler grid points).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlledTrajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub l: Vec<f64>,
    pub r: Vec<f64>,
    pub branch: Vec<Branch>,
}

impl ControlledTrajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn push(&mut self, t: f64, x: f64, z: f64, l: f64, r: f64, branch: Branch) {
        self.t.push(t);
        self.x.push(x);
        self.z.push(z);
        self.l.push(l);
        self.r.push(r);
        self.branch.push(branch);
    }

    pub fn from_exact(tr: &Trajectory) -> Self {
        let mut out = Self::default();
        for k in &tr.knots {
            let branch = match k.kind {
                KnotKind::Start => Branch::Start,
                KnotKind::Jump => Branch::Jump,
                KnotKind::Level => Branch::Level,
                KnotKind::Horizon => Branch::Horizon,
            };
            out.push(k.t, k.x, k.z, k.l, k.r, branch);
        }
        out
    }

    /// CSV with columns `t,Z,L,R,branch`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,Z,L,R,branch")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{},{},{}", self.t[i], self.z[i], self.l[i], self.r[i], self.branch[i].label())?;
        }
        Ok(())
    }
}

/// Controls for the refraction-reflection strategy at `b` on a path of drift
/// `delta`.
pub fn strategy_controls(delta: f64, params: &StrategyParams) -> Controls {
    Controls {
        refraction: Some(Refraction::new(params.b, params.alpha, CaseLabel::for_drift(delta, params.alpha))),
        floor: true,
        watch_zero: false,
    }
}

/// Refracted process `Y` at `b` without the floor; segments are split at 0 so
/// passage times below 0 are exact.
pub fn refraction_controls(delta: f64, b: f64, alpha: f64) -> Controls {
    Controls {
        refraction: Some(Refraction::new(b, alpha, CaseLabel::for_drift(delta, alpha))),
        floor: false,
        watch_zero: true,
    }
}

pub fn apply_strategy_exact(path: &EventPath, params: &StrategyParams) -> Result<Trajectory> {
    params.validate()?;
    Ok(path_engine::run(path, &strategy_controls(path.drift, params)))
}

/// One step of the Euler recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerStep {
    pub k: usize,
    /// `x + X̂_k - L̂_{k-1}`: the state before injection at step `k`.
    pub uncontrolled: f64,
    pub z: f64,
    pub l: f64,
    pub r: f64,
    pub branch: Branch,
}

/// Runs the Euler recursion on grid values `xs[k] = x + X̂_k` (so `xs[0]` is
/// the starting surplus). `visit` sees every step including `k = 0` and may
/// return `false` to stop early.
pub fn euler_walk<F: FnMut(&EulerStep) -> bool>(xs: &[f64], b: f64, alpha: f64, dt: f64, visit: F) {
    euler_walk_shifted(xs, 0.0, b, alpha, dt, visit)
}

/// [`euler_walk`] on the grid values `xs[k] + shift`.
pub fn euler_walk_shifted<F: FnMut(&EulerStep) -> bool>(
    xs: &[f64],
    shift: f64,
    b: f64,
    alpha: f64,
    dt: f64,
    mut visit: F,
) {
    let x = xs[0] + shift;
    let mut r = (-x).max(0.0);
    let mut l = if alpha.is_infinite() { (x - b).max(0.0) } else { 0.0 };
    let step0 = EulerStep { k: 0, uncontrolled: x, z: x + r - l, l, r, branch: Branch::Start };
    if !visit(&step0) {
        return;
    }
    let pay = alpha * dt;
    for (k, &xk) in xs.iter().enumerate().skip(1) {
        let xk = xk + shift;
        let uncontrolled = xk - l;
        let s = uncontrolled + r;
        let branch = if s < 0.0 {
            r = -uncontrolled;
            Branch::Inject
        } else if s > b {
            l += if alpha.is_infinite() { s - b } else { pay };
            Branch::Dividend
        } else {
            Branch::Hold
        };
        let step = EulerStep { k, uncontrolled, z: xk - l + r, l, r, branch };
        if !visit(&step) {
            return;
        }
    }
}

pub fn euler_trajectory(xs: &[f64], dt: f64, params: &StrategyParams) -> ControlledTrajectory {
    let mut out = ControlledTrajectory::default();
    euler_walk(xs, params.b, params.alpha, dt, |s| {
        out.push(s.k as f64 * dt, xs[s.k], s.z, s.l, s.r, s.branch);
        true
    });
    out
}

/// Simulates one controlled path on a grid of `steps` steps.
pub fn simulate_euler(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    horizon: f64,
    steps: usize,
    stream: RngStream,
) -> Result<ControlledTrajectory> {
    params.validate()?;
    if steps == 0 {
        return Err(Error::invalid("grid.K", "need at least one step"));
    }
    let mut xs = Vec::with_capacity(steps + 1);
    sample_grid_into(spec, horizon, steps, stream, &mut xs);
    Ok(euler_trajectory(&xs, horizon / steps as f64, params))
}

/// Simulates one controlled path with the requested engine.
pub fn simulate_controlled(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    horizon: f64,
    engine: Engine,
    stream: RngStream,
) -> Result<ControlledTrajectory> {
    match engine {
        Engine::Exact => {
            let path = sample_event_path(spec, horizon, stream)?;
            Ok(ControlledTrajectory::from_exact(&apply_strategy_exact(&path, params)?))
        }
        Engine::Euler { steps } => simulate_euler(spec, params, horizon, steps, stream),
    }
}

/// First passage times of a (controlled or refracted) trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Passage {
    /// First time the unreflected state is strictly below 0.
    pub strict: Option<f64>,
    /// First time the state is at or below 0.
    pub weak: Option<f64>,
}

impl Passage {
    pub fn coincide(&self) -> bool {
        self.strict == self.weak
    }
}

fn strict_at(k: &Knot, rt: &Rates) -> bool {
    k.z < 0.0 || k.dr > 0.0 || (k.z == 0.0 && (rt.z < 0.0 || rt.r > 0.0))
}

pub fn first_passage_times(tr: &Trajectory) -> Passage {
    let mut p = Passage::default();
    for (k, rt) in tr.knots.iter().zip(&tr.rates) {
        if p.weak.is_none() && k.z <= 0.0 {
            p.weak = Some(k.t);
        }
        if strict_at(k, rt) {
            p.strict = Some(k.t);
            if p.weak.is_none() {
                p.weak = Some(k.t);
            }
            break;
        }
    }
    p
}

/// Streaming version of [`first_passage_times`] that stops at the first
/// strict passage.
pub fn passage_of(path: &EventPath, ctl: &Controls) -> Passage {
    passage_from(path, path.x0, ctl)
}

/// [`passage_of`] with the path restarted at `x0`.
pub fn passage_from(path: &EventPath, x0: f64, ctl: &Controls) -> Passage {
    let mut p = Passage::default();
    path_engine::sweep_from(path, x0, ctl, |k, rt| {
        if p.strict.is_some() {
            return;
        }
        if p.weak.is_none() && k.z <= 0.0 {
            p.weak = Some(k.t);
        }
        if strict_at(k, rt) {
            p.strict = Some(k.t);
        }
    });
    p
}

/// Euler analogues: the strict index is the first `k` with an injection
/// (`R̂_k > 0`), the weak index the first `k ≥ 1` with `x + X̂_k - L̂_{k-1} ≤ 0`.
pub fn euler_passage_indices(xs: &[f64], shift: f64, b: f64, alpha: f64, dt: f64) -> (Option<usize>, Option<usize>) {
    let (mut strict, mut weak) = (None, None);
    euler_walk_shifted(xs, shift, b, alpha, dt, |s| {
        if weak.is_none() && s.k >= 1 && s.uncontrolled <= 0.0 {
            weak = Some(s.k);
        }
        if s.r > 0.0 {
            strict = Some(s.k);
            return false;
        }
        true
    });
    (strict, weak)
}

/// With probability `p` the weak passage time, otherwise the strict one.
pub fn sample_randomized_passage(passage: &Passage, p: f64, stream: RngStream) -> Option<f64> {
    let u: f64 = stream.with_purpose(Purpose::Randomization).rng().random();
    if u < p {
        passage.weak
    } else {
        passage.strict
    }
}

/// Discounted dividends and injections of one path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CashFlows {
    pub dividends: f64,
    pub injections: f64,
}

impl CashFlows {
    pub fn npv(&self, beta: f64) -> f64 {
        self.dividends - beta * self.injections
    }
}

/// `∫_{t0}^{t0+dt} e^{-qs} ds`.
pub fn discount_integral(q: f64, t0: f64, dt: f64) -> f64 {
    (-q * t0).exp() * (-(-q * dt).exp_m1()) / q
}

/// Discounted cash flows of the strategy on `path`, stopping at the first
/// time the surplus is at 0 when `stop_at_zero` is set. Returns the flows
/// and the stopping time.
pub fn exact_cash_flows(path: &EventPath, x0: f64, ctl: &Controls, q: f64, stop_at_zero: bool) -> (CashFlows, Option<f64>) {
    let mut cf = CashFlows::default();
    let mut stopped: Option<f64> = None;
    let mut prev: Option<(f64, Rates)> = None;
    path_engine::sweep_from(path, x0, ctl, |k, rt| {
        if stopped.is_some() {
            return;
        }
        if let Some((t0, r0)) = prev {
            let w = discount_integral(q, t0, k.t - t0);
            cf.dividends += r0.l * w;
            cf.injections += r0.r * w;
        }
        let disc = (-q * k.t).exp();
        cf.dividends += k.dl * disc;
        cf.injections += k.dr * disc;
        if stop_at_zero && k.kind != KnotKind::Horizon && k.z <= 0.0 {
            stopped = Some(k.t);
            return;
        }
        prev = Some((k.t, *rt));
    });
    (cf, stopped)
}

/// Euler analogue of [`exact_cash_flows`]:
/// `Σ_k e^{-qkΔt}(ΔL̂_k - βΔR̂_k)` with `R̂_0` charged at time 0.
pub fn euler_cash_flows(
    xs: &[f64],
    shift: f64,
    b: f64,
    alpha: f64,
    dt: f64,
    q: f64,
    stop_at_zero: bool,
) -> (CashFlows, Option<f64>) {
    let mut cf = CashFlows::default();
    let mut stopped = None;
    let (mut l_prev, mut r_prev) = (0.0, 0.0);
    let step_disc = (-q * dt).exp();
    let mut disc = 1.0;
    euler_walk_shifted(xs, shift, b, alpha, dt, |s| {
        if s.k > 0 {
            disc *= step_disc;
        }
        cf.dividends += disc * (s.l - l_prev);
        cf.injections += disc * (s.r - r_prev);
        l_prev = s.l;
        r_prev = s.r;
        if stop_at_zero && s.z <= 0.0 {
            stopped = Some(s.k as f64 * dt);
            return false;
        }
        true
    });
    (cf, stopped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::{drift_only, reference_model};
    use crate::path_engine::Jump;
    use approx::assert_abs_diff_eq;

    fn params(b: f64, alpha: f64) -> StrategyParams {
        StrategyParams { b, alpha, beta: 1.5, q: 0.05 }
    }

    #[test]
    fn params_validation() {
        assert!(params(1.0, 0.5).validate().is_ok());
        assert!(params(1.0, f64::INFINITY).validate().is_ok());
        assert_eq!(params(-1.0, 0.5).validate().unwrap_err(), Error::InvalidBarrier(-1.0));
        assert!(matches!(params(1.0, 0.0).validate(), Err(Error::InvalidParameter { field: f, .. }) if f == "alpha"));
        let bad_beta = StrategyParams { beta: 1.0, ..params(1.0, 0.5) };
        assert!(matches!(bad_beta.validate(), Err(Error::InvalidParameter { field: f, .. }) if f == "beta"));
    }

    #[test]
    fn euler_branches_on_drift() {
        // x = 0, drift 1, b = 0.5, α = 0.5, Δt = 0.25.
        let xs: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64).collect();
        let tr = euler_trajectory(&xs, 0.25, &params(0.5, 0.5));
        assert_eq!(tr.branch[1], Branch::Hold);
        assert_eq!(tr.branch[2], Branch::Hold);
        assert_eq!(tr.branch[3], Branch::Dividend);
        assert_abs_diff_eq!(tr.l[8], 6.0 * 0.125, epsilon = 1e-15);
        for i in 0..tr.len() {
            assert_abs_diff_eq!(tr.z[i], tr.x[i] - tr.l[i] + tr.r[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn euler_injects_exact_shortfall() {
        let xs = [0.2, -0.3, -0.1, -0.5];
        let tr = euler_trajectory(&xs, 1.0, &params(1.0, 0.5));
        for (i, (r, z)) in [(0.0, 0.2), (0.3, 0.0), (0.3, 0.2), (0.5, 0.0)].into_iter().enumerate() {
            assert_abs_diff_eq!(tr.r[i], r, epsilon = 1e-15);
            assert_abs_diff_eq!(tr.z[i], z, epsilon = 1e-15);
        }
    }

    #[test]
    fn euler_negative_start_tops_up() {
        let xs = [-1.0, -1.0];
        let tr = euler_trajectory(&xs, 1.0, &params(1.0, 0.5));
        assert_eq!(tr.r[0], 1.0);
        assert_eq!(tr.z[0], 0.0);
        assert_eq!(euler_passage_indices(&xs, 0.0, 1.0, 0.5, 1.0).0, Some(0));
    }

    #[test]
    fn exact_and_euler_agree_on_drift_only() {
        let path = EventPath::new(0.3, -0.4, 5.0, vec![Jump { time: 2.0, size: 1.5 }]);
        let p = params(1.0, 0.25);
        let exact = apply_strategy_exact(&path, &p).unwrap();
        let steps = 200_000;
        let mut xs = Vec::new();
        crate::levy_model::GridPath::from_event_path(&path, steps).values.clone_into(&mut xs);
        let eul = euler_trajectory(&xs, 5.0 / steps as f64, &p);
        let end = exact.last();
        assert_abs_diff_eq!(eul.z[steps], end.z, epsilon = 1e-3);
        assert_abs_diff_eq!(eul.l[steps], end.l, epsilon = 1e-3);
        assert_abs_diff_eq!(eul.r[steps], end.r, epsilon = 1e-3);
    }

    #[test]
    fn passage_on_falling_path() {
        let path = EventPath::new(1.0, -1.0, 3.0, vec![]);
        let ctl = refraction_controls(-1.0, 2.0, 0.5);
        let p = passage_of(&path, &ctl);
        assert_eq!(p.strict, Some(1.0));
        assert_eq!(p.weak, Some(1.0));
        let tr = path_engine::run(&path, &ctl);
        assert_eq!(first_passage_times(&tr), p);
    }

    #[test]
    fn point_mass_onto_zero_separates_passages() {
        // δ = 0: a jump lands exactly on 0 and the path stays there.
        let path = EventPath::new(1.0, 0.0, 3.0, vec![Jump { time: 1.0, size: -1.0 }, Jump { time: 2.0, size: -1.0 }]);
        let p = passage_of(&path, &refraction_controls(0.0, 2.0, 0.5));
        assert_eq!(p.weak, Some(1.0));
        assert_eq!(p.strict, Some(2.0));
        assert!(!p.coincide());
    }

    #[test]
    fn randomized_passage_extremes() {
        let p = Passage { strict: Some(2.0), weak: Some(1.0) };
        let s = RngStream::new(3, Purpose::Paths, 0);
        assert_eq!(sample_randomized_passage(&p, 1.0, s), Some(1.0));
        assert_eq!(sample_randomized_passage(&p, 0.0, s), Some(2.0));
    }

    #[test]
    fn drift_only_exact_cash_flows() {
        // δ = -1 from 0: injections at unit rate forever.
        let path = EventPath::new(0.0, -1.0, 1000.0, vec![]);
        let p = params(1.0, 0.5);
        let (cf, _) = exact_cash_flows(&path, 0.0, &strategy_controls(-1.0, &p), p.q, false);
        assert_abs_diff_eq!(cf.npv(p.beta), -30.0, epsilon = 1e-9);
        // δ = 2, α = 0.5, b = 0: dividends at rate α.
        let path = EventPath::new(0.0, 2.0, 1000.0, vec![]);
        let p = params(0.0, 0.5);
        let (cf, _) = exact_cash_flows(&path, 0.0, &strategy_controls(2.0, &p), p.q, false);
        assert_abs_diff_eq!(cf.npv(p.beta), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn euler_cash_flows_telescope() {
        let xs: Vec<f64> = (0..=4).map(|k| -0.5 * k as f64).collect();
        let (cf, _) = euler_cash_flows(&xs, 0.0, 1.0, 0.5, 1.0, 0.1, false);
        let want: f64 = (1..=4).map(|k| 0.5 * (-0.1 * k as f64).exp()).sum();
        assert_abs_diff_eq!(cf.injections, want, epsilon = 1e-14);
    }

    #[test]
    fn simulated_paths_are_reproducible() {
        let spec = reference_model(0.0);
        let s = RngStream::new(11, Purpose::Paths, 4);
        let a = simulate_controlled(&spec, &params(1.0, 0.5), 10.0, Engine::Euler { steps: 100 }, s).unwrap();
        let b = simulate_controlled(&spec, &params(1.0, 0.5), 10.0, Engine::Euler { steps: 100 }, s).unwrap();
        assert_eq!(a, b);
        let e = simulate_controlled(&drift_only(1.0), &params(1.0, 0.5), 2.0, Engine::Exact, s).unwrap();
        assert_abs_diff_eq!(*e.z.last().unwrap(), 1.5, epsilon = 1e-12);
    }
}
