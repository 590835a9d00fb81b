//! Monte Carlo estimators: the passage transform `ν(b)`, the optimal
//! barrier, the randomization weight `p*`, value functions and the generator
//! residual of an estimated value curve.
//!
//! Every estimator draws path `i` from `RngStream(seed, Paths, i)`, so
//! estimators called with the same settings see the same noise.

use crate::error::{Error, Result};
use crate::levy_model::{sample_event_path, sample_grid_into, JumpDiffusionSpec};
use crate::path_engine::{self, Controls, EventPath, Refraction};
use crate::rng::{Purpose, RngStream};
use crate::stats::{isotonic_non_increasing, tree_moments, McEstimate};
use crate::strategy::{
    euler_cash_flows, euler_passage_indices, exact_cash_flows, passage_from, refraction_controls,
    strategy_controls, Engine, Passage, StrategyParams,
};
use crate::levy_model::CaseLabel;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Monte Carlo run settings shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub horizon: f64,
    pub engine: Engine,
    pub paths: usize,
    pub seed: u64,
}

impl SimSettings {
    /// Exact engine for bounded-variation models, Euler otherwise.
    pub fn auto(spec: &JumpDiffusionSpec, horizon: f64, steps: usize, paths: usize, seed: u64) -> Self {
        let engine = if spec.is_bounded_variation() { Engine::Exact } else { Engine::Euler { steps } };
        Self { horizon, engine, paths, seed }
    }

    pub fn validate(&self, spec: &JumpDiffusionSpec) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("grid.T", "horizon must be positive"));
        }
        if self.paths == 0 {
            return Err(Error::invalid("mc.N", "need at least one path"));
        }
        match self.engine {
            Engine::Exact if !spec.is_bounded_variation() => Err(Error::ExactModeUnavailable { sigma: spec.sigma }),
            Engine::Euler { steps: 0 } => Err(Error::invalid("grid.K", "need at least one step")),
            _ => Ok(()),
        }
    }

    pub fn stream(&self) -> RngStream {
        RngStream::new(self.seed, Purpose::Paths, 0)
    }

    /// Passage-time cap of the Euler estimator (ten horizons).
    fn censor_time(&self) -> f64 {
        10.0 * self.horizon
    }

    fn dt(&self) -> f64 {
        match self.engine {
            Engine::Euler { steps } => self.horizon / steps as f64,
            Engine::Exact => 0.0,
        }
    }
}

/// Driving noise of one path, started at 0.
enum Noise {
    Event(EventPath),
    Grid(Vec<f64>),
}

fn draw(spec0: &JumpDiffusionSpec, sim: &SimSettings, stream: RngStream) -> Noise {
    match sim.engine {
        Engine::Exact => Noise::Event(sample_event_path(spec0, sim.horizon, stream).expect("settings validated")),
        Engine::Euler { steps } => {
            let mut xs = Vec::with_capacity(steps + 1);
            sample_grid_into(spec0, sim.horizon, steps, stream, &mut xs);
            Noise::Grid(xs)
        }
    }
}

fn at_origin(spec: &JumpDiffusionSpec) -> JumpDiffusionSpec {
    spec.with_x0(0.0)
}

/// `e^{-qτ}` of a passage time, with the censoring convention of the engine:
/// 0 for an unresolved exact passage, `e^{-q·10T}` on the Euler grid.
fn discounted(t: Option<f64>, q: f64, sim: &SimSettings) -> (f64, bool) {
    match (t, sim.engine) {
        (Some(t), _) => ((-q * t).exp(), false),
        (None, Engine::Exact) => (0.0, true),
        (None, Engine::Euler { .. }) => ((-q * sim.censor_time()).exp(), true),
    }
}

fn passage(noise: &Noise, x: f64, params: &StrategyParams, delta: f64, sim: &SimSettings) -> Passage {
    match noise {
        Noise::Event(path) => passage_from(path, x, &refraction_controls(delta, params.b, params.alpha)),
        Noise::Grid(xs) => {
            let dt = sim.dt();
            let (s, w) = euler_passage_indices(xs, x, params.b, params.alpha, dt);
            Passage { strict: s.map(|k| k as f64 * dt), weak: w.map(|k| k as f64 * dt) }
        }
    }
}

/// `E_b[e^{-qκ}]` for the refracted process started at its barrier, with `κ`
/// the first time it is strictly below 0.
pub fn estimate_nu(spec: &JumpDiffusionSpec, params: &StrategyParams, sim: &SimSettings) -> Result<McEstimate> {
    sim.validate(spec)?;
    params.validate()?;
    Ok(nu_direct(spec, params, sim, sim.stream()))
}

fn nu_direct(spec: &JumpDiffusionSpec, params: &StrategyParams, sim: &SimSettings, base: RngStream) -> McEstimate {
    let spec0 = at_origin(spec);
    let delta = spec.linear_drift();
    let m = tree_moments(sim.paths, 1, |i, acc| {
        let noise = draw(&spec0, sim, base.at(i as u64));
        let p = passage(&noise, params.b, params, delta, sim);
        let (v, c) = discounted(p.strict, params.q, sim);
        acc.push_censored(&[v], &[c]);
    });
    m.estimate(0).with_stream(base)
}

/// How the barrier grid of a ν-curve shares noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coupling {
    /// One batch of paths reused for every barrier.
    Common,
    /// A fresh batch per barrier.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuCurve {
    pub grid: Vec<f64>,
    pub nu: Vec<f64>,
    pub std_error: Vec<f64>,
    pub censored_fraction: Vec<f64>,
    pub coupling: Coupling,
    pub n: usize,
}

impl NuCurve {
    pub fn estimate(&self, i: usize) -> McEstimate {
        McEstimate {
            mean: self.nu[i],
            std_error: self.std_error[i],
            n: self.n,
            censored_fraction: self.censored_fraction[i],
            stream: None,
        }
    }
}

/// New running minima of the refracted process `W` started at 0 with its
/// barrier at 0. Because refraction commutes with translation, `Y^b - b = W`
/// for every barrier, and `κ(b)` is the first time `W < -b`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Low {
    Jump { t: f64, to: f64 },
    /// Linear descent from `from` (reached at `t`) to `to` at slope `rate < 0`.
    Drift { t: f64, from: f64, to: f64, rate: f64 },
}

impl Low {
    fn to(&self) -> f64 {
        match *self {
            Low::Jump { to, .. } | Low::Drift { to, .. } => to,
        }
    }

    /// Time at which this record first goes strictly below `level`, given it
    /// starts at or above `level`.
    fn crossing(&self, level: f64) -> f64 {
        match *self {
            Low::Jump { t, .. } => t,
            Low::Drift { t, from, rate, .. } => t + ((level - from) / rate).max(0.0),
        }
    }
}

fn exact_lows(path: &EventPath, alpha: f64) -> Vec<Low> {
    let ctl = Controls {
        refraction: Some(Refraction::new(0.0, alpha, CaseLabel::for_drift(path.drift, alpha))),
        floor: false,
        watch_zero: false,
    };
    let mut lows = Vec::new();
    let mut m = 0.0;
    let mut prev: Option<(f64, f64, f64)> = None;
    path_engine::sweep_from(path, 0.0, &ctl, |k, rt| {
        if let Some((t0, z0, rz)) = prev {
            let end = k.z_left;
            if rz < 0.0 && end < m {
                let t = if z0 > m { t0 + (m - z0) / rz } else { t0 };
                lows.push(Low::Drift { t, from: m, to: end, rate: rz });
                m = end;
            }
        }
        if k.z < m {
            lows.push(Low::Jump { t: k.t, to: k.z });
            m = k.z;
        }
        prev = Some((k.t, k.z, rt.z));
    });
    lows
}

/// Euler records `(k, W_k)` of `W_k = X̂_k - L̂_{k-1}`.
fn euler_lows(xs: &[f64], alpha: f64, dt: f64) -> Vec<(usize, f64)> {
    let mut lows = Vec::new();
    let (mut l, mut m) = (0.0, 0.0);
    let pay = alpha * dt;
    for (k, &x) in xs.iter().enumerate().skip(1) {
        let w = x - l;
        if w < m {
            lows.push((k, w));
            m = w;
        }
        if w > 0.0 {
            l += if alpha.is_infinite() { w } else { pay };
        }
    }
    lows
}

/// Fills `out[j] = e^{-qκ(grid[j])}` for one path from its record lows.
fn nu_row(noise: &Noise, grid: &[f64], alpha: f64, q: f64, sim: &SimSettings, out: &mut [f64], cens: &mut [bool]) {
    match noise {
        Noise::Event(path) => {
            let lows = exact_lows(path, alpha);
            let mut p = 0;
            for (j, &b) in grid.iter().enumerate() {
                if b < 0.0 {
                    out[j] = 1.0;
                    cens[j] = false;
                    continue;
                }
                while p < lows.len() && lows[p].to() >= -b {
                    p += 1;
                }
                let t = lows.get(p).map(|r| r.crossing(-b));
                (out[j], cens[j]) = discounted(t, q, sim);
            }
        }
        Noise::Grid(xs) => {
            let dt = sim.dt();
            let lows = euler_lows(xs, alpha, dt);
            let mut p = 0;
            for (j, &b) in grid.iter().enumerate() {
                if b < 0.0 {
                    out[j] = 1.0;
                    cens[j] = false;
                    continue;
                }
                while p < lows.len() && lows[p].1 >= -b {
                    p += 1;
                }
                let t = lows.get(p).map(|&(k, _)| k as f64 * dt);
                (out[j], cens[j]) = discounted(t, q, sim);
            }
        }
    }
}

fn check_grid(grid: &[f64], field: &str) -> Result<()> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(field, "grid must be finite and strictly increasing"));
    }
    Ok(())
}

/// `b ↦ ν(b)` on a barrier grid. Negative barriers get the value 1.
pub fn nu_curve(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    grid: &[f64],
    sim: &SimSettings,
    coupling: Coupling,
) -> Result<NuCurve> {
    sim.validate(spec)?;
    check_grid(grid, "task.b_grid")?;
    let width = grid.len();
    let (nu, se, cf) = match coupling {
        Coupling::Common => {
            let spec0 = at_origin(spec);
            let base = sim.stream();
            let m = tree_moments(sim.paths, width, |i, acc| {
                let noise = draw(&spec0, sim, base.at(i as u64));
                let mut row = vec![0.0; width];
                let mut cens = vec![false; width];
                nu_row(&noise, grid, params.alpha, params.q, sim, &mut row, &mut cens);
                acc.push_censored(&row, &cens);
            });
            let est = m.estimates();
            (
                est.iter().map(|e| e.mean).collect(),
                est.iter().map(|e| e.std_error).collect(),
                est.iter().map(|e| e.censored_fraction).collect(),
            )
        }
        Coupling::Independent => {
            let mut nu = Vec::with_capacity(width);
            let mut se = Vec::with_capacity(width);
            let mut cf = Vec::with_capacity(width);
            for (j, &b) in grid.iter().enumerate() {
                if b < 0.0 {
                    nu.push(1.0);
                    se.push(0.0);
                    cf.push(0.0);
                    continue;
                }
                let base = RngStream::new(sim.seed, Purpose::Batch(j as u32), 0);
                let e = nu_direct(spec, &params.with_barrier(b), sim, base);
                nu.push(e.mean);
                se.push(e.std_error);
                cf.push(e.censored_fraction);
            }
            (nu, se, cf)
        }
    };
    Ok(NuCurve { grid: grid.to_vec(), nu, std_error: se, censored_fraction: cf, coupling, n: sim.paths })
}

/// Estimated optimal barrier with the band of barriers statistically
/// indistinguishable from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BstarReport {
    pub b_star: f64,
    /// Smallest and largest positive grid barriers with `|βν̂ - 1| ≤ 3·β·SE`
    /// (both equal to `b_star` when none qualifies).
    pub interval_low: f64,
    pub interval_high: f64,
    /// `ν̂` after monotone smoothing (identical to the raw curve under
    /// common random numbers).
    pub fitted: Vec<f64>,
    pub curve: NuCurve,
}

/// Smallest positive grid barrier with `β·ν̂(b) < 1`.
pub fn bstar_from_curve(curve: NuCurve, beta: f64) -> Result<BstarReport> {
    let fitted = match curve.coupling {
        Coupling::Common => curve.nu.clone(),
        Coupling::Independent => {
            let w: Vec<f64> = curve.std_error.iter().map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 1e12 }).collect();
            isotonic_non_increasing(&curve.nu, &w)
        }
    };
    let idx = curve
        .grid
        .iter()
        .zip(&fitted)
        .position(|(&b, &v)| b > 0.0 && beta * v < 1.0)
        .ok_or(Error::NoCrossing)?;
    let b_star = curve.grid[idx];
    let band: Vec<f64> = curve
        .grid
        .iter()
        .enumerate()
        .filter(|&(j, &b)| b > 0.0 && (beta * curve.nu[j] - 1.0).abs() <= 3.0 * beta * curve.std_error[j])
        .map(|(_, &b)| b)
        .collect();
    let interval_low = band.first().copied().unwrap_or(b_star).min(b_star);
    let interval_high = band.last().copied().unwrap_or(b_star).max(b_star);
    Ok(BstarReport { b_star, interval_low, interval_high, fitted, curve })
}

pub fn find_bstar(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    grid: &[f64],
    sim: &SimSettings,
    coupling: Coupling,
) -> Result<BstarReport> {
    bstar_from_curve(nu_curve(spec, params, grid, sim, coupling)?, params.beta)
}

/// `β·E_x[e^{-qK}]` where `K` is the randomized passage time of the process
/// refracted at `params.b`: the weak passage with probability `p`, the
/// strict one otherwise. One estimate per start in `xs`, on shared paths.
pub fn estimate_underline_nu(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    xs: &[f64],
    p: f64,
    sim: &SimSettings,
) -> Result<Vec<McEstimate>> {
    sim.validate(spec)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p", "must lie in [0, 1]"));
    }
    let spec0 = at_origin(spec);
    let delta = spec.linear_drift();
    let base = sim.stream();
    let n = xs.len();
    let m = tree_moments(sim.paths, n, |i, acc| {
        let noise = draw(&spec0, sim, base.at(i as u64));
        let u: f64 = base.at(i as u64).with_purpose(Purpose::Randomization).rng().random();
        let mut row = vec![0.0; n];
        let mut cens = vec![false; n];
        for (j, &x) in xs.iter().enumerate() {
            if x < 0.0 {
                row[j] = 1.0;
                continue;
            }
            let pass = passage(&noise, x, params, delta, sim);
            let t = if u < p { pass.weak } else { pass.strict };
            (row[j], cens[j]) = discounted(t, params.q, sim);
        }
        acc.push_censored(&row, &cens);
    });
    Ok(m.estimates().into_iter().map(|e| e.scaled(params.beta).with_stream(base)).collect())
}

/// Both passage transforms at the barrier, on identical paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassageTransforms {
    /// `E[e^{-qκ}]`, strict passage.
    pub strict: McEstimate,
    /// `E[e^{-qT}]`, weak passage.
    pub weak: McEstimate,
    /// `E[e^{-qT} - e^{-qκ}]` path by path.
    pub difference: McEstimate,
    /// Whether the two passage times agreed on every path.
    pub coincide: bool,
}

pub fn passage_transforms(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    sim: &SimSettings,
) -> Result<PassageTransforms> {
    sim.validate(spec)?;
    let spec0 = at_origin(spec);
    let delta = spec.linear_drift();
    let base = sim.stream();
    let m = tree_moments(sim.paths, 4, |i, acc| {
        let noise = draw(&spec0, sim, base.at(i as u64));
        let pass = passage(&noise, params.b, params, delta, sim);
        let (s, cs) = discounted(pass.strict, params.q, sim);
        let (w, cw) = discounted(pass.weak, params.q, sim);
        let differ = if pass.coincide() { 0.0 } else { 1.0 };
        acc.push_censored(&[s, w, w - s, differ], &[cs, cw, false, false]);
    });
    Ok(PassageTransforms {
        strict: m.estimate(0).with_stream(base),
        weak: m.estimate(1).with_stream(base),
        difference: m.estimate(2).with_stream(base),
        coincide: m.mean[3] == 0.0,
    })
}

/// Solves the affine equation `β(p·E[e^{-qT}] + (1-p)·E[e^{-qκ}]) = 1`.
///
/// Returns 1 when the passages coincide on every path or when `βE[e^{-qκ}]`
/// already reaches 1 within three standard errors.
pub fn pstar_from_transforms(tr: &PassageTransforms, beta: f64) -> Result<f64> {
    if tr.coincide {
        return Ok(1.0);
    }
    let strict = beta * tr.strict.mean;
    if strict >= 1.0 - 3.0 * beta * tr.strict.std_error {
        return Ok(1.0);
    }
    let denom = beta * tr.difference.mean;
    if denom.abs() <= 3.0 * beta * tr.difference.std_error || denom.abs() < 1e-12 {
        return Err(Error::DegenerateDenominator);
    }
    Ok(((beta * tr.weak.mean - 1.0) / denom).clamp(0.0, 1.0))
}

pub fn solve_pstar(spec: &JumpDiffusionSpec, params: &StrategyParams, sim: &SimSettings) -> Result<f64> {
    pstar_from_transforms(&passage_transforms(spec, params, sim)?, params.beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValueMethod {
    /// Discounted flows over the whole horizon.
    Direct,
    /// Flows up to the first visit of 0, then the separately estimated value
    /// at 0, discounted.
    Spliced,
}

impl ValueMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ValueMethod::Direct => "direct",
            ValueMethod::Spliced => "spliced",
        }
    }
}

/// `x ↦ v_b(x)` on a grid, with standard errors of first and second
/// differences estimated path by path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCurve {
    pub b: f64,
    pub xs: Vec<f64>,
    pub v: Vec<McEstimate>,
    /// `v(x_{j+1}) - v(x_j)`.
    pub diffs: Vec<McEstimate>,
    /// `v(x_{j+2}) - 2v(x_{j+1}) + v(x_j)`.
    pub second_diffs: Vec<McEstimate>,
    pub method: ValueMethod,
}

impl ValueCurve {
    pub fn means(&self) -> Vec<f64> {
        self.v.iter().map(|e| e.mean).collect()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.v.iter().map(|e| e.std_error).collect()
    }
}

/// Discounted flows of one path from `x ≥ 0` under the strategy at `b`,
/// with the stopping discount `e^{-qτ}` when `stop` is set.
fn path_flows(noise: &Noise, x: f64, params: &StrategyParams, delta: f64, sim: &SimSettings, stop: bool) -> (f64, f64) {
    let (cf, tau) = match noise {
        Noise::Event(path) => exact_cash_flows(path, x, &strategy_controls(delta, params), params.q, stop),
        Noise::Grid(xs) => euler_cash_flows(xs, x, params.b, params.alpha, sim.dt(), params.q, stop),
    };
    (cf.npv(params.beta), tau.map_or(0.0, |t| (-params.q * t).exp()))
}

/// One value curve per barrier, all on shared paths. Negative starts use
/// `v(x) = v(0) + βx`, which holds path by path.
pub fn value_curves(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    barriers: &[f64],
    xs: &[f64],
    sim: &SimSettings,
    method: ValueMethod,
) -> Result<Vec<ValueCurve>> {
    sim.validate(spec)?;
    check_grid(xs, "task.x_grid")?;
    for &b in barriers {
        params.with_barrier(b).validate()?;
    }
    let spec0 = at_origin(spec);
    let delta = spec.linear_drift();
    let n = xs.len();
    let nb = barriers.len();

    // Value at 0 per barrier from a separate batch, for splicing.
    let anchor: Vec<McEstimate> = match method {
        ValueMethod::Direct => Vec::new(),
        ValueMethod::Spliced => {
            let base = RngStream::new(sim.seed, Purpose::Anchor, 0);
            let m = tree_moments(sim.paths, nb, |i, acc| {
                let noise = draw(&spec0, sim, base.at(i as u64));
                let row: Vec<f64> =
                    barriers.iter().map(|&b| path_flows(&noise, 0.0, &params.with_barrier(b), delta, sim, false).0).collect();
                acc.push(&row);
            });
            m.estimates()
        }
    };

    // Row layout per barrier: n values, n-1 differences, n-2 second
    // differences, n stopping discounts (spliced only), the value at 0.
    let (nd, ns) = (n.saturating_sub(1), n.saturating_sub(2));
    let per_b = 4 * n + 1;
    let base = sim.stream();
    let m = tree_moments(sim.paths, nb * per_b, |i, acc| {
        let noise = draw(&spec0, sim, base.at(i as u64));
        let mut row = vec![0.0; nb * per_b];
        for (bi, &b) in barriers.iter().enumerate() {
            let p = params.with_barrier(b);
            let seg = &mut row[bi * per_b..(bi + 1) * per_b];
            let v0 = match method {
                ValueMethod::Direct => path_flows(&noise, 0.0, &p, delta, sim, false).0,
                ValueMethod::Spliced => anchor[bi].mean,
            };
            seg[4 * n] = v0;
            let (vals, rest) = seg.split_at_mut(n);
            let disc = &mut rest[2 * n..3 * n];
            for (j, &x) in xs.iter().enumerate() {
                if x <= 0.0 {
                    vals[j] = v0 + params.beta * x;
                    disc[j] = 1.0;
                    continue;
                }
                match method {
                    ValueMethod::Direct => vals[j] = path_flows(&noise, x, &p, delta, sim, false).0,
                    ValueMethod::Spliced => {
                        let (partial, d) = path_flows(&noise, x, &p, delta, sim, true);
                        vals[j] = partial + d * anchor[bi].mean;
                        disc[j] = d;
                    }
                }
            }
            let (vals, rest) = seg.split_at_mut(n);
            for j in 0..nd {
                rest[j] = vals[j + 1] - vals[j];
            }
            for j in 0..ns {
                rest[nd + j] = vals[j + 2] - 2.0 * vals[j + 1] + vals[j];
            }
        }
        acc.push(&row);
    });

    let est = m.estimates();
    let mut out = Vec::with_capacity(nb);
    for (bi, &b) in barriers.iter().enumerate() {
        let seg = &est[bi * per_b..(bi + 1) * per_b];
        let mut v: Vec<McEstimate> = seg[..n].to_vec();
        let mut diffs: Vec<McEstimate> = seg[n..n + nd].to_vec();
        let mut second: Vec<McEstimate> = seg[n + nd..n + nd + ns].to_vec();
        // Non-positive starts: exactly v(0) + βx.
        let v0 = if method == ValueMethod::Spliced { anchor[bi] } else { seg[4 * n] };
        for (e, &x) in v.iter_mut().zip(xs) {
            if x <= 0.0 {
                *e = McEstimate { mean: v0.mean + params.beta * x, ..v0 };
            }
        }
        if method == ValueMethod::Spliced {
            // The anchor is a common additive term with its own error.
            let a = anchor[bi];
            let d: Vec<f64> = seg[3 * n..4 * n].iter().map(|e| e.mean).collect();
            for (j, e) in v.iter_mut().enumerate() {
                if xs[j] > 0.0 {
                    e.std_error = e.std_error.hypot(d[j] * a.std_error);
                }
            }
            for (j, e) in diffs.iter_mut().enumerate() {
                e.std_error = e.std_error.hypot((d[j + 1] - d[j]) * a.std_error);
            }
            for (j, e) in second.iter_mut().enumerate() {
                e.std_error = e.std_error.hypot((d[j + 2] - 2.0 * d[j + 1] + d[j]) * a.std_error);
            }
        }
        for e in v.iter_mut().chain(diffs.iter_mut()).chain(second.iter_mut()) {
            e.stream = Some(base);
        }
        out.push(ValueCurve { b, xs: xs.to_vec(), v, diffs, second_diffs: second, method });
    }
    Ok(out)
}

/// `v_b(x)` for the strategy at `params.b`.
pub fn estimate_value(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    x: f64,
    sim: &SimSettings,
    method: ValueMethod,
) -> Result<McEstimate> {
    let curves = value_curves(spec, params, &[params.b], &[x], sim, method)?;
    Ok(curves[0].v[0])
}

/// Central-difference slope of `v_b` next to the randomized passage
/// transform `ν̲` at the same start, on shared paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub x: f64,
    pub slope: McEstimate,
    pub underline_nu: McEstimate,
}

impl DensityPoint {
    pub fn agrees(&self, k: f64) -> bool {
        self.slope.agrees_with(&self.underline_nu, k)
    }
}

pub fn density_points(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    xs: &[f64],
    h: f64,
    p: f64,
    sim: &SimSettings,
) -> Result<Vec<DensityPoint>> {
    sim.validate(spec)?;
    params.validate()?;
    if !(h > 0.0) {
        return Err(Error::invalid("h", "must be positive"));
    }
    let spec0 = at_origin(spec);
    let delta = spec.linear_drift();
    let base = sim.stream();
    let n = xs.len();
    let m = tree_moments(sim.paths, 2 * n, |i, acc| {
        let noise = draw(&spec0, sim, base.at(i as u64));
        let u: f64 = base.at(i as u64).with_purpose(Purpose::Randomization).rng().random();
        let v0 = path_flows(&noise, 0.0, params, delta, sim, false).0;
        let value = |y: f64| {
            if y <= 0.0 {
                v0 + params.beta * y
            } else {
                path_flows(&noise, y, params, delta, sim, false).0
            }
        };
        let mut row = vec![0.0; 2 * n];
        let mut cens = vec![false; 2 * n];
        for (j, &x) in xs.iter().enumerate() {
            row[j] = (value(x + h) - value(x - h)) / (2.0 * h);
            if x < 0.0 {
                row[n + j] = params.beta;
                continue;
            }
            let pass = passage(&noise, x, params, delta, sim);
            let t = if u < p { pass.weak } else { pass.strict };
            let (d, c) = discounted(t, params.q, sim);
            row[n + j] = params.beta * d;
            cens[n + j] = c;
        }
        acc.push_censored(&row, &cens);
    });
    Ok(xs
        .iter()
        .enumerate()
        .map(|(j, &x)| DensityPoint {
            x,
            slope: m.estimate(j).with_stream(base),
            underline_nu: m.estimate(n + j).with_stream(base),
        })
        .collect())
}

/// Residual of the value equation at one point with a standard error that is
/// valid for any correlation between the grid estimates (`Σ|w_i|·SE_i`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub value: f64,
    pub std_error: f64,
}

/// Value curve sampled on a grid, seen as an affine function of its values:
/// linear interpolation inside, `f(0) + βy` below 0 and constant slope
/// beyond the last point.
struct Interp<'a> {
    xs: &'a [f64],
    beta: f64,
}

impl Interp<'_> {
    /// Adds `scale·f(y)` to `(w, c)` for `0 ≤ y ≤ x_max`.
    fn add(&self, y: f64, scale: f64, w: &mut [f64]) {
        let xs = self.xs;
        let i = xs.partition_point(|&v| v <= y).clamp(1, xs.len() - 1) - 1;
        let t = (y - xs[i]) / (xs[i + 1] - xs[i]);
        w[i] += scale * (1.0 - t);
        w[i + 1] += scale * t;
    }

    /// Adds `scale·f(y)` for any real `y`.
    fn add_any(&self, y: f64, scale: f64, w: &mut [f64], c: &mut f64) {
        let xs = self.xs;
        let last = xs.len() - 1;
        if y < 0.0 {
            self.add(0.0, scale, w);
            *c += scale * self.beta * y;
        } else if y > xs[last] {
            let s = (y - xs[last]) / (xs[last] - xs[last - 1]);
            w[last] += scale * (1.0 + s);
            w[last - 1] -= scale * s;
        } else {
            self.add(y, scale, w);
        }
    }
}

/// Generator residual of an estimated value curve of the strategy at `b*`
/// (`params.b`): `ℒv - qv` on `(0, b*]` and `ℒv - αv' - qv + α` above, where
/// `ℒf = δf' + Σ rate·E[f(x + sign·M) - f(x)]` for a bounded-variation
/// compound-Poisson model.
pub fn generator_residual(
    curve: &ValueCurve,
    x: f64,
    params: &StrategyParams,
    spec: &JumpDiffusionSpec,
) -> Result<Residual> {
    generator_residual_on_grid(&curve.xs, &curve.means(), &curve.std_errors(), x, params, spec)
}

pub fn generator_residual_on_grid(
    xs: &[f64],
    v: &[f64],
    se: &[f64],
    x: f64,
    params: &StrategyParams,
    spec: &JumpDiffusionSpec,
) -> Result<Residual> {
    if !spec.is_bounded_variation() {
        return Err(Error::UnsupportedModel { sigma: spec.sigma });
    }
    let n = xs.len();
    let (lo, hi) = (xs.first().copied().unwrap_or(f64::NAN), xs.last().copied().unwrap_or(f64::NAN));
    if n < 3 || !(lo <= 0.0) || !(x > 0.0) || !(x <= hi) {
        return Err(Error::GridTooNarrow { x, lo, hi });
    }
    let f = Interp { xs, beta: params.beta };
    let mut w = vec![0.0; n];
    let mut c = 0.0;
    let delta = spec.linear_drift();
    let above = x > params.b + 1e-12;
    let slope_coeff = if above { delta - params.alpha } else { delta };

    // f'(x): central differences, left-sided at b* and at the right edge.
    let h = (hi - lo) / (n - 1) as f64;
    let at_barrier = (x - params.b).abs() <= 1e-9 * h.max(1.0);
    if at_barrier || x + h > hi {
        f.add_any(x, slope_coeff / h, &mut w, &mut c);
        f.add_any(x - h, -slope_coeff / h, &mut w, &mut c);
    } else {
        f.add_any(x + h, slope_coeff / (2.0 * h), &mut w, &mut c);
        f.add_any(x - h, -slope_coeff / (2.0 * h), &mut w, &mut c);
    }

    // Jump part: E[f(x + sM)] integrates the piecewise-linear f exactly
    // against the mark law, piece by piece.
    let mut nodes: Vec<f64> = vec![0.0];
    nodes.extend(xs.iter().copied().filter(|&v| v > 0.0));
    let total_rate = spec.total_jump_rate();
    for comp in &spec.jump_components {
        let s = comp.sign.value();
        let law = &comp.marks;
        let scale = comp.rate;
        let m_range = |ya: f64, yb: f64| -> (f64, f64) {
            let (a, b) = if s > 0.0 { (ya - x, yb - x) } else { (x - yb, x - ya) };
            (a.max(0.0), b)
        };
        let piece = |ya: f64, yb: f64, w: &mut [f64], c: &mut f64| {
            let (ml, mh) = m_range(ya, yb);
            if !(mh > ml) {
                return;
            }
            let p = law.prob_between(ml, mh.min(f64::MAX));
            if p <= 0.0 {
                return;
            }
            let ey = x * p + s * law.partial_mean(ml, mh);
            if ya == f64::NEG_INFINITY {
                f.add(0.0, scale * p, w);
                *c += scale * params.beta * ey;
            } else if yb == f64::INFINITY {
                let last = n - 1;
                f.add(ya, scale * p, w);
                let k = (ey - ya * p) / (xs[last] - xs[last - 1]);
                w[last] += scale * k;
                w[last - 1] -= scale * k;
            } else {
                let theta = (ey - ya * p) / (yb - ya);
                f.add(ya, scale * (p - theta), w);
                f.add(yb, scale * theta, w);
            }
        };
        piece(f64::NEG_INFINITY, 0.0, &mut w, &mut c);
        for pair in nodes.windows(2) {
            piece(pair[0], pair[1], &mut w, &mut c);
        }
        piece(*nodes.last().unwrap(), f64::INFINITY, &mut w, &mut c);
    }
    f.add_any(x, -(total_rate + params.q), &mut w, &mut c);
    if above {
        c += params.alpha;
    }
    let value = c + w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let std_error = w.iter().zip(se).map(|(a, s)| a.abs() * s).sum();
    Ok(Residual { value, std_error })
}
