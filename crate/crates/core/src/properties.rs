//! Executable structural properties of the controlled processes.
//!
//! Pathwise checks run on exact (event-driven) trajectories and compare
//! right-continuous values at the union of the knot times of every trajectory
//! involved. Each checker has a negative control: the same check applied to
//! a deliberately corrupted input, which must report at least one violation.

use crate::error::{Error, Result};
use crate::estimation::{value_curves, SimSettings, ValueCurve, ValueMethod};
use crate::levy_model::{characteristic_exponent, sample_event_path, sample_grid_into, CaseLabel, JumpDiffusionSpec};
use crate::path_engine::{self, Controls, EventPath, Jump, Refraction, Trajectory};
use crate::rng::RngStream;
use crate::stats::{tree_moments, McEstimate};
use crate::strategy::{refraction_controls, strategy_controls, Engine, StrategyParams};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{self, Write};

/// Absolute tolerance of pathwise checks.
pub const PATH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub time: f64,
    pub property: String,
    pub magnitude: f64,
}

/// Violations per property together with how many comparisons were made.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationLog {
    pub checks: BTreeMap<String, u64>,
    pub violations: Vec<Violation>,
}

impl ViolationLog {
    /// Records one comparison; `excess > 0` is a violation of that size.
    pub fn check(&mut self, property: &str, time: f64, excess: f64) {
        *self.checks.entry(property.to_string()).or_default() += 1;
        if excess > 0.0 || excess.is_nan() {
            self.violations.push(Violation { time, property: property.to_string(), magnitude: excess });
        }
    }

    pub fn merge(mut self, other: ViolationLog) -> ViolationLog {
        for (k, v) in other.checks {
            *self.checks.entry(k).or_default() += v;
        }
        self.violations.extend(other.violations);
        self
    }

    pub fn count(&self, property: &str) -> usize {
        self.violations.iter().filter(|v| v.property == property).count()
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.violations.iter().map(|v| v.magnitude).fold(0.0, f64::max)
    }

    /// One `PASS`/`FAIL` line per property.
    pub fn summary_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|(p, n)| {
                let bad = self.count(p);
                let status = if bad == 0 { "PASS" } else { "FAIL" };
                format!("{status} {p}: {bad} violations in {n} checks")
            })
            .collect()
    }

    /// CSV with columns `time,property,magnitude`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,property,magnitude")?;
        for v in &self.violations {
            writeln!(w, "{},{},{}", v.time, v.property, v.magnitude)?;
        }
        Ok(())
    }
}

fn excess_abs(a: f64, b: f64) -> f64 {
    (a - b).abs() - PATH_TOL
}

/// Raw path value and left limit at each knot time, from the path alone.
fn raw_values(path: &EventPath, x0: f64, times: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    let mut j = 0;
    for &t in times {
        let mut before = acc;
        while j < path.jumps.len() && path.jumps[j].time <= t {
            before = acc;
            acc += path.jumps[j].size;
            j += 1;
            if j < path.jumps.len() && path.jumps[j].time <= t {
                continue;
            }
        }
        let base = x0 + path.drift * t;
        let jumped_here = j > 0 && path.jumps[j - 1].time == t;
        let left = if jumped_here { base + before } else { base + acc };
        out.push((left, base + acc));
    }
    out
}

/// Reflection at 0: the running infimum equals the sum of the boundary
/// integral, the initial part and the jump top-ups, and matches a direct
/// scan of the raw path. `drop_jumps` removes the jump term (negative
/// control).
pub fn check_floor_decomposition(path: &EventPath, drop_jumps: bool) -> ViolationLog {
    let mut log = ViolationLog::default();
    let (tr, d) = path_engine::running_floor_reflection(path);
    let times: Vec<f64> = tr.knots.iter().map(|k| k.t).collect();
    let raw = raw_values(path, path.x0, &times);
    let mut inf = path.x0.min(0.0);
    for (i, &(left, value)) in raw.iter().enumerate() {
        inf = inf.min(left).min(value);
        let sum = if drop_jumps { d.component_sum(i) - d.jump_sum[i] } else { d.component_sum(i) };
        log.check("infimum-decomposition", times[i], excess_abs(sum, inf));
        log.check("reflected-value", times[i], excess_abs(d.reflected[i], value - inf));
    }
    log
}

/// `Z = (X - L) - inf((X - L) ∧ 0)` at every knot, the infimum scanned over
/// knot values and left limits; `perturb` shifts one knot of `Z` (negative
/// control).
pub fn check_reflection_residual(tr: &Trajectory, perturb: f64) -> ViolationLog {
    let mut log = ViolationLog::default();
    let mut inf: f64 = 0.0;
    let mut prev: Option<(f64, f64, f64)> = None;
    let target = tr.knots.len() / 2;
    for (i, (k, rt)) in tr.knots.iter().zip(&tr.rates).enumerate() {
        if let Some((t0, y0, slope)) = prev {
            inf = inf.min(y0 + slope * (k.t - t0));
        }
        let y = k.x - k.l;
        inf = inf.min(y);
        let z = if i == target { k.z + perturb } else { k.z };
        log.check("reflection-residual", k.t, excess_abs(z, y - inf));
        log.check("budget-identity", k.t, excess_abs(z, k.x - k.l + k.r));
        prev = Some((k.t, y, tr.drift - rt.l));
    }
    log
}

/// Dividend rate of the refraction at `level` with cap `alpha`. At the level
/// itself without stickiness the path leaves at once, upwards (paying `α`)
/// exactly when `δ > α`.
fn dividend_rate(y: f64, level: f64, alpha: f64, delta: f64, sticky: bool) -> f64 {
    if y > level || (y == level && !sticky && delta > alpha) {
        alpha
    } else if y == level && sticky {
        delta
    } else {
        0.0
    }
}

/// Recomputes `∫ h(Y) ds` from the state path (segment midpoints) and checks
/// `Y = X - ∫ h(Y)`; `h_alpha`/`h_sticky` describe the `h` used for the
/// recomputation, so a wrong `h` is a negative control.
pub fn check_refraction_residual(tr: &Trajectory, level: f64, h_alpha: f64, h_sticky: bool) -> ViolationLog {
    let mut log = ViolationLog::default();
    let mut integral = 0.0;
    for w in 0..tr.knots.len() {
        let k = &tr.knots[w];
        if w > 0 {
            let p = &tr.knots[w - 1];
            let dt = k.t - p.t;
            if dt > 0.0 {
                // The state is linear on the segment, so its midpoint decides
                // the regime. Arrivals are clamped onto the level, so a held
                // segment sits exactly at it.
                let mid = p.z + 0.5 * (k.z_left - p.z);
                integral += dividend_rate(mid, level, h_alpha, tr.drift, h_sticky) * dt;
            }
        }
        log.check("refraction-residual", k.t, excess_abs(k.l, integral).max(excess_abs(k.z, k.x - integral)));
    }
    log
}

/// Evaluation times: union of all knot times.
fn union_times(trs: &[&Trajectory]) -> Vec<f64> {
    let mut ts: Vec<f64> = trs.iter().flat_map(|t| t.knots.iter().map(|k| k.t)).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// One comparison time of a coupled pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPoint {
    pub t: f64,
    pub dz: f64,
    pub dl: f64,
    pub dr: f64,
}

/// Options of the two-path check.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairOptions {
    /// Accept any positive offset, not only offsets below `b`.
    pub relax_offset: bool,
    /// Accept `k = l`.
    pub allow_equal: bool,
}

/// Two controlled paths on the same event path, started at `x + k` and
/// `x + l` (`l ≥ k`): the budget identity, monotonicity and ranges of the
/// differences and the support of their increments. At `b = 0` in the
/// irregular case (`δ > α`) also `L = αt` on both paths.
pub fn check_coupled_pair(
    path: &EventPath,
    params: &StrategyParams,
    x: f64,
    k: f64,
    l: f64,
) -> (ViolationLog, Vec<PairPoint>) {
    let mut log = ViolationLog::default();
    let ctl = strategy_controls(path.drift, params);
    let lo = path_engine::run(&path.with_start(x + k), &ctl);
    let hi = path_engine::run(&path.with_start(x + l), &ctl);
    let gap = l - k;
    let b = params.b;
    let times = union_times(&[&lo, &hi]);
    let mut points = Vec::with_capacity(times.len());
    let mut prev: Option<(f64, PairPoint)> = None;
    let irregular_zero = b == 0.0 && path.drift > params.alpha;
    for &t in &times {
        let (a, c) = (lo.state_at(t), hi.state_at(t));
        let p = PairPoint { t, dz: c.z - a.z, dl: c.l - a.l, dr: c.r - a.r };
        log.check("pair-budget", t, excess_abs(p.dz + p.dl - p.dr, gap));
        log.check("pair-dz-range", t, (-p.dz).max(p.dz - gap) - PATH_TOL);
        log.check("pair-dl-range", t, (-p.dl).max(p.dl - gap) - PATH_TOL);
        log.check("pair-dr-range", t, p.dr.max(-gap - p.dr) - PATH_TOL);
        if irregular_zero {
            log.check("pair-l-linear", t, excess_abs(a.l, params.alpha * t).max(excess_abs(c.l, params.alpha * t)));
        }
        if let Some((t0, q)) = prev {
            log.check("pair-dz-monotone", t, p.dz - q.dz - PATH_TOL);
            log.check("pair-dl-monotone", t, q.dl - p.dl - PATH_TOL);
            log.check("pair-dr-monotone", t, p.dr - q.dr - PATH_TOL);
            let mid = 0.5 * (t0 + t);
            let around = [t0, mid, t];
            if p.dl - q.dl > PATH_TOL {
                let ok = around.iter().any(|&s| {
                    let (za, zc) = (lo.state_at(s).z, hi.state_at(s).z);
                    za - PATH_TOL <= b && b <= zc + PATH_TOL && (zc - za).abs() > PATH_TOL
                });
                log.check("pair-dl-support", t, if ok { 0.0 } else { p.dl - q.dl });
            }
            if q.dr - p.dr > PATH_TOL {
                let ok = around.iter().any(|&s| lo.state_at(s).z.abs() <= PATH_TOL)
                    || lo.knots.iter().any(|kn| kn.t == t && kn.dr > 0.0);
                log.check("pair-dr-support", t, if ok { 0.0 } else { q.dr - p.dr });
            }
        }
        prev = Some((t, p));
        points.push(p);
    }
    (log, points)
}

fn require_exact(spec: &JumpDiffusionSpec) -> Result<()> {
    if !spec.is_bounded_variation() {
        return Err(Error::EngineUnavailable { sigma: spec.sigma });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledPairReport {
    pub log: ViolationLog,
    /// Differences along the first path, for inspection.
    pub first_path: Vec<PairPoint>,
    pub paths: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn coupled_pair_run(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    x: f64,
    k: f64,
    l: f64,
    horizon: f64,
    paths: usize,
    stream: RngStream,
    opts: PairOptions,
) -> Result<CoupledPairReport> {
    require_exact(spec)?;
    params.validate()?;
    let gap = l - k;
    if gap < 0.0 || (gap == 0.0 && !opts.allow_equal) {
        return Err(Error::invalid("l", "must exceed k"));
    }
    if params.b > 0.0 && gap >= params.b && !opts.relax_offset {
        return Err(Error::invalid("l", "offset l - k must lie in (0, b)"));
    }
    let spec0 = spec.with_x0(0.0);
    let results: Vec<(ViolationLog, Vec<PairPoint>)> = crate::stats::map_paths(paths, |i| {
        let path = sample_event_path(&spec0, horizon, stream.at(i as u64)).expect("bounded variation");
        check_coupled_pair(&path, params, x, k, l)
    });
    let mut first_path = Vec::new();
    let mut log = ViolationLog::default();
    for (i, (lg, pts)) in results.into_iter().enumerate() {
        if i == 0 {
            first_path = pts;
        }
        log = log.merge(lg);
    }
    Ok(CoupledPairReport { log, first_path, paths })
}

fn ladder_ok(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() || alphas.windows(2).any(|w| !(w[0] < w[1])) || alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::InvalidLadder);
    }
    Ok(())
}

/// Orderings across a ladder of dividend caps on one event path:
/// `Y` and `Z` non-increasing in α, `L` and `R` non-decreasing. Returns the
/// log and, per α, the sup distance of `Z^α` to the last rung.
pub fn check_alpha_ladder(path: &EventPath, b: f64, alphas: &[f64], x: f64, beta_q: (f64, f64)) -> (ViolationLog, Vec<f64>) {
    let mut log = ViolationLog::default();
    let start = path.with_start(x);
    let (beta, q) = beta_q;
    let ys: Vec<Trajectory> = alphas.iter().map(|&a| path_engine::run(&start, &refraction_controls(path.drift, b, a))).collect();
    let zs: Vec<Trajectory> = alphas
        .iter()
        .map(|&a| path_engine::run(&start, &strategy_controls(path.drift, &StrategyParams { b, alpha: a, beta, q })))
        .collect();
    let all: Vec<&Trajectory> = ys.iter().chain(zs.iter()).collect();
    let times = union_times(&all);
    let mut gaps = vec![0.0f64; alphas.len()];
    for &t in &times {
        let y: Vec<f64> = ys.iter().map(|tr| tr.state_at(t).z).collect();
        let z: Vec<_> = zs.iter().map(|tr| tr.state_at(t)).collect();
        for i in 1..alphas.len() {
            log.check("order-y", t, y[i] - y[i - 1] - PATH_TOL);
            log.check("order-z", t, z[i].z - z[i - 1].z - PATH_TOL);
            log.check("order-l", t, z[i - 1].l - z[i].l - PATH_TOL);
            log.check("order-r", t, z[i - 1].r - z[i].r - PATH_TOL);
        }
        let last = z[alphas.len() - 1].z;
        for (g, zi) in gaps.iter_mut().zip(&z) {
            *g = g.max((zi.z - last).abs());
        }
    }
    (log, gaps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaLadderReport {
    pub alphas: Vec<f64>,
    pub log: ViolationLog,
    /// Mean over paths of `sup_t |Z^α_t - Z^{α_max}_t|`.
    pub mean_sup_gap: Vec<f64>,
    /// Barrier used for each rung of the value ladder.
    pub barriers: Vec<f64>,
    /// `v^α(x)` per rung (shared paths), one row per start in `xs`.
    pub values: Vec<Vec<McEstimate>>,
    pub xs: Vec<f64>,
}

impl AlphaLadderReport {
    /// Value ladder non-decreasing in α within three combined standard
    /// errors, at every start.
    pub fn values_monotone(&self) -> bool {
        self.values.iter().all(|row| row.windows(2).all(|w| w[1].mean >= w[0].mean - 3.0 * w[0].std_error.hypot(w[1].std_error)))
    }

    /// `|v^{α_i} - v^{α_max}|` per start and rung.
    pub fn distances_to_top(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|row| {
                let top = row.last().map_or(0.0, |e| e.mean);
                row.iter().map(|e| (e.mean - top).abs()).collect()
            })
            .collect()
    }
}

/// Runs the pathwise ladder checks at barrier `b` on `paths` paths and
/// estimates the value ladder at `barriers[i]` for rung `i` (all rungs at
/// `b` when `barriers` is `None`).
#[allow(clippy::too_many_arguments)]
pub fn alpha_ladder_run(
    spec: &JumpDiffusionSpec,
    params: &StrategyParams,
    alphas: &[f64],
    barriers: Option<&[f64]>,
    xs: &[f64],
    sim: &SimSettings,
    check_paths: usize,
) -> Result<AlphaLadderReport> {
    require_exact(spec)?;
    ladder_ok(alphas)?;
    if params.b < 0.0 {
        return Err(Error::InvalidBarrier(params.b));
    }
    let spec0 = spec.with_x0(0.0);
    let stream = sim.stream();
    let x_check = xs.first().copied().unwrap_or(params.b);
    let results: Vec<(ViolationLog, Vec<f64>)> = crate::stats::map_paths(check_paths, |i| {
        let path = sample_event_path(&spec0, sim.horizon, stream.at(i as u64)).expect("bounded variation");
        check_alpha_ladder(&path, params.b, alphas, x_check, (params.beta, params.q))
    });
    let mut log = ViolationLog::default();
    let mut sums = vec![0.0; alphas.len()];
    for (lg, gaps) in results {
        log = log.merge(lg);
        for (s, g) in sums.iter_mut().zip(gaps) {
            *s += g;
        }
    }
    let mean_sup_gap = sums.iter().map(|s| s / check_paths.max(1) as f64).collect();
    let bars: Vec<f64> = match barriers {
        Some(b) if b.len() == alphas.len() => b.to_vec(),
        Some(_) => return Err(Error::invalid("task.barriers", "one barrier per rung")),
        None => vec![params.b; alphas.len()],
    };
    let mut columns = Vec::with_capacity(alphas.len());
    for (&a, &b) in alphas.iter().zip(&bars) {
        let p = params.with_alpha(a).with_barrier(b);
        let curve = value_curves(spec, &p, &[b], xs, &SimSettings { engine: Engine::Exact, ..*sim }, ValueMethod::Direct)?;
        columns.push(curve.into_iter().next().expect("one barrier").v);
    }
    let values = (0..xs.len()).map(|j| columns.iter().map(|c| c[j]).collect()).collect();
    Ok(AlphaLadderReport { alphas: alphas.to_vec(), log, mean_sup_gap, barriers: bars, values, xs: xs.to_vec() })
}

/// One probe of the characteristic function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharProbe {
    pub lambda: f64,
    pub empirical_re: McEstimate,
    pub empirical_im: McEstimate,
    pub target_re: f64,
    pub target_im: f64,
}

impl CharProbe {
    pub fn passes(&self) -> bool {
        let ok = |e: &McEstimate, t: f64| (e.mean - t).abs() <= (3.0 * e.std_error).max(1e-12);
        ok(&self.empirical_re, self.target_re) && ok(&self.empirical_im, self.target_im)
    }
}

/// Compares the empirical mean of `e^{iλX_t}` (X from 0) with `e^{-tΨ(λ)}`.
pub fn char_function_check(
    spec: &JumpDiffusionSpec,
    t: f64,
    lambdas: &[f64],
    paths: usize,
    stream: RngStream,
) -> Result<Vec<CharProbe>> {
    crate::levy_model::validate_spec(spec)?;
    let spec0 = spec.with_x0(0.0);
    let n = lambdas.len();
    let m = tree_moments(paths, 2 * n, |i, acc| {
        let mut xs = Vec::with_capacity(2);
        sample_grid_into(&spec0, t, 1, stream.at(i as u64), &mut xs);
        let x = xs[1];
        let mut row = vec![0.0; 2 * n];
        for (j, &l) in lambdas.iter().enumerate() {
            row[j] = (l * x).cos();
            row[n + j] = (l * x).sin();
        }
        acc.push(&row);
    });
    lambdas
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let target = (-t * characteristic_exponent(spec, l)?).exp();
            Ok(CharProbe {
                lambda: l,
                empirical_re: m.estimate(j).with_stream(stream),
                empirical_im: m.estimate(n + j).with_stream(stream),
                target_re: target.re,
                target_im: target.im,
            })
        })
        .collect()
}

/// Shape of the value curve of the strategy at `b*`: bounded by `α/q`,
/// concave, slopes at most `β`, exactly `β`-linear below 0, slopes at least
/// 1 up to `b*` and at most 1 beyond, all within three standard errors.
pub fn value_shape_check(curve: &ValueCurve, params: &StrategyParams, bstar: f64) -> ViolationLog {
    let mut log = ViolationLog::default();
    let xs = &curve.xs;
    let cap = params.alpha / params.q;
    for (x, e) in xs.iter().zip(&curve.v) {
        log.check("value-bound", *x, e.mean - cap - 3.0 * e.std_error);
    }
    if let Some(i0) = xs.iter().position(|&x| x == 0.0) {
        let v0 = curve.v[i0].mean;
        for (x, e) in xs.iter().zip(&curve.v).filter(|(x, _)| **x < 0.0) {
            log.check("linear-below-zero", *x, (e.mean - (v0 + params.beta * x)).abs() - PATH_TOL);
        }
    }
    for (j, d) in curve.diffs.iter().enumerate() {
        let h = xs[j + 1] - xs[j];
        let (slope, se) = (d.mean / h, d.std_error / h + PATH_TOL);
        log.check("slope-cap", xs[j], slope - params.beta - 3.0 * se);
        if xs[j] >= 0.0 && xs[j + 1] <= bstar + 1e-12 {
            log.check("slope-below-barrier", xs[j], 1.0 - slope - 3.0 * se);
        } else if xs[j] >= bstar - 1e-12 {
            log.check("slope-above-barrier", xs[j], slope - 1.0 - 3.0 * se);
        }
    }
    for (j, s) in curve.second_diffs.iter().enumerate() {
        log.check("concavity", xs[j + 1], s.mean - 3.0 * s.std_error - PATH_TOL);
    }
    log
}

/// Value curve of closed-form values (zero standard errors).
pub fn exact_curve(b: f64, xs: &[f64], v: &[f64]) -> ValueCurve {
    let e = |m: f64| McEstimate::exact(m);
    ValueCurve {
        b,
        xs: xs.to_vec(),
        v: v.iter().map(|&m| e(m)).collect(),
        diffs: v.windows(2).map(|w| e(w[1] - w[0])).collect(),
        second_diffs: v.windows(3).map(|w| e(w[2] - 2.0 * w[1] + w[0])).collect(),
        method: ValueMethod::Direct,
    }
}

/// All pathwise checks of one event path for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSuite<'a> {
    pub params: StrategyParams,
    pub x: f64,
    pub k: f64,
    pub l: f64,
    pub alphas: &'a [f64],
}

pub fn run_path_suite(path: &EventPath, suite: &PathSuite<'_>) -> ViolationLog {
    let p = &suite.params;
    let start = path.with_start(suite.x);
    let case = CaseLabel::for_drift(path.drift, p.alpha);
    let mut log = check_floor_decomposition(&start, false);
    let z = path_engine::run(&start, &strategy_controls(path.drift, p));
    log = log.merge(check_reflection_residual(&z, 0.0));
    if p.alpha.is_finite() {
        let y = path_engine::refract_exact(&start, p.b, p.alpha, case);
        log = log.merge(check_refraction_residual(&y.trajectory, p.b, p.alpha, case.is_sticky()));
    }
    log = log.merge(check_coupled_pair(path, p, suite.x, suite.k, suite.l).0);
    if !suite.alphas.is_empty() {
        log = log.merge(check_alpha_ladder(path, p.b, suite.alphas, suite.x, (p.beta, p.q)).0);
    }
    log
}

/// Pathwise suite over `paths` sampled paths of `spec`.
pub fn path_suite_run(
    spec: &JumpDiffusionSpec,
    suite: &PathSuite<'_>,
    horizon: f64,
    paths: usize,
    stream: RngStream,
) -> Result<ViolationLog> {
    require_exact(spec)?;
    suite.params.validate()?;
    ladder_ok(suite.alphas).or_else(|e| if suite.alphas.is_empty() { Ok(()) } else { Err(e) })?;
    let spec0 = spec.with_x0(0.0);
    let logs = crate::stats::map_paths(paths, |i| {
        let path = sample_event_path(&spec0, horizon, stream.at(i as u64)).expect("bounded variation");
        run_path_suite(&path, suite)
    });
    Ok(logs.into_iter().fold(ViolationLog::default(), ViolationLog::merge))
}

/// Outcome of one negative control.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub name: &'static str,
    pub log: ViolationLog,
}

impl ControlOutcome {
    /// A control passes when the checker caught the corruption.
    pub fn caught(&self) -> bool {
        !self.log.is_clean()
    }
}

/// A fixed path with a top-up, sticky and transversal barrier episodes.
fn control_path() -> EventPath {
    EventPath::new(
        0.5,
        0.3,
        12.0,
        vec![
            Jump { time: 1.0, size: -1.4 },
            Jump { time: 2.5, size: 1.6 },
            Jump { time: 4.0, size: 0.9 },
            Jump { time: 6.0, size: -2.5 },
            Jump { time: 7.5, size: 2.2 },
            Jump { time: 9.0, size: -0.8 },
        ],
    )
}

/// Each checker applied to a corrupted input.
pub fn negative_controls() -> Vec<ControlOutcome> {
    let path = control_path();
    let params = StrategyParams { b: 1.0, alpha: 0.5, beta: 1.5, q: 0.05 };
    let case = CaseLabel::for_drift(path.drift, params.alpha);
    let z = path_engine::run(&path, &strategy_controls(path.drift, &params));
    let y = path_engine::refract_exact(&path, params.b, params.alpha, case);
    let mut out = vec![
        ControlOutcome { name: "decomposition without jump term", log: check_floor_decomposition(&path, true) },
        ControlOutcome { name: "perturbed reflected state", log: check_reflection_residual(&z, 1e-3) },
        ControlOutcome {
            name: "refraction residual with wrong h",
            log: check_refraction_residual(&y.trajectory, params.b, params.alpha, !case.is_sticky()),
        },
        ControlOutcome { name: "coupled pair with k and l swapped", log: check_coupled_pair(&path, &params, 0.5, 0.4, 0.0).0 },
        ControlOutcome {
            name: "alpha ladder in reverse order",
            log: check_alpha_ladder(&path, params.b, &[f64::INFINITY, 2.0, 0.5], 0.5, (params.beta, params.q)).0,
        },
    ];
    // L = αt at b = 0 only holds when δ > α; a sticky model must fail it.
    let sticky = StrategyParams { b: 0.0, ..params };
    let mut log = ViolationLog::default();
    let tr = path_engine::run(&path, &strategy_controls(path.drift, &sticky));
    for k in &tr.knots {
        log.check("pair-l-linear", k.t, excess_abs(k.l, sticky.alpha * k.t));
    }
    out.push(ControlOutcome { name: "L = alpha t on a sticky model", log });
    let mut budget = ViolationLog::default();
    for (i, k) in tr.knots.iter().enumerate() {
        let r = if i == 1 { k.r + 1e-3 } else { k.r };
        budget.check("budget-identity", k.t, excess_abs(k.z, k.x - k.l + r));
    }
    out.push(ControlOutcome { name: "perturbed injection process", log: budget });
    let convex = exact_curve(1.0, &[0.0, 0.5, 1.0, 1.5], &[0.0, 0.1, 0.4, 0.9]);
    out.push(ControlOutcome { name: "convex value curve", log: value_shape_check(&convex, &params, 1.0) });
    out
}

/// Refracted path with an explicit (possibly wrong) stickiness flag.
pub fn refract_with(path: &EventPath, b: f64, alpha: f64, sticky: bool) -> Trajectory {
    path_engine::run(
        path,
        &Controls { refraction: Some(Refraction { level: b, alpha, sticky }), floor: false, watch_zero: true },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::{drift_only, reference_model};
    use crate::rng::Purpose;
    use approx::assert_abs_diff_eq;

    fn params(b: f64) -> StrategyParams {
        StrategyParams { b, alpha: 0.5, beta: 1.5, q: 0.05 }
    }

    #[test]
    fn identical_starts_have_zero_differences() {
        let path = control_path();
        let (log, pts) = check_coupled_pair(&path, &params(1.0), 0.3, 0.2, 0.2);
        assert!(log.is_clean(), "{:?}", log.violations);
        assert!(pts.iter().all(|p| p.dz == 0.0 && p.dl == 0.0 && p.dr == 0.0));
    }

    #[test]
    fn falling_pair_by_hand() {
        let path = EventPath::new(0.0, -1.0, 3.0, vec![]);
        let (log, pts) = check_coupled_pair(&path, &params(2.0), 0.0, 0.0, 1.0);
        assert!(log.is_clean(), "{:?}", log.violations);
        for p in &pts {
            assert_abs_diff_eq!(p.dz, (1.0 - p.t).max(0.0), epsilon = 1e-12);
            assert_abs_diff_eq!(p.dr, -(1.0f64.min(p.t)), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(pts.last().unwrap().dr, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn reference_model_pairs_are_clean() {
        let spec = reference_model(0.0);
        let s = RngStream::new(9, Purpose::Paths, 0);
        let rep = coupled_pair_run(&spec, &params(1.66), 0.4, 0.0, 0.5, 20.0, 100, s, PairOptions::default()).unwrap();
        assert!(rep.log.is_clean(), "{:?}", &rep.log.violations[..rep.log.violations.len().min(5)]);
    }

    #[test]
    fn pair_requires_bounded_variation() {
        let s = RngStream::new(9, Purpose::Paths, 0);
        let e = coupled_pair_run(&reference_model(1.0), &params(1.0), 0.0, 0.0, 0.5, 5.0, 2, s, PairOptions::default());
        assert!(matches!(e, Err(Error::EngineUnavailable { .. })));
    }

    #[test]
    fn drift_ladder_by_hand() {
        let path = EventPath::new(0.0, 2.0, 2.0, vec![]);
        let (log, gaps) = check_alpha_ladder(&path, 1.0, &[0.5, 1.0, f64::INFINITY], 1.0, (1.5, 0.05));
        assert!(log.is_clean());
        assert_abs_diff_eq!(gaps[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gaps[1], 2.0, epsilon = 1e-12);
        assert_eq!(gaps[2], 0.0);
    }

    #[test]
    fn ladder_must_ascend() {
        let sim = SimSettings { horizon: 5.0, engine: Engine::Exact, paths: 2, seed: 1 };
        let e = alpha_ladder_run(&reference_model(0.0), &params(1.0), &[2.0, 0.5], None, &[0.5], &sim, 2);
        assert_eq!(e.unwrap_err(), Error::InvalidLadder);
    }

    #[test]
    fn negative_controls_are_caught() {
        for c in negative_controls() {
            assert!(c.caught(), "{} not caught", c.name);
        }
    }

    #[test]
    fn suite_on_reference_model_is_clean() {
        let spec = reference_model(0.0);
        let suite = PathSuite { params: params(1.2), x: 0.7, k: 0.0, l: 0.6, alphas: &[0.5, 2.0, 8.0, f64::INFINITY] };
        let log = path_suite_run(&spec, &suite, 20.0, 50, RngStream::new(3, Purpose::Paths, 0)).unwrap();
        assert!(log.is_clean(), "{:?}", &log.violations[..log.violations.len().min(5)]);
        assert!(log.checks.len() >= 10);
    }

    #[test]
    fn zero_barrier_lemmas() {
        // Irregular case: δ = 1 > α = 0.5.
        let path = EventPath::new(0.0, 1.0, 5.0, vec![Jump { time: 2.0, size: -3.0 }]);
        let (log, _) = check_coupled_pair(&path, &params(0.0), 0.0, 0.0, 2.0);
        assert!(log.is_clean(), "{:?}", log.violations);
        assert!(log.checks.contains_key("pair-l-linear"));
        // Sticky case: δ = 0.3 ≤ α.
        let path = EventPath::new(0.0, 0.3, 5.0, vec![Jump { time: 2.0, size: -3.0 }]);
        let (log, _) = check_coupled_pair(&path, &params(0.0), 0.0, 0.0, 2.0);
        assert!(log.is_clean(), "{:?}", log.violations);
    }

    #[test]
    fn start_at_barrier_with_drift_one_ulp_above_cap() {
        let alpha: f64 = 0.4978488825226045;
        let delta = f64::from_bits(alpha.to_bits() + 1);
        let path = EventPath::new(2.9595, delta, 3.0, vec![Jump { time: 0.5, size: 0.4 }]);
        let case = CaseLabel::for_drift(delta, alpha);
        assert!(!case.is_sticky());
        let y = path_engine::refract_exact(&path, 2.9595, alpha, case);
        let log = check_refraction_residual(&y.trajectory, 2.9595, alpha, false);
        assert!(log.is_clean(), "{:?}", log.violations);
    }

    #[test]
    fn char_function_pure_drift_and_zero() {
        let s = RngStream::new(1, Purpose::Marks, 0);
        let probes = char_function_check(&drift_only(0.7), 2.0, &[0.0, 1.3], 10, s).unwrap();
        assert!(probes.iter().all(|p| p.passes()));
        assert_eq!(probes[0].empirical_re.mean, 1.0);
        assert_eq!(probes[0].target_re, 1.0);
        assert_eq!(probes[1].empirical_re.std_error, 0.0);
    }

    #[test]
    fn closed_form_shape_passes() {
        let p = params(1.5f64.ln() / 0.05);
        let xs: Vec<f64> = (0..=60).map(|i| -1.0 + 0.1 * i as f64).collect();
        let v: Vec<f64> = xs.iter().map(|&x| if x < 0.0 { -30.0 + 1.5 * x } else { -30.0 * (-0.05 * x).exp() }).collect();
        let log = value_shape_check(&exact_curve(p.b, &xs, &v), &p, p.b);
        assert!(log.is_clean(), "{:?}", log.violations);
    }

    #[test]
    fn csv_and_summary() {
        let mut log = ViolationLog::default();
        log.check("a", 1.0, -1.0);
        log.check("b", 2.0, 0.5);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,property,magnitude\n2,b,0.5\n");
        assert_eq!(log.summary_lines(), vec!["PASS a: 0 violations in 1 checks", "FAIL b: 1 violations in 1 checks"]);
    }
}
