//! Exact pathwise transforms of bounded-variation paths.
//!
//! A bounded-variation finite-activity path is a linear drift interrupted by
//! finitely many jumps. Refraction at `b`, reflection at 0 and their
//! combination turn it into another piecewise-linear path whose slope depends
//! only on where the state sits relative to the levels `{0, b}`. The sweep
//! below walks the path event by event, solving the linear level-crossing
//! times in closed form, and records a knot at every jump, every level
//! arrival and at the horizon.

use crate::error::{Error, Result};
use crate::levy_model::CaseLabel;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub size: f64,
}

/// `x_t = x0 + drift·t + Σ_{s ≤ t} jumps` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPath {
    pub x0: f64,
    pub drift: f64,
    pub horizon: f64,
    /// Strictly increasing times in `(0, horizon]`, non-zero sizes.
    pub jumps: Vec<Jump>,
}

impl EventPath {
    pub fn new(x0: f64, drift: f64, horizon: f64, jumps: Vec<Jump>) -> Self {
        Self { x0, drift, horizon, jumps }
    }

    pub fn with_start(&self, x0: f64) -> Self {
        Self { x0, ..self.clone() }
    }

    pub fn with_drift(&self, drift: f64) -> Self {
        Self { drift, ..self.clone() }
    }

    fn jump_sum_through(&self, t: f64, inclusive: bool) -> f64 {
        self.jumps
            .iter()
            .take_while(|j| if inclusive { j.time <= t } else { j.time < t })
            .map(|j| j.size)
            .sum()
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.x0 + self.drift * t + self.jump_sum_through(t, true)
    }

    pub fn left_limit_at(&self, t: f64) -> f64 {
        self.x0 + self.drift * t + self.jump_sum_through(t, false)
    }

    /// Total variation on `[0, horizon]`.
    pub fn total_variation(&self) -> f64 {
        self.drift.abs() * self.horizon + self.jumps.iter().map(|j| j.size.abs()).sum::<f64>()
    }

    /// Removes the jumps whose size lies strictly between 0 and `eps`
    /// (`eps > 0`: small up-jumps; `eps < 0`: small down-jumps).
    pub fn without_small_jumps(&self, eps: f64) -> Self {
        let keep = |j: &Jump| {
            if eps >= 0.0 {
                !(j.size > 0.0 && j.size < eps)
            } else {
                !(j.size < 0.0 && j.size > eps)
            }
        };
        Self { jumps: self.jumps.iter().copied().filter(keep).collect(), ..self.clone() }
    }

    /// CSV with columns `time,left_limit,jump,value`: one row at t = 0 and one
    /// per jump.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time,left_limit,jump,value")?;
        writeln!(w, "0,{},0,{}", self.x0, self.x0)?;
        let mut acc = 0.0;
        for j in &self.jumps {
            let left = self.x0 + self.drift * j.time + acc;
            acc += j.size;
            writeln!(w, "{},{},{},{}", j.time, left, j.size, left + j.size)?;
        }
        Ok(())
    }
}

/// Dividend-rate cap together with the barrier it acts above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refraction {
    pub level: f64,
    /// Positive, possibly `f64::INFINITY` (reflection from above).
    pub alpha: f64,
    /// Case 2: the drift at the barrier is cancelled (`h(b) = δ`).
    pub sticky: bool,
}

impl Refraction {
    pub fn new(level: f64, alpha: f64, case: CaseLabel) -> Self {
        Self { level, alpha, sticky: case.is_sticky() }
    }
}

/// What the sweep applies to the raw path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Controls {
    pub refraction: Option<Refraction>,
    /// Reflect at 0 from below (capital injection).
    pub floor: bool,
    /// Split segments where the state crosses 0 (needed for passage times of
    /// unfloored processes).
    pub watch_zero: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnotKind {
    Start,
    Jump,
    Level,
    Horizon,
}

/// State of a controlled path at one knot (right-continuous values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub t: f64,
    pub kind: KnotKind,
    /// Raw driving path.
    pub x: f64,
    /// Controlled state just before the knot.
    pub z_left: f64,
    pub z: f64,
    /// Cumulative dividends `∫h(Z)ds` plus upward projections when α = ∞.
    pub l: f64,
    /// Cumulative injections.
    pub r: f64,
    /// Part of `r` accrued continuously while held at the floor.
    pub r_drift: f64,
    /// Part of `r` from jump top-ups (after t = 0).
    pub r_jump: f64,
    /// Injection made at this knot.
    pub dr: f64,
    /// Lump-sum dividend paid at this knot (α = ∞ only).
    pub dl: f64,
}

/// Slopes of `(z, l, r)` on the segment following a knot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub z: f64,
    pub l: f64,
    pub r: f64,
}

/// Piecewise-linear controlled path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub knots: Vec<Knot>,
    /// `rates[i]` holds on `[knots[i].t, knots[i+1].t)`.
    pub rates: Vec<Rates>,
    pub horizon: f64,
    pub drift: f64,
}

/// Interpolated state at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub x: f64,
    pub z: f64,
    pub l: f64,
    pub r: f64,
}

impl Trajectory {
    fn knot_index_at(&self, t: f64) -> usize {
        self.knots.partition_point(|k| k.t <= t).saturating_sub(1)
    }

    /// Right-continuous state at `t ∈ [0, horizon]`.
    pub fn state_at(&self, t: f64) -> State {
        let i = self.knot_index_at(t);
        let k = &self.knots[i];
        let rt = &self.rates[i];
        let dt = t - k.t;
        State { x: k.x + self.drift * dt, z: k.z + rt.z * dt, l: k.l + rt.l * dt, r: k.r + rt.r * dt }
    }

    pub fn last(&self) -> &Knot {
        self.knots.last().expect("trajectory has a start knot")
    }

    /// Times at which the state arrives at a level by drift.
    pub fn level_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots.iter().filter(|k| k.kind == KnotKind::Level).map(|k| k.t)
    }
}

#[derive(Debug, Clone, Copy)]
struct Motion {
    rates: Rates,
    target: Option<f64>,
}

fn motion_at(z: f64, delta: f64, ctl: &Controls) -> Motion {
    let at_floor = ctl.floor && z <= 0.0;
    let mut rates = Rates::default();
    match ctl.refraction {
        None => {
            if at_floor && delta < 0.0 {
                rates.r = -delta;
            } else {
                rates.z = delta;
            }
        }
        Some(rf) => {
            let b = rf.level;
            if rf.alpha.is_infinite() {
                if z >= b && delta >= 0.0 {
                    // Held at b from above; δ > 0 is paid out as it arrives.
                    rates.l = delta;
                } else if at_floor && delta < 0.0 {
                    rates.r = -delta;
                } else {
                    rates.z = delta;
                }
            } else if z > b {
                rates.z = delta - rf.alpha;
                rates.l = rf.alpha;
            } else if z == b {
                let h_b = if rf.sticky { delta } else { 0.0 };
                let net = delta - h_b;
                if net == 0.0 {
                    rates.l = h_b;
                } else if net > 0.0 {
                    // Crossing upwards (δ > α in a non-sticky model).
                    rates.z = delta - rf.alpha;
                    rates.l = rf.alpha;
                    if rates.z <= 0.0 {
                        rates = Rates { z: 0.0, l: delta, r: 0.0 };
                    }
                } else if at_floor {
                    rates.l = h_b;
                    rates.r = -net;
                } else {
                    rates.z = delta;
                }
            } else if at_floor && delta < 0.0 {
                rates.r = -delta;
            } else {
                rates.z = delta;
            }
        }
    }
    let target = if rates.z > 0.0 {
        let mut best: Option<f64> = None;
        if let Some(rf) = ctl.refraction {
            if rf.level > z {
                best = Some(rf.level);
            }
        }
        if (ctl.floor || ctl.watch_zero) && 0.0 > z {
            best = Some(best.map_or(0.0, |v: f64| v.min(0.0)));
        }
        best
    } else if rates.z < 0.0 {
        let mut best: Option<f64> = None;
        if let Some(rf) = ctl.refraction {
            if rf.level < z {
                best = Some(rf.level);
            }
        }
        if (ctl.floor || ctl.watch_zero) && 0.0 < z {
            best = Some(best.map_or(0.0, |v: f64| v.max(0.0)));
        }
        best
    } else {
        None
    };
    Motion { rates, target }
}

/// Walks `path` under `ctl`, handing every knot and the rates that follow it
/// to `sink`. The final knot is at the horizon and carries zero rates.
pub fn sweep<F: FnMut(&Knot, &Rates)>(path: &EventPath, ctl: &Controls, sink: F) {
    sweep_from(path, path.x0, ctl, sink)
}

/// [`sweep`] with the path restarted at `x0`.
pub fn sweep_from<F: FnMut(&Knot, &Rates)>(path: &EventPath, x0: f64, ctl: &Controls, mut sink: F) {
    let delta = path.drift;
    let mut t = 0.0;
    let mut x = x0;
    let mut z = x0;
    let (mut l, mut r_drift, mut r_jump) = (0.0, 0.0, 0.0);
    let mut r_init = 0.0;
    let mut dl0 = 0.0;
    if ctl.floor && z < 0.0 {
        r_init = -z;
        z = 0.0;
    }
    if let Some(rf) = ctl.refraction {
        if rf.alpha.is_infinite() && z > rf.level {
            dl0 = z - rf.level;
            l = dl0;
            z = rf.level;
        }
    }
    let mut knot = Knot {
        t,
        kind: KnotKind::Start,
        x,
        z_left: x0,
        z,
        l,
        r: r_init,
        r_drift,
        r_jump,
        dr: r_init,
        dl: dl0,
    };
    let mut next_jump = 0;
    loop {
        let m = motion_at(z, delta, ctl);
        sink(&knot, &m.rates);
        let (t_next, is_jump) = match path.jumps.get(next_jump) {
            Some(j) if j.time <= path.horizon => (j.time, true),
            _ => (path.horizon, false),
        };
        if let Some(target) = m.target {
            let t_hit = t + (target - z) / m.rates.z;
            if t_hit < t_next {
                let dt = t_hit - t;
                x += delta * dt;
                l += m.rates.l * dt;
                r_drift += m.rates.r * dt;
                t = t_hit;
                z = target;
                knot = Knot {
                    t,
                    kind: KnotKind::Level,
                    x,
                    z_left: z,
                    z,
                    l,
                    r: r_init + r_drift + r_jump,
                    r_drift,
                    r_jump,
                    dr: 0.0,
                    dl: 0.0,
                };
                continue;
            }
        }
        let dt = t_next - t;
        x += delta * dt;
        l += m.rates.l * dt;
        r_drift += m.rates.r * dt;
        z += m.rates.z * dt;
        if let Some(target) = m.target {
            if (m.rates.z > 0.0 && z > target) || (m.rates.z < 0.0 && z < target) {
                z = target;
            }
        }
        t = t_next;
        if !is_jump {
            knot = Knot {
                t,
                kind: KnotKind::Horizon,
                x,
                z_left: z,
                z,
                l,
                r: r_init + r_drift + r_jump,
                r_drift,
                r_jump,
                dr: 0.0,
                dl: 0.0,
            };
            sink(&knot, &Rates::default());
            return;
        }
        let size = path.jumps[next_jump].size;
        next_jump += 1;
        let z_left = z;
        x += size;
        z += size;
        let (mut dr, mut dl) = (0.0, 0.0);
        if ctl.floor && z < 0.0 {
            dr = -z;
            r_jump += dr;
            z = 0.0;
        }
        if let Some(rf) = ctl.refraction {
            if rf.alpha.is_infinite() && z > rf.level {
                dl = z - rf.level;
                l += dl;
                z = rf.level;
            }
        }
        knot = Knot { t, kind: KnotKind::Jump, x, z_left, z, l, r: r_init + r_drift + r_jump, r_drift, r_jump, dr, dl };
    }
}

pub fn run(path: &EventPath, ctl: &Controls) -> Trajectory {
    let mut knots = Vec::with_capacity(2 * path.jumps.len() + 2);
    let mut rates = Vec::with_capacity(2 * path.jumps.len() + 2);
    sweep(path, ctl, |k, r| {
        knots.push(*k);
        rates.push(*r);
    });
    Trajectory { knots, rates, horizon: path.horizon, drift: path.drift }
}

/// Reflection at 0 from below and the three-part decomposition of the
/// running infimum `I_t = inf_{s≤t}(x_s ∧ 0)`, evaluated at every knot.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorDecomposition {
    pub times: Vec<f64>,
    /// `x̌_t = x_t - I_t`.
    pub reflected: Vec<f64>,
    pub infimum: Vec<f64>,
    /// `δ ∫_0^t 1{x̌_s = 0} ds` (zero when δ ≥ 0).
    pub boundary_integral: Vec<f64>,
    /// `x_0 ∧ 0`.
    pub initial_part: f64,
    /// `Σ_{s ≤ t} (x̌_{s-} + Δx_s) ∧ 0`.
    pub jump_sum: Vec<f64>,
}

impl FloorDecomposition {
    fn from_trajectory(tr: &Trajectory) -> Self {
        let n = tr.knots.len();
        let mut d = FloorDecomposition {
            times: Vec::with_capacity(n),
            reflected: Vec::with_capacity(n),
            infimum: Vec::with_capacity(n),
            boundary_integral: Vec::with_capacity(n),
            initial_part: -tr.knots[0].dr,
            jump_sum: Vec::with_capacity(n),
        };
        for k in &tr.knots {
            d.times.push(k.t);
            d.reflected.push(k.z);
            d.infimum.push(-k.r);
            d.boundary_integral.push(-k.r_drift);
            d.jump_sum.push(-k.r_jump);
        }
        d
    }

    /// `boundary + initial + jumps` at knot `i`.
    pub fn component_sum(&self, i: usize) -> f64 {
        self.boundary_integral[i] + self.initial_part + self.jump_sum[i]
    }
}

/// Reflects the raw path at 0.
pub fn running_floor_reflection(path: &EventPath) -> (Trajectory, FloorDecomposition) {
    let tr = run(path, &Controls { refraction: None, floor: true, watch_zero: false });
    let d = FloorDecomposition::from_trajectory(&tr);
    (tr, d)
}

/// Decomposition of the running infimum of `path` re-driven at drift `delta`.
pub fn infimum_decomposition(path: &EventPath, delta: f64) -> FloorDecomposition {
    running_floor_reflection(&path.with_drift(delta)).1
}

/// Refracted path `Y = X - ∫ h(Y) ds` (no floor).
#[derive(Debug, Clone, PartialEq)]
pub struct RefractedPath {
    pub barrier: f64,
    pub alpha: f64,
    pub trajectory: Trajectory,
}

impl RefractedPath {
    /// Times where the state arrives at the barrier by drift.
    pub fn crossing_times(&self) -> Vec<f64> {
        self.trajectory
            .knots
            .iter()
            .filter(|k| k.kind == KnotKind::Level && k.z == self.barrier)
            .map(|k| k.t)
            .collect()
    }
}

pub fn refract_exact(path: &EventPath, b: f64, alpha: f64, case: CaseLabel) -> RefractedPath {
    let ctl = Controls { refraction: Some(Refraction::new(b, alpha, case)), floor: false, watch_zero: true };
    RefractedPath { barrier: b, alpha, trajectory: run(path, &ctl) }
}

/// Refracted-reflected path at `b ≥ 0`, with the decomposition of its
/// injection process.
pub fn refracted_reflected_exact(
    path: &EventPath,
    b: f64,
    alpha: f64,
    case: CaseLabel,
) -> Result<(Trajectory, FloorDecomposition)> {
    if !(b >= 0.0) {
        return Err(Error::InvalidBarrier(b));
    }
    let ctl = Controls { refraction: Some(Refraction::new(b, alpha, case)), floor: true, watch_zero: false };
    let tr = run(path, &ctl);
    let d = FloorDecomposition::from_trajectory(&tr);
    Ok((tr, d))
}
