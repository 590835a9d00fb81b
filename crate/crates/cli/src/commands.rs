//! Subcommand orchestration.

use crate::config::{round12, ExperimentConfig, GridSpec};
use crate::error::CliError;
use crate::output::{OutputSet, RunManifest};
use crate::plot::{Marker, Plot, Series, Stroke};
use levy_refract::estimation::{find_bstar, nu_curve, value_curves, BstarReport, Coupling, NuCurve, SimSettings, ValueCurve, ValueMethod};
use levy_refract::levy_model::{classify_case, reference_model, sample_event_path, sample_grid_into, validate_spec};
use levy_refract::properties::{alpha_ladder_run, char_function_check, negative_controls, path_suite_run, PathSuite};
use levy_refract::strategy::{apply_strategy_exact, euler_trajectory, ControlledTrajectory};
use levy_refract::{Engine, Purpose, RngStream, StrategyParams};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    SamplePath,
    NuCurve,
    Bstar,
    ValueCurve,
    AlphaConvergence,
    CheckProperties,
    ReproducePaper,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::SamplePath => "sample-path",
            Command::NuCurve => "nu-curve",
            Command::Bstar => "bstar",
            Command::ValueCurve => "value-curve",
            Command::AlphaConvergence => "alpha-convergence",
            Command::CheckProperties => "check-properties",
            Command::ReproducePaper => "reproduce-paper",
        }
    }
}

/// Path count and Euler steps of the reduced-cost preset.
pub const DESK_PATHS: usize = 10_000;
pub const DESK_STEPS: usize = 2_000;

/// Result of a successful run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Human-readable lines for the terminal.
    pub summary: Vec<String>,
    /// A property or consistency check reported a failure.
    pub checks_failed: bool,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: OutputSet,
    summary: Vec<String>,
    failed: bool,
}

/// Runs `cmd` and writes its outputs to `out_dir`; on error every file
/// written by the run is removed.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let out = OutputSet::create(out_dir)?;
    let mut ctx = Ctx { cfg, out, summary: Vec::new(), failed: false };
    let result = match cmd {
        Command::Validate => validate(&mut ctx),
        Command::SamplePath => sample_path(&mut ctx),
        Command::NuCurve => nu_curve_cmd(&mut ctx),
        Command::Bstar => bstar_cmd(&mut ctx),
        Command::ValueCurve => value_curve_cmd(&mut ctx),
        Command::AlphaConvergence => alpha_convergence(&mut ctx),
        Command::CheckProperties => check_properties(&mut ctx),
        Command::ReproducePaper => reproduce(&mut ctx),
    };
    if let Err(e) = result {
        ctx.out.rollback();
        return Err(e);
    }
    let manifest = RunManifest {
        command: cmd.name().to_string(),
        config_hash: cfg.hash.clone(),
        seed: cfg.seed,
        engine: if cmd == Command::ReproducePaper { "exact+euler".to_string() } else { cfg.engine().name().to_string() },
        paths: cfg.paths,
        version: env!("CARGO_PKG_VERSION").to_string(),
        files: Vec::new(),
    };
    let manifest = ctx.out.commit(manifest)?;
    Ok(RunOutcome { manifest, summary: ctx.summary, checks_failed: ctx.failed })
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

#[derive(Serialize)]
struct ValidationOut {
    case: String,
    sticky_at_barrier: bool,
    gamma: f64,
    linear_drift: f64,
    sigma: f64,
    total_jump_rate: f64,
    negative_jump_mean: f64,
    engine: String,
    config_hash: String,
}

fn validate(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let rep = validate_spec(&cfg.spec).map_err(|e| CliError::from_core("model", e))?;
    let label = classify_case(&cfg.spec, cfg.params.alpha);
    let v = ValidationOut {
        case: format!("{:?}", label.case),
        sticky_at_barrier: label.is_sticky(),
        gamma: cfg.spec.gamma,
        linear_drift: rep.linear_drift,
        sigma: cfg.spec.sigma,
        total_jump_rate: rep.total_jump_rate,
        negative_jump_mean: rep.negative_jump_mean,
        engine: cfg.engine().name().to_string(),
        config_hash: cfg.hash.clone(),
    };
    ctx.out.write("validation.json", &json(&v))?;
    ctx.summary.push(format!("config valid: {} (linear drift {}, engine {})", v.case, v.linear_drift, v.engine));
    Ok(())
}

fn trajectory_plot(tr: &ControlledTrajectory, b: f64) -> Plot {
    let line = |v: &[f64]| tr.t.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
    Plot {
        title: format!("Controlled surplus, barrier {b}"),
        x_label: "t".into(),
        y_label: "state".into(),
        series: vec![
            Series { label: "Z".into(), points: line(&tr.z), stroke: Stroke::Solid },
            Series { label: "L".into(), points: line(&tr.l), stroke: Stroke::Dotted },
            Series { label: "R".into(), points: line(&tr.r), stroke: Stroke::Dotted },
        ],
        markers: Vec::new(),
        reference: Some(b),
    }
}

fn sample_path(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let stream = RngStream::new(cfg.seed, Purpose::Paths, 0);
    let params = cfg.params;
    let tr = match cfg.engine() {
        Engine::Exact => {
            let path = sample_event_path(&cfg.spec, cfg.horizon, stream)?;
            ctx.out.write_with("path.csv", |w| path.write_csv(w))?;
            ControlledTrajectory::from_exact(&apply_strategy_exact(&path, &params)?)
        }
        Engine::Euler { steps } => {
            let mut xs = Vec::with_capacity(steps + 1);
            sample_grid_into(&cfg.spec, cfg.horizon, steps, stream, &mut xs);
            let dt = cfg.horizon / steps as f64;
            ctx.out.write_with("path.csv", |w| {
                writeln!(w, "time,value")?;
                for (k, x) in xs.iter().enumerate() {
                    writeln!(w, "{},{}", k as f64 * dt, x)?;
                }
                Ok(())
            })?;
            params.validate()?;
            euler_trajectory(&xs, dt, &params)
        }
    };
    ctx.out.write_with("trajectory.csv", |w| tr.write_csv(w))?;
    ctx.out.write("trajectory.svg", trajectory_plot(&tr, params.b).to_svg().as_bytes())?;
    ctx.summary.push(format!("sampled one path with {} points at barrier {}", tr.len(), params.b));
    Ok(())
}

fn write_nu_csv(out: &mut OutputSet, name: &str, curve: Option<&NuCurve>) -> Result<(), CliError> {
    out.write_with(name, |w| {
        writeln!(w, "b,nu,se")?;
        if let Some(c) = curve {
            for i in 0..c.grid.len() {
                writeln!(w, "{},{},{}", c.grid[i], c.nu[i], c.std_error[i])?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

fn nu_plot(curve: &NuCurve, beta: f64, bstar: Option<&BstarReport>, title: &str) -> Plot {
    let markers = bstar
        .map(|r| {
            let i = curve.grid.iter().position(|&b| b == r.b_star).unwrap_or(0);
            vec![Marker { label: format!("b* = {}", r.b_star), at: (r.b_star, curve.nu[i]) }]
        })
        .unwrap_or_default();
    Plot {
        title: title.to_string(),
        x_label: "b".into(),
        y_label: "nu(b)".into(),
        series: vec![Series { label: "nu".into(), points: curve.grid.iter().copied().zip(curve.nu.iter().copied()).collect(), stroke: Stroke::Solid }],
        markers,
        reference: Some(1.0 / beta),
    }
}

fn nu_curve_cmd(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let grid = cfg.b_grid()?;
    if grid.is_empty() {
        write_nu_csv(&mut ctx.out, "nu_curve.csv", None)?;
        ctx.summary.push("empty barrier grid: header-only table".into());
        return Ok(());
    }
    let curve = nu_curve(&cfg.spec, &cfg.params, &grid, &cfg.sim(), cfg.coupling())?;
    let report = levy_refract::estimation::bstar_from_curve(curve.clone(), cfg.params.beta).ok();
    write_nu_csv(&mut ctx.out, "nu_curve.csv", Some(&curve))?;
    ctx.out.write("nu_curve.svg", nu_plot(&curve, cfg.params.beta, report.as_ref(), "nu(b)").to_svg().as_bytes())?;
    ctx.summary.push(match &report {
        Some(r) => format!("nu-curve on {} barriers; beta*nu crosses 1 at b = {}", grid.len(), r.b_star),
        None => format!("nu-curve on {} barriers; beta*nu stays at or above 1", grid.len()),
    });
    Ok(())
}

#[derive(Serialize)]
struct BstarOut {
    b_star: f64,
    interval_low: f64,
    interval_high: f64,
    n: usize,
    seed: u64,
}

fn bstar_json(r: &BstarReport, seed: u64) -> Vec<u8> {
    json(&BstarOut { b_star: r.b_star, interval_low: r.interval_low, interval_high: r.interval_high, n: r.curve.n, seed })
}

fn bstar_cmd(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let grid = cfg.b_grid()?;
    let r = find_bstar(&cfg.spec, &cfg.params, &grid, &cfg.sim(), cfg.coupling())?;
    write_nu_csv(&mut ctx.out, "nu_curve.csv", Some(&r.curve))?;
    ctx.out.write("nu_curve.svg", nu_plot(&r.curve, cfg.params.beta, Some(&r), "nu(b)").to_svg().as_bytes())?;
    ctx.out.write("bstar.json", &bstar_json(&r, cfg.seed))?;
    ctx.summary.push(format!("b* = {} (band [{}, {}], N = {}, seed {})", r.b_star, r.interval_low, r.interval_high, r.curve.n, cfg.seed));
    Ok(())
}

/// Barriers `b*·i/3` for `i = 1..=5`, rounded up to two decimals (the middle
/// one is `b*` itself).
pub fn barrier_family(b_star: f64) -> Vec<f64> {
    (1..=5).map(|i| if i == 3 { b_star } else { round12((b_star * i as f64 / 3.0 * 100.0 - 1e-9).ceil() / 100.0) }).collect()
}

fn write_value_csv(out: &mut OutputSet, name: &str, curves: &[ValueCurve]) -> Result<(), CliError> {
    out.write_with(name, |w| {
        writeln!(w, "x,b,v,se,method")?;
        for c in curves {
            for (x, e) in c.xs.iter().zip(&c.v) {
                writeln!(w, "{},{},{},{},{}", x, c.b, e.mean, e.std_error, c.method.name())?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let j = xs.windows(2).position(|w| w[0] <= x && x <= w[1])?;
    let t = (x - xs[j]) / (xs[j + 1] - xs[j]);
    Some(ys[j] + t * (ys[j + 1] - ys[j]))
}

fn value_plot(curves: &[ValueCurve], highlight: Option<f64>, title: &str) -> Plot {
    let mut series = Vec::new();
    let mut markers = Vec::new();
    for c in curves {
        let ys = c.means();
        let solid = highlight == Some(c.b);
        series.push(Series {
            label: if solid { format!("b* = {}", c.b) } else { format!("b = {}", c.b) },
            points: c.xs.iter().copied().zip(ys.iter().copied()).collect(),
            stroke: if solid { Stroke::Solid } else { Stroke::Dotted },
        });
        if let Some(y) = interpolate(&c.xs, &ys, c.b) {
            markers.push(Marker { label: String::new(), at: (c.b, y) });
        }
    }
    Plot { title: title.to_string(), x_label: "x".into(), y_label: "v_b(x)".into(), series, markers, reference: None }
}

fn value_curve_cmd(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let xs = cfg.x_grid()?;
    let (barriers, highlight) = match &cfg.task.barriers {
        Some(b) => (b.clone(), cfg.task.barriers.as_ref().and_then(|v| v.iter().copied().find(|&b| b == cfg.params.b))),
        None => {
            let r = find_bstar(&cfg.spec, &cfg.params, &cfg.b_grid()?, &cfg.sim(), cfg.coupling())?;
            ctx.summary.push(format!("b* = {} from the barrier grid", r.b_star));
            (barrier_family(r.b_star), Some(r.b_star))
        }
    };
    if xs.is_empty() || barriers.is_empty() {
        write_value_csv(&mut ctx.out, "value_curve.csv", &[])?;
        ctx.summary.push("empty grid: header-only table".into());
        return Ok(());
    }
    let curves = value_curves(&cfg.spec, &cfg.params, &barriers, &xs, &cfg.sim(), cfg.value_method())?;
    write_value_csv(&mut ctx.out, "value_curve.csv", &curves)?;
    ctx.out.write("value_curve.svg", value_plot(&curves, highlight, "v_b(x)").to_svg().as_bytes())?;
    ctx.summary.push(format!("{} value curves on {} starting points ({})", curves.len(), xs.len(), cfg.value_method().name()));
    Ok(())
}

/// Default ladder of dividend-rate caps.
pub const DEFAULT_LADDER: [f64; 5] = [0.5, 2.0, 8.0, 32.0, f64::INFINITY];

fn alpha_convergence(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let alphas = cfg.task.alphas.clone().unwrap_or_else(|| DEFAULT_LADDER.to_vec());
    let xs = cfg.x_grid()?;
    let barriers = if cfg.task.optimal_barriers.unwrap_or(false) {
        let grid = cfg.b_grid()?;
        alphas
            .iter()
            .map(|&a| find_bstar(&cfg.spec, &cfg.params.with_alpha(a), &grid, &cfg.sim(), Coupling::Common).map(|r| r.b_star))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        vec![cfg.params.b; alphas.len()]
    };
    let check_paths = cfg.task.property_paths.unwrap_or(100);
    let rep = alpha_ladder_run(&cfg.spec, &cfg.params, &alphas, Some(&barriers), &xs, &cfg.sim(), check_paths)?;
    ctx.out.write_with("alpha_ladder.csv", |w| {
        writeln!(w, "alpha,b,x,v,se")?;
        for (i, a) in rep.alphas.iter().enumerate() {
            for (j, x) in rep.xs.iter().enumerate() {
                let e = rep.values[j][i];
                writeln!(w, "{},{},{},{},{}", a, rep.barriers[i], x, e.mean, e.std_error)?;
            }
        }
        Ok(())
    })?;
    ctx.out.write_with("alpha_gaps.csv", |w| {
        writeln!(w, "alpha,mean_sup_gap")?;
        for (a, g) in rep.alphas.iter().zip(&rep.mean_sup_gap) {
            writeln!(w, "{a},{g}")?;
        }
        Ok(())
    })?;
    let monotone = rep.values_monotone();
    let d = rep.distances_to_top();
    let closer = alphas.len() < 3 || d.iter().all(|row| row[row.len() - 2] < row[0] || row[0] == 0.0);
    ctx.summary.push(format!("{} value ladder non-decreasing in alpha", if monotone { "PASS" } else { "FAIL" }));
    ctx.summary.push(format!("{} second-largest cap closer to the limit than the smallest", if closer { "PASS" } else { "FAIL" }));
    ctx.summary.extend(rep.log.summary_lines());
    ctx.failed |= !monotone || !closer || !rep.log.is_clean();
    Ok(())
}

/// Probe points of the characteristic-function check.
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

fn check_properties(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    if !cfg.spec.is_bounded_variation() {
        return Err(levy_refract::Error::EngineUnavailable { sigma: cfg.spec.sigma }.into());
    }
    let p = cfg.params;
    let x = cfg.task.x.unwrap_or(0.5 * p.b.max(1.0));
    let k = cfg.task.k.unwrap_or(0.0);
    let l = cfg.task.l.unwrap_or(if p.b > 0.0 { 0.5 * p.b } else { 0.5 });
    let alphas = cfg.task.alphas.clone().unwrap_or_else(|| DEFAULT_LADDER.to_vec());
    let suite = PathSuite { params: p, x, k, l, alphas: &alphas };
    let n = cfg.task.property_paths.unwrap_or(cfg.paths.min(1000));
    let log = path_suite_run(&cfg.spec, &suite, cfg.horizon, n, RngStream::new(cfg.seed, Purpose::Paths, 0))?;
    ctx.out.write_with("violations.csv", |w| log.write_csv(w))?;

    let lambdas = cfg.task.lambdas.clone().unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec());
    let t = cfg.task.char_time.unwrap_or(1.0);
    let probes = char_function_check(&cfg.spec, t, &lambdas, cfg.paths, RngStream::new(cfg.seed, Purpose::Marks, 0))?;
    ctx.out.write_with("char_function.csv", |w| {
        writeln!(w, "lambda,re,re_se,im,im_se,target_re,target_im,pass")?;
        for pr in &probes {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                pr.lambda,
                pr.empirical_re.mean,
                pr.empirical_re.std_error,
                pr.empirical_im.mean,
                pr.empirical_im.std_error,
                pr.target_re,
                pr.target_im,
                pr.passes()
            )?;
        }
        Ok(())
    })?;

    let controls = negative_controls();
    let mut lines = log.summary_lines();
    let char_ok = probes.iter().all(|p| p.passes());
    lines.push(format!("{} characteristic function at t = {t} ({} probes)", if char_ok { "PASS" } else { "FAIL" }, probes.len()));
    for c in &controls {
        lines.push(format!(
            "{} negative control `{}`: {} violations",
            if c.caught() { "PASS" } else { "FAIL" },
            c.name,
            c.log.violations.len()
        ));
    }
    let text = lines.join("\n") + "\n";
    ctx.out.write("properties.txt", text.as_bytes())?;
    ctx.failed |= !log.is_clean() || !char_ok || controls.iter().any(|c| !c.caught());
    ctx.summary.extend(lines);
    Ok(())
}

/// One experiment of `reproduce-paper`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCase {
    pub label: &'static str,
    pub gaussian: f64,
    pub grid_top: f64,
}

pub const REFERENCE_CASES: [ReferenceCase; 2] = [
    ReferenceCase { label: "case1", gaussian: 0.0, grid_top: 3.49 },
    ReferenceCase { label: "case2", gaussian: 1.0, grid_top: 3.99 },
];

/// Strategy parameters of both experiments.
pub const PAPER_PARAMS: StrategyParams = StrategyParams { b: 0.0, alpha: 0.5, beta: 1.5, q: 0.05 };
pub const PAPER_HORIZON: f64 = 100.0;
/// Paths of the value curves (each curve costs one walk per start).
pub const VALUE_PATHS_CAP: usize = 10_000;

fn reproduce(ctx: &mut Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    for case in &REFERENCE_CASES {
        let spec = reference_model(case.gaussian);
        let grid = GridSpec::Range { from: -1.0, to: case.grid_top, step: 0.01 }.values();
        let sim = SimSettings::auto(&spec, PAPER_HORIZON, cfg.steps, cfg.paths, cfg.seed);
        let r = find_bstar(&spec, &PAPER_PARAMS, &grid, &sim, Coupling::Common)?;
        let title = format!("{}: nu(b) with b* = {}", case.label, r.b_star);
        write_nu_csv(&mut ctx.out, &format!("{}_nu_curve.csv", case.label), Some(&r.curve))?;
        ctx.out.write(&format!("{}_nu_curve.svg", case.label), nu_plot(&r.curve, PAPER_PARAMS.beta, Some(&r), &title).to_svg().as_bytes())?;
        ctx.out.write(&format!("{}_bstar.json", case.label), &bstar_json(&r, cfg.seed))?;
        ctx.summary.push(format!(
            "{}: b* = {} (band [{}, {}], engine {}, N = {})",
            case.label,
            r.b_star,
            r.interval_low,
            r.interval_high,
            sim.engine.name(),
            sim.paths
        ));

        let barriers = barrier_family(r.b_star);
        let xs = GridSpec::Range { from: -1.0, to: case.grid_top, step: 0.25 }.values();
        let vsim = SimSettings { paths: sim.paths.min(VALUE_PATHS_CAP), ..sim };
        let curves = value_curves(&spec, &PAPER_PARAMS, &barriers, &xs, &vsim, ValueMethod::Direct)?;
        write_value_csv(&mut ctx.out, &format!("{}_value_curve.csv", case.label), &curves)?;
        let title = format!("{}: v_b(x), b = b*/3 .. 5b*/3", case.label);
        ctx.out.write(&format!("{}_value_curve.svg", case.label), value_plot(&curves, Some(r.b_star), &title).to_svg().as_bytes())?;
        let best = &curves[2];
        let dominated = curves.iter().all(|c| {
            c.v.iter().zip(&best.v).all(|(o, s)| s.mean >= o.mean - 3.0 * s.std_error.hypot(o.std_error))
        });
        ctx.summary.push(format!(
            "{} {}: v at b* dominates the other barriers within 3 SE",
            if dominated { "PASS" } else { "FAIL" },
            case.label
        ));
        ctx.failed |= !dominated;
    }
    Ok(())
}
