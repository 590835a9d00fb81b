//! Experiment configuration: a TOML document with the blocks `[model]`,
//! `[control]`, `[grid]`, `[mc]` and `[task]`.
//!
//! ```toml
//! [model]
//! drift = 0.6            # or `gamma`, the truncated-drift coefficient
//! sigma = 0.0
//! x0 = 0.0
//! jumps = [
//!   { rate = 1.0, sign = "up", dist = "uniform", params = [0.0, 1.0] },
//!   { rate = 1.0, sign = "down", dist = "weibull", params = [2.0, 1.0] },
//! ]
//!
//! [control]
//! alpha = 0.5            # `inf` for the double-barrier limit
//! beta = 1.5
//! q = 0.05
//! b = 1.66               # barrier for sample-path / value-curve
//!
//! [grid]
//! T = 100.0
//! K = 10000              # Euler steps
//! engine = "auto"        # auto | exact | euler
//!
//! [mc]
//! N = 100000
//! seed = 42
//!
//! [task]
//! b_grid = { from = -1.0, to = 3.49, step = 0.01 }
//! x_grid = [0.0, 0.5, 1.0]
//! ```

use crate::error::CliError;
use levy_refract::estimation::{Coupling, SimSettings, ValueMethod};
use levy_refract::levy_model::validate_spec;
use levy_refract::{Engine, JumpComponent, JumpDiffusionSpec, MarkDistribution, Sign, StrategyParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJump {
    rate: f64,
    sign: String,
    dist: String,
    #[serde(default)]
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    gamma: Option<f64>,
    drift: Option<f64>,
    #[serde(default)]
    sigma: f64,
    #[serde(default)]
    x0: f64,
    #[serde(default)]
    jumps: Vec<RawJump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    alpha: f64,
    beta: f64,
    q: f64,
    b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(rename = "K", default = "default_steps")]
    steps: i64,
    #[serde(default = "default_engine")]
    engine: String,
}

fn default_steps() -> i64 {
    1000
}

fn default_engine() -> String {
    "auto".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    #[serde(rename = "N")]
    paths: i64,
    seed: Option<u64>,
}

/// A grid given either as an explicit list or as an arithmetic range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Range { from: f64, to: f64, step: f64 },
}

impl GridSpec {
    /// Grid values; range points are rounded to 12 decimals so that, e.g.,
    /// `-1 + 270·0.01` reads as `1.7`.
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Range { from, to, step } => {
                if !(*step > 0.0) || to < from {
                    return Vec::new();
                }
                let n = ((to - from) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| round12(from + i as f64 * step)).collect()
            }
        }
    }
}

pub fn round12(v: f64) -> f64 {
    let r = (v * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Barriers of the ν-curve / b* search.
    pub b_grid: Option<GridSpec>,
    /// Starting points of value curves.
    pub x_grid: Option<GridSpec>,
    /// Barriers of value curves; defaults to `b*·i/3`, `i = 1..=5`.
    pub barriers: Option<Vec<f64>>,
    /// Dividend-rate caps for `alpha-convergence` (ascending; `inf` allowed).
    pub alphas: Option<Vec<f64>>,
    /// `common` (default) or `independent`.
    pub coupling: Option<String>,
    /// `direct` (default) or `spliced`.
    pub value_method: Option<String>,
    /// Use each rung's own optimal barrier in `alpha-convergence`.
    pub optimal_barriers: Option<bool>,
    /// Start and offsets of the coupled pair in `check-properties`.
    pub x: Option<f64>,
    pub k: Option<f64>,
    pub l: Option<f64>,
    /// Paths per pathwise property check.
    pub property_paths: Option<usize>,
    /// Probe points and time of the characteristic-function check.
    pub lambdas: Option<Vec<f64>>,
    pub char_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    control: RawControl,
    grid: RawGrid,
    mc: RawMc,
    #[serde(default)]
    task: TaskConfig,
}

/// Engine selection of the `[grid]` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EngineChoice {
    Auto,
    Exact,
    Euler,
}

/// A parsed and validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub spec: JumpDiffusionSpec,
    pub params: StrategyParams,
    pub horizon: f64,
    pub steps: usize,
    pub engine: EngineChoice,
    pub paths: usize,
    pub seed: u64,
    pub task: TaskConfig,
    /// SHA-256 of the canonical JSON form (independent of key order).
    pub hash: String,
}

fn field(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Validation { field: field.to_string(), reason: reason.into() }
}

fn marks(dist: &str, p: &[f64], at: &str) -> Result<MarkDistribution, CliError> {
    let need = |n: usize| {
        if p.len() == n {
            Ok(())
        } else {
            Err(field(at, format!("{dist} takes {n} parameters, got {}", p.len())))
        }
    };
    Ok(match dist {
        "uniform" => {
            need(2)?;
            MarkDistribution::Uniform { lo: p[0], hi: p[1] }
        }
        "exponential" => {
            need(1)?;
            MarkDistribution::Exponential { rate: p[0] }
        }
        "weibull" => {
            need(2)?;
            MarkDistribution::Weibull { shape: p[0], scale: p[1] }
        }
        "point" => {
            need(1)?;
            MarkDistribution::PointMass { at: p[0] }
        }
        "hyperexponential" => {
            if p.is_empty() || p.len() % 2 != 0 {
                return Err(field(at, "hyperexponential takes weight, rate pairs"));
            }
            MarkDistribution::HyperExponential {
                weights: p.iter().step_by(2).copied().collect(),
                rates: p.iter().skip(1).step_by(2).copied().collect(),
            }
        }
        other => return Err(field(at, format!("unknown distribution `{other}`"))),
    })
}

fn check_increasing(name: &str, v: &[f64]) -> Result<(), CliError> {
    if v.iter().any(|x| x.is_nan()) || v.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(field(name, "grid must be strictly increasing"));
    }
    Ok(())
}

pub fn load_config_str(text: &str) -> Result<ExperimentConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    let jumps = raw
        .model
        .jumps
        .iter()
        .enumerate()
        .map(|(i, j)| {
            let at = format!("model.jumps[{i}]");
            let sign = match j.sign.as_str() {
                "up" | "+" => Sign::Up,
                "down" | "-" => Sign::Down,
                s => return Err(field(&format!("{at}.sign"), format!("expected up or down, got `{s}`"))),
            };
            Ok(JumpComponent { rate: j.rate, sign, marks: marks(&j.dist, &j.params, &format!("{at}.params"))? })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let spec = match (raw.model.gamma, raw.model.drift) {
        (Some(g), None) => JumpDiffusionSpec { gamma: g, sigma: raw.model.sigma, jump_components: jumps, x0: raw.model.x0 },
        (None, Some(d)) => JumpDiffusionSpec::from_linear_drift(d, raw.model.sigma, jumps, raw.model.x0),
        _ => return Err(field("model.drift", "give exactly one of `gamma` or `drift`")),
    };
    validate_spec(&spec).map_err(|e| CliError::from_core("model", e))?;

    let params = StrategyParams { b: raw.control.b.unwrap_or(0.0), alpha: raw.control.alpha, beta: raw.control.beta, q: raw.control.q };
    params.validate().map_err(|e| CliError::from_core("control", e))?;

    if !(raw.grid.horizon.is_finite() && raw.grid.horizon > 0.0) {
        return Err(field("grid.T", "must be a finite positive number"));
    }
    if raw.grid.steps < 1 {
        return Err(field("grid.K", "need at least one step"));
    }
    let engine = match raw.grid.engine.as_str() {
        "auto" => EngineChoice::Auto,
        "exact" => EngineChoice::Exact,
        "euler" => EngineChoice::Euler,
        e => return Err(field("grid.engine", format!("expected auto, exact or euler, got `{e}`"))),
    };
    if engine == EngineChoice::Exact && spec.sigma > 0.0 {
        return Err(field("grid.engine", "the exact engine needs sigma = 0"));
    }
    if raw.mc.paths < 1 {
        return Err(field("mc.N", "need at least one path"));
    }
    let seed = raw.mc.seed.ok_or_else(|| field("mc.seed", "a seed is required"))?;

    let task = raw.task.clone();
    if let Some(g) = &task.b_grid {
        check_increasing("task.b_grid", &g.values())?;
    }
    if let Some(g) = &task.x_grid {
        check_increasing("task.x_grid", &g.values())?;
    }
    if let Some(a) = &task.alphas {
        if a.is_empty() || a.iter().any(|v| !(*v > 0.0)) {
            return Err(field("task.alphas", "caps must be positive"));
        }
        check_increasing("task.alphas", a)?;
    }
    if let Some(c) = &task.coupling {
        parse_coupling(c)?;
    }
    if let Some(m) = &task.value_method {
        parse_method(m)?;
    }

    let mut cfg = ExperimentConfig {
        spec,
        params,
        horizon: raw.grid.horizon,
        steps: raw.grid.steps as usize,
        engine,
        paths: raw.mc.paths as usize,
        seed,
        task,
        hash: String::new(),
    };
    cfg.hash = cfg.digest();
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    load_config_str(&text)
}

/// Inserts a default seed when the document has none (used by `--seed`).
pub fn load_config_str_with_seed(text: &str, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    match load_config_str(text) {
        Err(CliError::Validation { field, .. }) if field == "mc.seed" && seed.is_some() => {
            let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
            if let Some(toml::Value::Table(mc)) = doc.get_mut("mc") {
                mc.insert("seed".into(), toml::Value::Integer(seed.unwrap_or(0) as i64));
            }
            let mut cfg = load_config_str(&toml::to_string(&doc).map_err(|e| CliError::Parse(e.to_string()))?)?;
            cfg.set_seed(seed.unwrap_or(0));
            Ok(cfg)
        }
        Ok(mut cfg) => {
            if let Some(s) = seed {
                cfg.set_seed(s);
            }
            Ok(cfg)
        }
        Err(e) => Err(e),
    }
}

pub fn parse_coupling(s: &str) -> Result<Coupling, CliError> {
    match s {
        "common" => Ok(Coupling::Common),
        "independent" => Ok(Coupling::Independent),
        _ => Err(field("task.coupling", format!("expected common or independent, got `{s}`"))),
    }
}

pub fn parse_method(s: &str) -> Result<ValueMethod, CliError> {
    match s {
        "direct" => Ok(ValueMethod::Direct),
        "spliced" => Ok(ValueMethod::Spliced),
        _ => Err(field("task.value_method", format!("expected direct or spliced, got `{s}`"))),
    }
}

impl ExperimentConfig {
    fn digest(&self) -> String {
        let mut copy = self.clone();
        copy.hash.clear();
        let json = serde_json::to_string(&copy).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.hash = self.digest();
    }

    /// Sets the path count and Euler step count (used by `--desk-scale`).
    pub fn set_scale(&mut self, paths: usize, steps: usize) {
        self.paths = paths;
        self.steps = steps;
        self.hash = self.digest();
    }

    pub fn engine(&self) -> Engine {
        match self.engine {
            EngineChoice::Exact => Engine::Exact,
            EngineChoice::Euler => Engine::Euler { steps: self.steps },
            EngineChoice::Auto if self.spec.is_bounded_variation() => Engine::Exact,
            EngineChoice::Auto => Engine::Euler { steps: self.steps },
        }
    }

    pub fn sim(&self) -> SimSettings {
        SimSettings { horizon: self.horizon, engine: self.engine(), paths: self.paths, seed: self.seed }
    }

    pub fn coupling(&self) -> Coupling {
        self.task.coupling.as_deref().map_or(Coupling::Common, |c| parse_coupling(c).expect("validated"))
    }

    pub fn value_method(&self) -> ValueMethod {
        self.task.value_method.as_deref().map_or(ValueMethod::Direct, |m| parse_method(m).expect("validated"))
    }

    pub fn b_grid(&self) -> Result<Vec<f64>, CliError> {
        self.task.b_grid.as_ref().map(GridSpec::values).ok_or_else(|| field("task.b_grid", "required for this command"))
    }

    pub fn x_grid(&self) -> Result<Vec<f64>, CliError> {
        self.task.x_grid.as_ref().map(GridSpec::values).ok_or_else(|| field("task.x_grid", "required for this command"))
    }
}
