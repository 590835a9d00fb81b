//! The driving Lévy process: a Gaussian part, a linear drift and a finite
//! collection of compound-Poisson jump components with signed marks.

use crate::error::{Error, Result};
use crate::path_engine::{EventPath, Jump};
use crate::quadrature;
use crate::rng::RngStream;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr};

const QUAD_TOL: f64 = 1e-10;

/// Direction of a jump component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Up,
    Down,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Up => 1.0,
            Sign::Down => -1.0,
        }
    }
}

/// Law of the (unsigned) jump size. All laws live on `(0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MarkDistribution {
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    /// Mixture of exponentials; `weights` are normalised to mixture
    /// probabilities, `rates` must be strictly increasing.
    HyperExponential { weights: Vec<f64>, rates: Vec<f64> },
    PointMass { at: f64 },
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be a finite positive number, got {v}")))
    }
}

impl MarkDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            MarkDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo < hi) {
                    return Err(Error::invalid("params", format!("uniform needs 0 <= lo < hi, got ({lo}, {hi})")));
                }
                Ok(())
            }
            MarkDistribution::Exponential { rate } => positive("params.rate", *rate),
            MarkDistribution::Weibull { shape, scale } => {
                positive("params.shape", *shape)?;
                positive("params.scale", *scale)
            }
            MarkDistribution::HyperExponential { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return Err(Error::invalid("params", "hyper-exponential needs equally many weights and rates"));
                }
                for w in weights {
                    positive("params.weights", *w)?;
                }
                for r in rates {
                    positive("params.rates", *r)?;
                }
                if rates.windows(2).any(|p| p[0] >= p[1]) {
                    return Err(Error::invalid("params.rates", "hyper-exponential rates must be strictly increasing"));
                }
                Ok(())
            }
            MarkDistribution::PointMass { at } => positive("params.at", *at),
        }
    }

    fn mixture(weights: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let total: f64 = weights.iter().sum();
        weights.iter().map(move |w| w / total)
    }

    /// Inverse-CDF sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            MarkDistribution::Uniform { lo, hi } => {
                let u: f64 = Open01.sample(rng);
                lo + (hi - lo) * u
            }
            MarkDistribution::Exponential { rate } => {
                let u: f64 = Open01.sample(rng);
                -u.ln() / rate
            }
            MarkDistribution::Weibull { shape, scale } => {
                let u: f64 = Open01.sample(rng);
                scale * (-u.ln()).powf(1.0 / shape)
            }
            MarkDistribution::HyperExponential { weights, rates } => {
                let pick: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = rates[rates.len() - 1];
                for (p, r) in Self::mixture(weights).zip(rates) {
                    acc += p;
                    if pick < acc {
                        chosen = *r;
                        break;
                    }
                }
                let u: f64 = Open01.sample(rng);
                -u.ln() / chosen
            }
            MarkDistribution::PointMass { at } => *at,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            MarkDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            MarkDistribution::Exponential { rate } => 1.0 / rate,
            MarkDistribution::Weibull { shape, scale } => scale * gamma(1.0 + 1.0 / shape),
            MarkDistribution::HyperExponential { weights, rates } => {
                Self::mixture(weights).zip(rates).map(|(p, r)| p / r).sum()
            }
            MarkDistribution::PointMass { at } => *at,
        }
    }

    /// `E[M 1{M < 1}]`, the part of the mean compensated in the truncated drift.
    pub fn truncated_mean_below_one(&self) -> f64 {
        fn exp_part(rate: f64) -> f64 {
            (1.0 - (-rate).exp() * (1.0 + rate)) / rate
        }
        match self {
            MarkDistribution::Uniform { lo, hi } => {
                if *lo >= 1.0 {
                    0.0
                } else {
                    let top = hi.min(1.0);
                    (top * top - lo * lo) / (2.0 * (hi - lo))
                }
            }
            MarkDistribution::Exponential { rate } => exp_part(*rate),
            MarkDistribution::Weibull { shape, scale } => {
                let s = 1.0 + 1.0 / shape;
                let cut = (1.0 / scale).powf(*shape);
                scale * gamma(s) * gamma_lr(s, cut)
            }
            MarkDistribution::HyperExponential { weights, rates } => {
                Self::mixture(weights).zip(rates).map(|(p, r)| p * exp_part(*r)).sum()
            }
            MarkDistribution::PointMass { at } => {
                if *at < 1.0 {
                    *at
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            MarkDistribution::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            MarkDistribution::Exponential { rate } => 1.0 - (-rate * x).exp(),
            MarkDistribution::Weibull { shape, scale } => 1.0 - (-(x / scale).powf(*shape)).exp(),
            MarkDistribution::HyperExponential { weights, rates } => Self::mixture(weights)
                .zip(rates)
                .map(|(p, r)| p * (1.0 - (-r * x).exp()))
                .sum(),
            MarkDistribution::PointMass { at } => {
                if x >= *at {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `P(lo < M ≤ hi)`.
    pub fn prob_between(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        self.cdf(hi) - self.cdf(lo)
    }

    /// `E[M 1{lo < M ≤ hi}]` in closed form (`hi` may be infinite).
    pub fn partial_mean(&self, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(0.0);
        if hi <= lo {
            return 0.0;
        }
        fn exp_piece(r: f64, lo: f64, hi: f64) -> f64 {
            let upper = if hi.is_finite() { (hi + 1.0 / r) * (-r * hi).exp() } else { 0.0 };
            (lo + 1.0 / r) * (-r * lo).exp() - upper
        }
        match self {
            MarkDistribution::Uniform { lo: a, hi: b } => {
                let (u, l) = (hi.min(*b), lo.max(*a));
                if u <= l {
                    0.0
                } else {
                    (u * u - l * l) / (2.0 * (b - a))
                }
            }
            MarkDistribution::Exponential { rate } => exp_piece(*rate, lo, hi),
            MarkDistribution::Weibull { shape, scale } => {
                let s = 1.0 + 1.0 / shape;
                let p = |x: f64| {
                    if x <= 0.0 {
                        0.0
                    } else if x.is_finite() {
                        gamma_lr(s, (x / scale).powf(*shape))
                    } else {
                        1.0
                    }
                };
                scale * gamma(s) * (p(hi) - p(lo))
            }
            MarkDistribution::HyperExponential { weights, rates } => {
                Self::mixture(weights).zip(rates).map(|(p, r)| p * exp_piece(*r, lo, hi)).sum()
            }
            MarkDistribution::PointMass { at } => {
                if lo < *at && *at <= hi {
                    *at
                } else {
                    0.0
                }
            }
        }
    }

    /// `E[f(M)]`. Continuous laws are integrated numerically on their
    /// effective support; the point mass is evaluated directly.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        // Tail mass beyond the cut-off is below 1e-17.
        const TAIL: f64 = 39.2;
        match self {
            MarkDistribution::Uniform { lo, hi } => {
                let width = hi - lo;
                Ok(quadrature::integrate(|x| f(x) / width, *lo, *hi, QUAD_TOL)?)
            }
            MarkDistribution::Exponential { rate } => {
                let r = *rate;
                integrate_pieces(|x| f(x) * r * (-r * x).exp(), 1.0 / r, TAIL / r)
            }
            MarkDistribution::Weibull { shape, scale } => {
                let (k, lam) = (*shape, *scale);
                let upper = lam * TAIL.powf(1.0 / k);
                let density = move |x: f64| {
                    if x <= 0.0 {
                        return 0.0;
                    }
                    let z = x / lam;
                    k / lam * z.powf(k - 1.0) * (-z.powf(k)).exp()
                };
                integrate_pieces(|x| f(x) * density(x), lam, upper)
            }
            MarkDistribution::HyperExponential { weights, rates } => {
                let mut total = 0.0;
                for (p, r) in Self::mixture(weights).zip(rates) {
                    let r = *r;
                    total += p * integrate_pieces(|x| f(x) * r * (-r * x).exp(), 1.0 / r, TAIL / r)?;
                }
                Ok(total)
            }
            MarkDistribution::PointMass { at } => Ok(f(*at)),
        }
    }

    /// `E[exp(i u M)]`.
    pub fn char_fn(&self, u: f64) -> Result<Complex64> {
        let i = Complex64::i();
        Ok(match self {
            MarkDistribution::Uniform { lo, hi } => {
                if u == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    ((i * u * *hi).exp() - (i * u * *lo).exp()) / (i * u * (hi - lo))
                }
            }
            MarkDistribution::Exponential { rate } => Complex64::new(*rate, 0.0) / (Complex64::new(*rate, -u)),
            MarkDistribution::HyperExponential { weights, rates } => Self::mixture(weights)
                .zip(rates)
                .map(|(p, r)| p * Complex64::new(*r, 0.0) / Complex64::new(*r, -u))
                .sum(),
            MarkDistribution::PointMass { at } => (i * u * *at).exp(),
            MarkDistribution::Weibull { .. } => {
                let re = self.expect(|x| (u * x).cos())?;
                let im = self.expect(|x| (u * x).sin())?;
                Complex64::new(re, im)
            }
        })
    }
}

/// Integrates over `[0, upper]` on geometrically spaced pieces around the
/// natural scale of the law. A single Kronrod panel over the whole support
/// can miss features (kinks, indicator cut-offs) that sit between its nodes.
fn integrate_pieces<F: Fn(f64) -> f64>(f: F, scale: f64, upper: f64) -> Result<f64> {
    let mut cuts = vec![0.0];
    let mut c = scale * 1e-3;
    while c < upper {
        cuts.push(c);
        c *= if c < scale { 10.0 } else { 2.0 };
    }
    cuts.push(upper);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += quadrature::integrate(&f, w[0], w[1], QUAD_TOL)?;
    }
    Ok(total)
}

/// One compound-Poisson component of the jump measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpComponent {
    pub rate: f64,
    pub sign: Sign,
    pub marks: MarkDistribution,
}

/// The Lévy model. `gamma` is the truncated-drift coefficient of the
/// characteristic exponent; the linear drift of sample paths is recovered
/// from it by removing the compensation of jumps smaller than one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpDiffusionSpec {
    pub gamma: f64,
    pub sigma: f64,
    pub jump_components: Vec<JumpComponent>,
    pub x0: f64,
}

/// Outcome of [`validate_spec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// `∫_{(-∞,0)} |x| Π(dx)`: finite means the integrability condition on
    /// large negative jumps holds.
    pub negative_jump_mean: f64,
    pub total_jump_rate: f64,
    pub linear_drift: f64,
}

impl JumpDiffusionSpec {
    /// Builds a spec from the drift of the path representation
    /// `X_t = x0 + drift·t + σB_t + Σ jumps`.
    pub fn from_linear_drift(drift: f64, sigma: f64, jump_components: Vec<JumpComponent>, x0: f64) -> Self {
        let compensation: f64 = jump_components
            .iter()
            .map(|c| c.rate * c.sign.value() * c.marks.truncated_mean_below_one())
            .sum();
        Self { gamma: drift + compensation, sigma, jump_components, x0 }
    }

    /// Drift of the path representation (defined for any σ since the jump
    /// part has finite activity).
    pub fn linear_drift(&self) -> f64 {
        self.gamma
            - self
                .jump_components
                .iter()
                .map(|c| c.rate * c.sign.value() * c.marks.truncated_mean_below_one())
                .sum::<f64>()
    }

    pub fn total_jump_rate(&self) -> f64 {
        self.jump_components.iter().map(|c| c.rate).sum()
    }

    pub fn is_bounded_variation(&self) -> bool {
        self.sigma == 0.0
    }

    pub fn with_x0(&self, x0: f64) -> Self {
        Self { x0, ..self.clone() }
    }
}

pub fn validate_spec(spec: &JumpDiffusionSpec) -> Result<ValidationReport> {
    if !spec.gamma.is_finite() {
        return Err(Error::invalid("gamma", "must be finite"));
    }
    if !(spec.sigma.is_finite() && spec.sigma >= 0.0) {
        return Err(Error::invalid("sigma", format!("must be finite and non-negative, got {}", spec.sigma)));
    }
    if !spec.x0.is_finite() {
        return Err(Error::invalid("x0", "must be finite"));
    }
    let mut negative_jump_mean = 0.0;
    for (i, c) in spec.jump_components.iter().enumerate() {
        if !(c.rate.is_finite() && c.rate > 0.0) {
            return Err(Error::invalid("rate", format!("component {i}: rate must be positive, got {}", c.rate)));
        }
        c.marks.validate()?;
        if c.sign == Sign::Down {
            let m = c.marks.mean();
            if !m.is_finite() {
                return Err(Error::InfiniteNegativeMean { component: i });
            }
            negative_jump_mean += c.rate * m;
        }
    }
    Ok(ValidationReport {
        negative_jump_mean,
        total_jump_rate: spec.total_jump_rate(),
        linear_drift: spec.linear_drift(),
    })
}

/// Net drift δ of a bounded-variation model; `None` when σ > 0.
pub fn net_drift(spec: &JumpDiffusionSpec) -> Option<f64> {
    spec.is_bounded_variation().then(|| spec.linear_drift())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Unbounded variation, or bounded variation with δ outside `[0, α]`.
    Case1,
    /// Bounded variation with δ in `[0, α]`: the barrier is sticky.
    Case2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseLabel {
    pub case: Case,
    pub delta: Option<f64>,
}

impl CaseLabel {
    /// Label for a bounded-variation path with drift `delta` under cap `alpha`
    /// (`alpha` may be infinite).
    pub fn for_drift(delta: f64, alpha: f64) -> Self {
        let case = if delta >= 0.0 && delta <= alpha { Case::Case2 } else { Case::Case1 };
        Self { case, delta: Some(delta) }
    }

    pub fn is_sticky(&self) -> bool {
        self.case == Case::Case2
    }
}

pub fn classify_case(spec: &JumpDiffusionSpec, alpha: f64) -> CaseLabel {
    match net_drift(spec) {
        Some(delta) => CaseLabel::for_drift(delta, alpha),
        None => CaseLabel { case: Case::Case1, delta: None },
    }
}

/// Ψ(λ) with `E[exp(iλX_t)] = exp(-tΨ(λ))` (for X started at 0).
pub fn characteristic_exponent(spec: &JumpDiffusionSpec, lambda: f64) -> Result<Complex64> {
    let i = Complex64::i();
    let mut psi = -i * spec.gamma * lambda + 0.5 * spec.sigma * spec.sigma * lambda * lambda;
    for c in &spec.jump_components {
        let s = c.sign.value();
        let phi = c.marks.char_fn(s * lambda)?;
        psi += c.rate * (1.0 - phi + i * lambda * s * c.marks.truncated_mean_below_one());
    }
    Ok(psi)
}

/// Path sampling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathMode {
    Exact,
    Grid { steps: usize },
}

/// X observed on an equally spaced grid `k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl GridPath {
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    /// Samples an event path on a grid; each jump is credited to the grid
    /// point closing the step it falls in.
    pub fn from_event_path(path: &EventPath, steps: usize) -> Self {
        let mut values = Vec::with_capacity(steps + 1);
        fill_grid(path, steps, 0.0, None::<&mut rand_chacha::ChaCha8Rng>, &mut values);
        Self { dt: path.horizon / steps as f64, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampledPath {
    Event(EventPath),
    Grid(GridPath),
}

/// Superposed Poisson arrivals of all components on `(0, horizon]`, sorted
/// by time. Inter-arrival times are exact exponentials.
pub fn sample_jumps<R: Rng + ?Sized>(spec: &JumpDiffusionSpec, horizon: f64, rng: &mut R) -> Vec<Jump> {
    let mut jumps: Vec<Jump> = Vec::new();
    for c in &spec.jump_components {
        let start = jumps.len();
        let mut t = 0.0;
        loop {
            let e: f64 = Exp1.sample(rng);
            t += e / c.rate;
            if t > horizon {
                break;
            }
            let size = c.sign.value() * c.marks.sample(rng);
            jumps.push(Jump { time: t, size });
        }
        // Each component is already sorted: merge with the prefix.
        merge_sorted(&mut jumps, start);
    }
    jumps
}

fn merge_sorted(jumps: &mut Vec<Jump>, mid: usize) {
    if mid == 0 || mid == jumps.len() {
        return;
    }
    let right = jumps.split_off(mid);
    let left = std::mem::take(jumps);
    let mut out = Vec::with_capacity(left.len() + right.len());
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        if left[i].time <= right[j].time {
            out.push(left[i]);
            i += 1;
        } else {
            out.push(right[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&left[i..]);
    out.extend_from_slice(&right[j..]);
    *jumps = out;
}

/// Writes `x0 + drift·k·dt + σW_{k·dt} + Σ_{jumps ≤ k·dt}` for k = 0..=steps.
/// Gaussian increments are drawn from `rng` after the jumps were drawn.
fn fill_grid<R: Rng + ?Sized>(path: &EventPath, steps: usize, sigma: f64, mut rng: Option<&mut R>, out: &mut Vec<f64>) {
    out.clear();
    let dt = path.horizon / steps as f64;
    let sd = sigma * dt.sqrt();
    let mut x = path.x0;
    out.push(x);
    let mut next = 0;
    for k in 1..=steps {
        let t_k = if k == steps { path.horizon } else { k as f64 * dt };
        x += path.drift * dt;
        if let Some(r) = rng.as_deref_mut() {
            let z: f64 = StandardNormal.sample(r);
            x += sd * z;
        }
        while next < path.jumps.len() && path.jumps[next].time <= t_k {
            x += path.jumps[next].size;
            next += 1;
        }
        out.push(x);
    }
}

/// Exact event path of a bounded-variation model.
pub fn sample_event_path(spec: &JumpDiffusionSpec, horizon: f64, stream: RngStream) -> Result<EventPath> {
    if !spec.is_bounded_variation() {
        return Err(Error::ExactModeUnavailable { sigma: spec.sigma });
    }
    let mut rng = stream.rng();
    let jumps = sample_jumps(spec, horizon, &mut rng);
    Ok(EventPath::new(spec.x0, spec.linear_drift(), horizon, jumps))
}

/// Grid path for any model, written into `out` (reused across calls).
pub fn sample_grid_into(spec: &JumpDiffusionSpec, horizon: f64, steps: usize, stream: RngStream, out: &mut Vec<f64>) {
    let mut rng = stream.rng();
    let jumps = sample_jumps(spec, horizon, &mut rng);
    let path = EventPath::new(spec.x0, spec.linear_drift(), horizon, jumps);
    if spec.sigma > 0.0 {
        fill_grid(&path, steps, spec.sigma, Some(&mut rng), out);
    } else {
        fill_grid(&path, steps, 0.0, None::<&mut rand_chacha::ChaCha8Rng>, out);
    }
}

pub fn sample_path(spec: &JumpDiffusionSpec, horizon: f64, mode: PathMode, stream: RngStream) -> Result<SampledPath> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid("T", "horizon must be positive"));
    }
    match mode {
        PathMode::Exact => sample_event_path(spec, horizon, stream).map(SampledPath::Event),
        PathMode::Grid { steps } => {
            if steps == 0 {
                return Err(Error::invalid("K", "need at least one step"));
            }
            let mut values = Vec::with_capacity(steps + 1);
            sample_grid_into(spec, horizon, steps, stream, &mut values);
            Ok(SampledPath::Grid(GridPath { dt: horizon / steps as f64, values }))
        }
    }
}

/// The two jump-diffusion models used in the numerical experiments:
/// drift 0.6, unit-rate Uniform(0,1) up-jumps, unit-rate Weibull(2,1)
/// down-jumps, and Gaussian coefficient `a`.
pub fn reference_model(a: f64) -> JumpDiffusionSpec {
    JumpDiffusionSpec::from_linear_drift(
        0.6,
        a,
        vec![
            JumpComponent { rate: 1.0, sign: Sign::Up, marks: MarkDistribution::Uniform { lo: 0.0, hi: 1.0 } },
            JumpComponent { rate: 1.0, sign: Sign::Down, marks: MarkDistribution::Weibull { shape: 2.0, scale: 1.0 } },
        ],
        0.0,
    )
}

/// Pure drift model.
pub fn drift_only(delta: f64) -> JumpDiffusionSpec {
    JumpDiffusionSpec { gamma: delta, sigma: 0.0, jump_components: Vec::new(), x0: 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use approx::assert_relative_eq;

    fn weibull21() -> MarkDistribution {
        MarkDistribution::Weibull { shape: 2.0, scale: 1.0 }
    }

    #[test]
    fn reference_model_validates_with_weibull_mean() {
        let spec = reference_model(0.0);
        let rep = validate_spec(&spec).unwrap();
        assert_relative_eq!(rep.negative_jump_mean, gamma(1.5), max_relative = 1e-14);
        assert_relative_eq!(rep.negative_jump_mean, 0.886_226_925_452_758, max_relative = 1e-12);
        assert_relative_eq!(rep.linear_drift, 0.6, max_relative = 1e-14);
    }

    #[test]
    fn empty_model_validates() {
        let rep = validate_spec(&drift_only(0.0)).unwrap();
        assert_eq!(rep.negative_jump_mean, 0.0);
    }

    #[test]
    fn negative_rate_is_rejected() {
        let mut spec = reference_model(0.0);
        spec.jump_components[0].rate = -1.0;
        match validate_spec(&spec) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "rate"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_marks_are_rejected() {
        let bad = [
            MarkDistribution::Uniform { lo: 1.0, hi: 1.0 },
            MarkDistribution::Uniform { lo: -0.5, hi: 1.0 },
            MarkDistribution::Exponential { rate: 0.0 },
            MarkDistribution::Weibull { shape: -2.0, scale: 1.0 },
            MarkDistribution::HyperExponential { weights: vec![1.0, 1.0], rates: vec![2.0, 1.0] },
            MarkDistribution::PointMass { at: 0.0 },
        ];
        for m in bad {
            assert!(m.validate().is_err(), "{m:?}");
        }
    }

    #[test]
    fn net_drift_examples() {
        assert_eq!(net_drift(&drift_only(0.6)), Some(0.6));
        let big_jump = JumpDiffusionSpec {
            gamma: 0.6,
            sigma: 0.0,
            jump_components: vec![JumpComponent { rate: 1.0, sign: Sign::Up, marks: MarkDistribution::PointMass { at: 2.0 } }],
            x0: 0.0,
        };
        assert_eq!(net_drift(&big_jump), Some(0.6));
        assert_eq!(net_drift(&reference_model(1.0)), None);
    }

    #[test]
    fn net_drift_from_gamma_matches_quadrature_oracle() {
        let spec = JumpDiffusionSpec {
            gamma: 0.6,
            sigma: 0.0,
            jump_components: reference_model(0.0).jump_components,
            x0: 0.0,
        };
        // Truncated Weibull mean by direct quadrature of x f(x) on (0, 1).
        let trunc = quadrature::integrate(|x| x * 2.0 * x * (-x * x).exp(), 0.0, 1.0, 1e-13).unwrap();
        let expected = 0.6 - 0.5 + trunc;
        assert_relative_eq!(net_drift(&spec).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn partial_means_match_quadrature() {
        let laws = [
            MarkDistribution::Uniform { lo: 0.2, hi: 1.7 },
            MarkDistribution::Exponential { rate: 1.3 },
            weibull21(),
            MarkDistribution::Weibull { shape: 0.7, scale: 2.0 },
            MarkDistribution::HyperExponential { weights: vec![0.3, 0.7], rates: vec![0.5, 4.0] },
        ];
        for law in laws {
            for (lo, hi) in [(0.0, 0.5), (0.3, 1.1), (1.0, 2.5), (0.5, f64::INFINITY)] {
                let oracle = law.expect(|x| if x > lo && x <= hi { x } else { 0.0 }).unwrap();
                assert_relative_eq!(law.partial_mean(lo, hi), oracle, max_relative = 1e-8, epsilon = 1e-12);
                let p = law.expect(|x| if x > lo && x <= hi { 1.0 } else { 0.0 }).unwrap();
                let hi_c = if hi.is_finite() { law.cdf(hi) } else { 1.0 };
                assert_relative_eq!(hi_c - law.cdf(lo), p, max_relative = 1e-8, epsilon = 1e-12);
            }
        }
        let pm = MarkDistribution::PointMass { at: 0.4 };
        assert_eq!(pm.partial_mean(0.0, 0.4), 0.4);
        assert_eq!(pm.partial_mean(0.4, 1.0), 0.0);
    }

    #[test]
    fn truncated_means_match_quadrature() {
        let laws = [
            MarkDistribution::Uniform { lo: 0.2, hi: 1.7 },
            MarkDistribution::Uniform { lo: 1.2, hi: 1.7 },
            MarkDistribution::Exponential { rate: 1.3 },
            weibull21(),
            MarkDistribution::Weibull { shape: 0.7, scale: 2.0 },
            MarkDistribution::HyperExponential { weights: vec![0.3, 0.7], rates: vec![0.5, 4.0] },
            MarkDistribution::PointMass { at: 0.4 },
        ];
        for law in laws {
            let oracle = law.expect(|x| if x < 1.0 { x } else { 0.0 }).unwrap();
            assert_relative_eq!(law.truncated_mean_below_one(), oracle, max_relative = 1e-8, epsilon = 1e-12);
            let mean = law.expect(|x| x).unwrap();
            assert_relative_eq!(law.mean(), mean, max_relative = 1e-8);
        }
    }

    #[test]
    fn case_classification() {
        assert_eq!(classify_case(&drift_only(0.6), 0.5).case, Case::Case1);
        assert_eq!(classify_case(&drift_only(0.3), 0.5).case, Case::Case2);
        assert_eq!(classify_case(&drift_only(-0.1), 0.5).case, Case::Case1);
        assert_eq!(classify_case(&drift_only(0.0), 0.5).case, Case::Case2);
        assert_eq!(classify_case(&drift_only(0.5), 0.5).case, Case::Case2);
        assert_eq!(classify_case(&drift_only(7.0), f64::INFINITY).case, Case::Case2);
        assert_eq!(classify_case(&reference_model(1.0), 0.5), CaseLabel { case: Case::Case1, delta: None });
    }

    #[test]
    fn exponent_basics() {
        let spec = reference_model(0.0);
        assert_eq!(characteristic_exponent(&spec, 0.0).unwrap(), Complex64::new(0.0, 0.0));
        let psi = characteristic_exponent(&drift_only(0.6), 1.0).unwrap();
        assert_relative_eq!(psi.re, 0.0);
        assert_relative_eq!(psi.im, -0.6);
        for lam in [0.3, 1.0, 2.5] {
            let a = characteristic_exponent(&reference_model(0.7), lam).unwrap();
            let b = characteristic_exponent(&reference_model(0.7), -lam).unwrap();
            assert_relative_eq!(a.re, b.re, max_relative = 1e-9);
            assert_relative_eq!(a.im, -b.im, max_relative = 1e-9);
        }
    }

    #[test]
    fn bounded_variation_exponent_form() {
        // Ψ(λ) = -iδλ + Σ rate (1 - φ(sign λ)) for σ = 0.
        let spec = reference_model(0.0);
        for lam in [0.5, 1.0, 2.0] {
            let psi = characteristic_exponent(&spec, lam).unwrap();
            let mut alt = -Complex64::i() * 0.6 * lam;
            for c in &spec.jump_components {
                alt += c.rate * (1.0 - c.marks.char_fn(c.sign.value() * lam).unwrap());
            }
            assert_relative_eq!(psi.re, alt.re, max_relative = 1e-10);
            assert_relative_eq!(psi.im, alt.im, max_relative = 1e-10);
        }
    }

    #[test]
    fn drift_only_exact_path() {
        let spec = drift_only(0.6);
        let p = sample_event_path(&spec, 1.0, RngStream::new(1, Purpose::Paths, 0)).unwrap();
        assert!(p.jumps.is_empty());
        assert_relative_eq!(p.value_at(1.0), 0.6);
    }

    #[test]
    fn exact_mode_needs_bounded_variation() {
        let err = sample_path(&reference_model(1.0), 1.0, PathMode::Exact, RngStream::new(1, Purpose::Paths, 0));
        assert!(matches!(err, Err(Error::ExactModeUnavailable { .. })));
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = RngStream::new(99, Purpose::Paths, 5);
        let spec = reference_model(1.0);
        let a = sample_path(&spec, 10.0, PathMode::Grid { steps: 100 }, s).unwrap();
        let b = sample_path(&spec, 10.0, PathMode::Grid { steps: 100 }, s).unwrap();
        assert_eq!(a, b);
        let e1 = sample_path(&reference_model(0.0), 10.0, PathMode::Exact, s).unwrap();
        let e2 = sample_path(&reference_model(0.0), 10.0, PathMode::Exact, s).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn grid_of_bv_model_agrees_with_event_path() {
        let spec = reference_model(0.0);
        let s = RngStream::new(3, Purpose::Paths, 11);
        let ev = sample_event_path(&spec, 10.0, s).unwrap();
        let mut buf = Vec::new();
        sample_grid_into(&spec, 10.0, 1000, s, &mut buf);
        for (k, v) in buf.iter().enumerate() {
            let t = k as f64 * 0.01;
            assert!((v - ev.value_at(t.min(10.0))).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn jump_counts_are_poisson_100() {
        let spec = reference_model(0.0);
        let n = 10_000;
        let (mut up, mut down) = (0usize, 0usize);
        for i in 0..n {
            let p = sample_event_path(&spec, 100.0, RngStream::new(17, Purpose::Paths, i)).unwrap();
            up += p.jumps.iter().filter(|j| j.size > 0.0).count();
            down += p.jumps.iter().filter(|j| j.size < 0.0).count();
        }
        let tol = 3.0 * (100.0f64 / n as f64).sqrt();
        assert!((up as f64 / n as f64 - 100.0).abs() < tol);
        assert!((down as f64 / n as f64 - 100.0).abs() < tol);
    }

    #[test]
    fn jump_times_sorted_and_inside_horizon() {
        let spec = reference_model(0.0);
        let p = sample_event_path(&spec, 50.0, RngStream::new(5, Purpose::Paths, 0)).unwrap();
        assert!(p.jumps.windows(2).all(|w| w[0].time < w[1].time));
        assert!(p.jumps.iter().all(|j| j.time > 0.0 && j.time <= 50.0 && j.size != 0.0));
    }
}
