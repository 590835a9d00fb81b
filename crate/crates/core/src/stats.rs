//! Deterministic Monte Carlo aggregation.
//!
//! Per-path results are combined along a binary tree whose shape depends only
//! on the number of paths, so estimates are bit-identical for any worker count.

use crate::rng::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Mean with standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`.
    pub std_error: f64,
    pub n: usize,
    /// Share of paths whose passage was not resolved within the horizon.
    pub censored_fraction: f64,
    /// Base stream the paths were drawn from.
    pub stream: Option<RngStream>,
}

impl McEstimate {
    pub fn exact(mean: f64) -> Self {
        Self { mean, std_error: 0.0, n: 0, censored_fraction: 0.0, stream: None }
    }

    pub fn with_stream(self, stream: RngStream) -> Self {
        Self { stream: Some(stream), ..self }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self { mean: c * self.mean, std_error: c.abs() * self.std_error, ..self }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let m = Moments::from_rows(xs.iter().map(|&x| vec![x]).collect::<Vec<_>>().as_slice(), 1);
        m.estimate(0)
    }

    /// `|a - b| ≤ k·sqrt(se_a² + se_b²)`.
    pub fn agrees_with(&self, other: &McEstimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.std_error.hypot(other.std_error)
    }
}

/// Column-wise running mean / centred second moment (Chan's merge) with a
/// per-column censoring count.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub censored: Vec<u64>,
}

impl Moments {
    pub fn empty(width: usize) -> Self {
        Self { n: 0, mean: vec![0.0; width], m2: vec![0.0; width], censored: vec![0; width] }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, row: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(row) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    pub fn push_censored(&mut self, row: &[f64], censored: &[bool]) {
        self.push(row);
        for (c, &flag) in self.censored.iter_mut().zip(censored) {
            *c += u64::from(flag);
        }
    }

    pub fn merge(mut self, other: Moments) -> Moments {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.width() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
            self.censored[i] += other.censored[i];
        }
        self.n += other.n;
        self
    }

    pub fn estimate(&self, i: usize) -> McEstimate {
        let var = if self.n > 1 { self.m2[i] / (self.n as f64 - 1.0) } else { 0.0 };
        McEstimate {
            mean: self.mean[i],
            std_error: (var / self.n.max(1) as f64).sqrt(),
            n: self.n,
            censored_fraction: self.censored_fraction(i),
            stream: None,
        }
    }

    pub fn estimates(&self) -> Vec<McEstimate> {
        (0..self.width()).map(|i| self.estimate(i)).collect()
    }

    pub fn censored_fraction(&self, i: usize) -> f64 {
        self.censored[i] as f64 / self.n.max(1) as f64
    }

    fn from_rows(rows: &[Vec<f64>], width: usize) -> Self {
        let mut m = Moments::empty(width);
        for r in rows {
            m.push(r);
        }
        m
    }
}

/// Paths per leaf of the reduction tree.
const LEAF: usize = 32;

/// Runs `per_path(i, &mut acc)` for `i in 0..n` and merges the leaf
/// accumulators along a fixed binary tree.
pub fn tree_moments<F>(n: usize, width: usize, per_path: F) -> Moments
where
    F: Fn(usize, &mut Moments) + Sync,
{
    fn go<F: Fn(usize, &mut Moments) + Sync>(lo: usize, hi: usize, width: usize, f: &F) -> Moments {
        if hi - lo <= LEAF {
            let mut acc = Moments::empty(width);
            for i in lo..hi {
                f(i, &mut acc);
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        let (a, b) = rayon::join(|| go(lo, mid, width, f), || go(mid, hi, width, f));
        a.merge(b)
    }
    go(0, n, width, &per_path)
}

/// Order-preserving parallel map over path indices.
pub fn map_paths<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Pairwise summation in a fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Weighted least-squares non-increasing fit (pool adjacent violators).
pub fn isotonic_non_increasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w.max(1e-300), 1));
        while blocks.len() > 1 {
            let (v2, w2, c2) = blocks[blocks.len() - 1];
            let (v1, w1, c1) = blocks[blocks.len() - 2];
            if v1 >= v2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().unwrap() = ((v1 * w1 + v2 * w2) / w, w, c1 + c2);
        }
    }
    blocks.into_iter().flat_map(|(v, _, c)| std::iter::repeat_n(v, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn moments_match_two_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37 % 101) as f64).sqrt()).collect();
        let m = tree_moments(xs.len(), 1, |i, acc| acc.push(&[xs[i]]));
        let mean = xs.iter().sum::<f64>() / 1000.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 999.0;
        let e = m.estimate(0);
        assert_abs_diff_eq!(e.mean, mean, epsilon = 1e-12);
        assert_abs_diff_eq!(e.std_error, (var / 1000.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn tree_is_thread_count_invariant() {
        let f = |i: usize, acc: &mut Moments| acc.push(&[(i as f64 * 0.37).sin(), (i as f64).ln_1p()]);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| tree_moments(5000, 2, f));
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| tree_moments(5000, 2, f));
        assert_eq!(one, four);
    }

    #[test]
    fn pava_pools_violations() {
        let fit = isotonic_non_increasing(&[1.0, 0.8, 0.9, 0.5, 0.6, 0.1], &[1.0; 6]);
        assert_eq!(fit.len(), 6);
        for w in fit.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert_abs_diff_eq!(fit[1], 0.85, epsilon = 1e-15);
        assert_abs_diff_eq!(fit[3], 0.55, epsilon = 1e-15);
    }

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
