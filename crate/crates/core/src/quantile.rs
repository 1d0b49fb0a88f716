//! Quantiles over a one-dimensional domain by binary search on the noisy
//! prefix-count oracle `σ̂(x) = ĉ([1, x]) / n`.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{domain_err, shape_err, Result};
use crate::mdrq::{RangeOracle, RangeQuery};

/// Width at which the binary search hands over to a linear scan.
pub const SCAN_WIDTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileResult {
    pub value: usize,
    pub estimated_percentile: f64,
    /// Distinct values of `x` for which the oracle was queried.
    pub probes: usize,
}

/// Memoized `σ̂` over the first `m` values of a 1-D oracle.
pub struct PercentileOracle<'a, O: ?Sized> {
    oracle: &'a O,
    m: usize,
    n: f64,
    cache: RefCell<HashMap<usize, f64>>,
}

impl<'a, O: RangeOracle + ?Sized> PercentileOracle<'a, O> {
    pub fn new(oracle: &'a O, m: usize, n: u64) -> Result<Self> {
        let dims = oracle.domain().dims();
        if dims.len() != 1 {
            return Err(shape_err!("quantiles need a 1-dimensional oracle, got {} dimensions", dims.len()));
        }
        if m == 0 || m > dims[0] {
            return Err(domain_err!("m = {m} does not fit an oracle over {} values", dims[0]));
        }
        if n == 0 {
            return Err(domain_err!("owner count must be positive"));
        }
        Ok(PercentileOracle { oracle, m, n: n as f64, cache: RefCell::new(HashMap::new()) })
    }

    /// `σ̂(x)`, with `σ̂(0) = 0` and no oracle call for it.
    pub fn percentile(&self, x: usize) -> Result<f64> {
        if x > self.m {
            return Err(domain_err!("value {x} outside [0, {}]", self.m));
        }
        if x == 0 {
            return Ok(0.0);
        }
        if let Some(&v) = self.cache.borrow().get(&x) {
            return Ok(v);
        }
        let v = self.oracle.estimate_range(&RangeQuery { bounds: vec![(1, x)] })? / self.n;
        self.cache.borrow_mut().insert(x, v);
        Ok(v)
    }

    pub fn probes(&self) -> usize {
        self.cache.borrow().len()
    }
}

/// `σ̂(x) = ĉ([1, x]) / n`.
pub fn percentile<O: RangeOracle + ?Sized>(oracle: &O, x: usize, n: u64) -> Result<f64> {
    let m = oracle.domain().dims().first().copied().unwrap_or(0);
    PercentileOracle::new(oracle, m, n)?.percentile(x)
}

/// Estimated `p`-quantile over `[1, m]`.
pub fn quantile<O: RangeOracle + ?Sized>(oracle: &O, p: f64, m: usize, n: u64) -> Result<QuantileResult> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(domain_err!("p = {p} outside (0, 1]"));
    }
    let sigma = PercentileOracle::new(oracle, m, n)?;
    let (mut lo, mut hi) = (1, m);
    while hi - lo > SCAN_WIDTH {
        let mid = (lo + hi).div_ceil(2);
        if sigma.percentile(mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for x in lo..=hi {
        if sigma.percentile(x - 1)? < p && p <= sigma.percentile(x)? {
            return finish(&sigma, x);
        }
    }
    // noise broke monotonicity inside the window
    let mut best = (f64::INFINITY, lo);
    for x in lo..=hi {
        let gap = (sigma.percentile(x)? - p).abs();
        if gap < best.0 {
            best = (gap, x);
        }
    }
    finish(&sigma, best.1)
}

fn finish<O: RangeOracle + ?Sized>(sigma: &PercentileOracle<'_, O>, x: usize) -> Result<QuantileResult> {
    Ok(QuantileResult { value: x, estimated_percentile: sigma.percentile(x)?, probes: sigma.probes() })
}

/// `2 ceil(log2 m) + 10`.
pub fn probe_budget(m: usize) -> usize {
    2 * (m.max(1).next_power_of_two().trailing_zeros() as usize) + 10
}

fn debias(epsilon: f64) -> f64 {
    1.0 / (epsilon / 2.0).tanh()
}

/// `a sqrt((2/n) ln(1/δ))` with `a = (e^eps + 1) / (e^eps - 1)`.
pub fn percentile_error_bound(epsilon: f64, n: u64, delta: f64) -> f64 {
    debias(epsilon) * (2.0 / n as f64 * (1.0 / delta).ln()).sqrt()
}

/// `2 a sqrt((2/n) ln(2 log2(m) / δ))`.
pub fn quantile_error_bound(epsilon: f64, n: u64, m: usize, delta: f64) -> f64 {
    2.0 * debias(epsilon) * (2.0 / n as f64 * (2.0 * (m as f64).log2() / delta).ln()).sqrt()
}

/// Exact percentiles `σ(0..=m)` of a 1-D dataset.
pub fn true_percentiles(values: &[usize], m: usize) -> Vec<f64> {
    let mut counts = vec![0usize; m + 1];
    for &v in values {
        counts[v] += 1;
    }
    let n = values.len() as f64;
    let mut acc = 0;
    counts
        .iter()
        .map(|&c| {
            acc += c;
            acc as f64 / n
        })
        .collect()
}

/// The `x` with `σ(x - 1) < p <= σ(x)`.
pub fn definitional_quantile(sigma: &[f64], p: f64) -> Option<usize> {
    (1..sigma.len()).find(|&x| sigma[x - 1] < p && p <= sigma[x])
}

/// Distance from `p` to the true percentile interval `(σ(x - 1), σ(x)]`.
pub fn quantile_error(sigma: &[f64], x: usize, p: f64) -> f64 {
    let (lo, hi) = (sigma[x - 1], sigma[x]);
    if p <= lo {
        lo - p
    } else if p > hi {
        p - hi
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::mdrq::{encode_batch, Backend, Estimator, FlipChannel};

    fn noiseless(values: &[usize], m: usize) -> Estimator {
        let dom = DomainSpec::line(m).unwrap();
        let rows: Vec<Vec<usize>> = values.iter().map(|&v| vec![v]).collect();
        let ch = FlipChannel::noiseless();
        Estimator::from_reports(encode_batch(&rows, &dom, &ch, 0, 0).unwrap(), &dom, &ch, Backend::Observations).unwrap()
    }

    #[test]
    fn noiseless_percentiles() {
        let est = noiseless(&[1, 1, 2, 3], 3);
        assert_eq!(percentile(&est, 0, 4).unwrap(), 0.0);
        assert_eq!(percentile(&est, 1, 4).unwrap(), 0.5);
        assert_eq!(percentile(&est, 2, 4).unwrap(), 0.75);
        assert_eq!(percentile(&est, 3, 4).unwrap(), 1.0);
        assert!(percentile(&est, 4, 4).is_err());
    }

    #[test]
    fn noiseless_quantiles() {
        let est = noiseless(&[1, 1, 2, 3], 3);
        assert_eq!(quantile(&est, 0.6, 3, 4).unwrap().value, 2);
        assert_eq!(quantile(&est, 0.5, 3, 4).unwrap().value, 1);
        assert_eq!(quantile(&est, 1.0, 3, 4).unwrap().value, 3);
        assert!(quantile(&est, 0.0, 3, 4).is_err());
        assert!(quantile(&est, 1.5, 3, 4).is_err());
        let est = noiseless(&[2, 5, 5, 17, 40], 50);
        assert_eq!(quantile(&est, 1.0, 50, 5).unwrap().value, 40);
        assert_eq!(quantile(&est, 0.7, 50, 5).unwrap().value, 17);
    }

    #[test]
    fn small_domains_scan_only() {
        let est = noiseless(&[3, 4, 4, 9], 11);
        let r = quantile(&est, 0.5, 11, 4).unwrap();
        assert_eq!(r.value, 4);
        // scan from 1: σ̂(1), ..., σ̂(4)
        assert_eq!(r.probes, 4);
    }

    #[test]
    fn probe_budget_values() {
        assert_eq!(probe_budget(64), 22);
        assert_eq!(probe_budget(65), 24);
        assert_eq!(probe_budget(1), 10);
    }

    #[test]
    fn bound_examples() {
        // e^eps = 3 gives a = 2; delta = 1/e gives ln(1/delta) = 1
        let eps = 3f64.ln();
        let delta = (-1f64).exp();
        assert!((percentile_error_bound(eps, 800, delta) - 0.1).abs() < 1e-12);
        let b = percentile_error_bound(1.0, 1000, 0.05);
        assert!((percentile_error_bound(1.0, 4000, 0.05) - b / 2.0).abs() < 1e-12);
        // ln(2 log2(m) / delta) = ln(1 / delta') with delta' = delta / (2 log2 m)
        let m = 64;
        let q = quantile_error_bound(1.0, 1000, m, 0.05);
        assert!((q - 2.0 * percentile_error_bound(1.0, 1000, 0.05 / (2.0 * 6.0))).abs() < 1e-12);
    }

    #[test]
    fn error_is_distance_to_interval() {
        let sigma = true_percentiles(&[1, 1, 2, 3], 3);
        assert_eq!(sigma, vec![0.0, 0.5, 0.75, 1.0]);
        assert_eq!(definitional_quantile(&sigma, 0.6), Some(2));
        assert_eq!(quantile_error(&sigma, 2, 0.6), 0.0);
        assert!((quantile_error(&sigma, 3, 0.6) - 0.15).abs() < 1e-12);
        assert!((quantile_error(&sigma, 1, 0.6) - 0.1).abs() < 1e-12);
    }
}
