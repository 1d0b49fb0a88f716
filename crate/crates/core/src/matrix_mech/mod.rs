//! The generic E-LDP matrix mechanism.
//!
//! Every owner reports `A * h_x + Lap(s)` where `h_x` is the one-hot encoding
//! of her value. The collector answers the workload `W = B * A` with
//! `B * sum_i r_i`. Rows with `s_k = 0` are reported without noise; they are
//! only private if row `k` of `A` is constant across inputs.

mod optimize;

pub use optimize::{
    es_sweep, optimize_frequency_scales, optimize_frequency_scales_generic, EsSweepRow, FrequencyScales,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{domain_err, shape_err, Error, Result};
use crate::metrics::Metric;
use crate::rng::{sample_laplace, stream, Lane};

/// Largest domain accepted by this module; `W_m` has `O(m^2)` rows.
pub const MAX_DOMAIN: usize = 4096;
/// Elementwise slack allowed in `B * A = W`.
pub const FACTOR_TOLERANCE: f64 = 1e-9;
/// Relative slack in the pairwise privacy constraint.
pub const PRIVACY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixMechanism {
    strategy: DMatrix<f64>,
    reconstruction: DMatrix<f64>,
    workload: DMatrix<f64>,
    scales: Vec<f64>,
}

/// One owner's noisy `A * h_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnerReport {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairViolation {
    pub x: usize,
    pub x_prime: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyCheck {
    pub feasible: bool,
    /// First violating pair in lexicographic order.
    pub worst_pair: Option<PairViolation>,
}

impl MatrixMechanism {
    pub fn new(
        strategy: DMatrix<f64>,
        reconstruction: DMatrix<f64>,
        workload: DMatrix<f64>,
        scales: Vec<f64>,
    ) -> Result<Self> {
        let (p, m) = strategy.shape();
        if m == 0 || m > MAX_DOMAIN {
            return Err(domain_err!("domain size {m} outside [1, {MAX_DOMAIN}]"));
        }
        if reconstruction.ncols() != p {
            return Err(shape_err!("B has {} columns, A has {p} rows", reconstruction.ncols()));
        }
        if workload.shape() != (reconstruction.nrows(), m) {
            return Err(shape_err!(
                "W is {:?}, expected {:?}",
                workload.shape(),
                (reconstruction.nrows(), m)
            ));
        }
        if scales.len() != p {
            return Err(shape_err!("{} scales for {p} strategy rows", scales.len()));
        }
        if let Some(k) = scales.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(domain_err!("scale {} = {} is not a finite nonnegative number", k + 1, scales[k]));
        }
        let product = &reconstruction * &strategy;
        let err = (&product - &workload).amax();
        if err > FACTOR_TOLERANCE {
            return Err(shape_err!("B * A differs from W by {err:e}"));
        }
        Ok(MatrixMechanism {
            strategy,
            reconstruction,
            workload,
            scales,
        })
    }

    /// Mechanism answering `W = B * A`.
    pub fn from_factors(strategy: DMatrix<f64>, reconstruction: DMatrix<f64>, scales: Vec<f64>) -> Result<Self> {
        if reconstruction.ncols() != strategy.nrows() {
            return Err(shape_err!(
                "B has {} columns, A has {} rows",
                reconstruction.ncols(),
                strategy.nrows()
            ));
        }
        let workload = &reconstruction * &strategy;
        Self::new(strategy, reconstruction, workload, scales)
    }

    /// Frequency oracle: `A = B = W = I_m` with per-value scales.
    pub fn identity(scales: Vec<f64>) -> Result<Self> {
        let m = scales.len();
        Self::new(DMatrix::identity(m, m), DMatrix::identity(m, m), DMatrix::identity(m, m), scales)
    }

    /// All-ranges workload answered through prefix sums.
    pub fn prefix(m: usize, scales: Vec<f64>) -> Result<Self> {
        let p = prefix_strategy(m)?;
        Self::new(p.strategy, p.reconstruction, p.workload, scales)
    }

    pub fn strategy(&self) -> &DMatrix<f64> {
        &self.strategy
    }

    pub fn reconstruction(&self) -> &DMatrix<f64> {
        &self.reconstruction
    }

    pub fn workload(&self) -> &DMatrix<f64> {
        &self.workload
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn domain_size(&self) -> usize {
        self.strategy.ncols()
    }

    fn check_value(&self, x: usize) -> Result<()> {
        let m = self.domain_size();
        if x < 1 || x > m {
            return Err(domain_err!("value {x} outside [1, {m}]"));
        }
        Ok(())
    }

    /// `A * h_x + Lap(s)`, one uniform draw per strategy row.
    pub fn encode<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Result<OwnerReport> {
        self.check_value(x)?;
        let column = self.strategy.column(x - 1);
        let values = column
            .iter()
            .zip(&self.scales)
            .map(|(&a, &s)| a + sample_laplace(rng, s))
            .collect();
        Ok(OwnerReport { values })
    }

    /// Encodes every owner on its own stream derived from `(seed, trial, owner)`.
    pub fn encode_batch(&self, values: &[usize], seed: u64, trial: u64) -> Result<Vec<OwnerReport>> {
        values
            .par_iter()
            .enumerate()
            .map(|(i, &x)| self.encode(x, &mut stream(seed, trial, Lane::Encode, i as u64)))
            .collect()
    }

    /// `B * sum_i r_i`.
    pub fn estimate_workload(&self, reports: &[OwnerReport]) -> Result<Vec<f64>> {
        let p = self.strategy.nrows();
        let mut total = DVector::<f64>::zeros(p);
        for (i, r) in reports.iter().enumerate() {
            if r.values.len() != p {
                return Err(shape_err!("report {} has length {}, expected {p}", i + 1, r.values.len()));
            }
            for (t, v) in total.iter_mut().zip(&r.values) {
                *t += v;
            }
        }
        Ok((&self.reconstruction * total).iter().copied().collect())
    }

    /// Exact `W * c` for a frequency vector.
    pub fn true_answer(&self, counts: &[f64]) -> Result<Vec<f64>> {
        if counts.len() != self.domain_size() {
            return Err(shape_err!("{} counts for domain {}", counts.len(), self.domain_size()));
        }
        Ok((&self.workload * DVector::from_column_slice(counts)).iter().copied().collect())
    }

    /// `2n * Trace[B^T B diag(s^2)]`.
    pub fn expected_total_sq_error(&self, n: u64) -> f64 {
        let trace: f64 = self
            .reconstruction
            .column_iter()
            .zip(&self.scales)
            .map(|(col, s)| col.norm_squared() * s * s)
            .sum();
        2.0 * n as f64 * trace
    }

    /// `sum_k |a_k^T (h_x - h_x')| / s_k`, with `0/0 = 0` and `c/0 = inf`.
    pub fn pair_cost(&self, x: usize, x_prime: usize) -> Result<f64> {
        self.check_value(x)?;
        self.check_value(x_prime)?;
        Ok(self.pair_cost_unchecked(x - 1, x_prime - 1))
    }

    fn pair_cost_unchecked(&self, i: usize, j: usize) -> f64 {
        let mut total = 0.0;
        for (k, &s) in self.scales.iter().enumerate() {
            let diff = (self.strategy[(k, i)] - self.strategy[(k, j)]).abs();
            if diff == 0.0 {
                continue;
            }
            if s == 0.0 {
                return f64::INFINITY;
            }
            total += diff / s;
        }
        total
    }

    /// Verifies the pairwise Laplace condition against `metric` on `[m]`.
    pub fn check_privacy(&self, metric: &Metric) -> Result<PrivacyCheck> {
        let m = self.domain_size();
        if metric.domain().total_size() != m {
            return Err(domain_err!(
                "metric domain has {} values, mechanism has {m}",
                metric.domain().total_size()
            ));
        }
        for i in 0..m {
            for j in i + 1..m {
                let lhs = self.pair_cost_unchecked(i, j);
                let rhs = metric.eval_flat(i + 1, j + 1)?;
                if lhs > rhs * (1.0 + PRIVACY_TOLERANCE) + f64::MIN_POSITIVE {
                    return Ok(PrivacyCheck {
                        feasible: false,
                        worst_pair: Some(PairViolation {
                            x: i + 1,
                            x_prime: j + 1,
                            lhs,
                            rhs,
                        }),
                    });
                }
            }
        }
        Ok(PrivacyCheck {
            feasible: true,
            worst_pair: None,
        })
    }

    /// Log of the density ratio `p(r | x) / p(r | x')` for one report.
    pub fn privacy_loss(&self, report: &OwnerReport, x: usize, x_prime: usize) -> Result<f64> {
        self.check_value(x)?;
        self.check_value(x_prime)?;
        if report.values.len() != self.scales.len() {
            return Err(shape_err!("report length {} != {}", report.values.len(), self.scales.len()));
        }
        let mut loss = 0.0;
        for (k, (&r, &s)) in report.values.iter().zip(&self.scales).enumerate() {
            let cx = self.strategy[(k, x - 1)];
            let cy = self.strategy[(k, x_prime - 1)];
            if s == 0.0 {
                // point masses: equal centers cancel, otherwise the ratio is degenerate
                if cx == cy {
                    continue;
                }
                return Ok(if r == cx { f64::INFINITY } else { f64::NEG_INFINITY });
            }
            loss += ((r - cy).abs() - (r - cx).abs()) / s;
        }
        Ok(loss)
    }
}

/// Pieces of the prefix-sum mechanism for all ranges on `[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixStrategy {
    /// One row per interval `[l, r]`, lexicographic in `(l, r)`.
    pub workload: DMatrix<f64>,
    /// Lower-triangular ones: row `k` is the prefix count up to `k`.
    pub strategy: DMatrix<f64>,
    /// `range([l, r]) = prefix(r) - prefix(l - 1)`.
    pub reconstruction: DMatrix<f64>,
}

/// Intervals of `[m]` in workload row order.
pub fn range_rows(m: usize) -> Vec<(usize, usize)> {
    (1..=m).flat_map(|l| (l..=m).map(move |r| (l, r))).collect()
}

pub fn prefix_strategy(m: usize) -> Result<PrefixStrategy> {
    if m == 0 || m > MAX_DOMAIN {
        return Err(domain_err!("domain size {m} outside [1, {MAX_DOMAIN}]"));
    }
    let rows = range_rows(m);
    let q = rows.len();
    let mut workload = DMatrix::zeros(q, m);
    let mut reconstruction = DMatrix::zeros(q, m);
    for (row, &(l, r)) in rows.iter().enumerate() {
        for v in l..=r {
            workload[(row, v - 1)] = 1.0;
        }
        reconstruction[(row, r - 1)] = 1.0;
        if l >= 2 {
            reconstruction[(row, l - 2)] = -1.0;
        }
    }
    let strategy = DMatrix::from_fn(m, m, |i, j| if j <= i { 1.0 } else { 0.0 });
    Ok(PrefixStrategy {
        workload,
        strategy,
        reconstruction,
    })
}

/// Optimal prefix scales under `E_L1`: `1/epsilon` on the first `m - 1`
/// rows, no noise on the last (it counts everyone).
pub fn optimal_prefix_scales(epsilon: f64, m: usize) -> Result<Vec<f64>> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(domain_err!("epsilon must be positive and finite, got {epsilon}"));
    }
    if m == 0 {
        return Err(Error::Domain("domain size must be at least 1".into()));
    }
    let mut s = vec![1.0 / epsilon; m];
    s[m - 1] = 0.0;
    Ok(s)
}
