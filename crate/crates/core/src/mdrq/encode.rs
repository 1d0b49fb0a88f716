use rand::Rng;
use rayon::prelude::*;

use crate::domain::DomainSpec;
use crate::error::{domain_err, shape_err, Error, Result};
use crate::rng::{stream, Lane};

/// Per-bit randomized response: keep with probability `e^eps / (e^eps + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipChannel {
    epsilon: f64,
    flip: f64,
    debias: f64,
}

impl FlipChannel {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(domain_err!("epsilon must be positive and finite, got {epsilon}"));
        }
        Ok(FlipChannel {
            epsilon,
            flip: 1.0 / (epsilon.exp() + 1.0),
            debias: 1.0 / (epsilon / 2.0).tanh(),
        })
    }

    /// No flipping and no debiasing, so estimators reproduce the true counts.
    #[cfg(any(test, feature = "test-hooks"))]
    pub fn noiseless() -> Self {
        FlipChannel { epsilon: f64::INFINITY, flip: 0.0, debias: 1.0 }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn flip_probability(&self) -> f64 {
        self.flip
    }

    pub fn keep_probability(&self) -> f64 {
        1.0 - self.flip
    }

    /// `(e^eps + 1) / (e^eps - 1)`, the per-dimension bias correction.
    pub fn debias(&self) -> f64 {
        self.debias
    }
}

/// One owner's report: row `d` is a ±1 vector of length `m_d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportMatrix {
    rows: Vec<Vec<i8>>,
}

impl ReportMatrix {
    pub fn from_rows(rows: Vec<Vec<i8>>, domain: &DomainSpec) -> Result<Self> {
        if rows.len() != domain.num_dims() {
            return Err(shape_err!("report has {} rows, domain has {} dimensions", rows.len(), domain.num_dims()));
        }
        for (d, (row, &m)) in rows.iter().zip(domain.dims()).enumerate() {
            if row.len() != m {
                return Err(shape_err!("report row {} has length {}, expected {m}", d + 1, row.len()));
            }
            if row.iter().any(|&b| b != 1 && b != -1) {
                return Err(domain_err!("report row {} has an entry outside {{-1, +1}}", d + 1));
            }
        }
        Ok(ReportMatrix { rows })
    }

    /// Unflipped threshold encoding of `x`.
    pub fn threshold(x: &[usize], domain: &DomainSpec) -> Result<Self> {
        domain.check(x)?;
        let rows = x
            .iter()
            .zip(domain.dims())
            .map(|(&xd, &m)| (1..=m).map(|j| if j < xd { -1 } else { 1 }).collect())
            .collect();
        Ok(ReportMatrix { rows })
    }

    pub fn rows(&self) -> &[Vec<i8>] {
        &self.rows
    }

    pub fn num_dims(&self) -> usize {
        self.rows.len()
    }

    /// Entry `R[d, j]` with 1-based `d` and `j`.
    pub fn entry(&self, d: usize, j: usize) -> i8 {
        self.rows[d - 1][j - 1]
    }

    /// Product `prod_d R[d, x_d]`, the contribution of this report to `o_x`.
    pub fn cell_product(&self, x: &[usize]) -> i8 {
        self.rows.iter().zip(x).map(|(row, &xd)| row[xd - 1]).product()
    }

    /// Row `d` (1-based) as a string over `{+, -}`.
    pub fn bits(&self, d: usize) -> String {
        self.rows[d - 1].iter().map(|&b| if b > 0 { '+' } else { '-' }).collect()
    }

    pub fn parse_bits(bits: &str) -> Result<Vec<i8>> {
        bits.chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::Domain(format!("bad report bit {other:?}, expected '+' or '-'"))),
            })
            .collect()
    }
}

/// Threshold-encode `x` and flip every bit independently.
pub fn encode_value<R: Rng + ?Sized>(
    x: &[usize],
    domain: &DomainSpec,
    channel: &FlipChannel,
    rng: &mut R,
) -> Result<ReportMatrix> {
    let mut report = ReportMatrix::threshold(x, domain)?;
    let flip = channel.flip_probability();
    for row in &mut report.rows {
        for b in row.iter_mut() {
            if rng.gen_bool(flip) {
                *b = -*b;
            }
        }
    }
    Ok(report)
}

/// Encode every owner on its own stream `(seed, trial, Encode, owner)`.
pub fn encode_batch(
    values: &[Vec<usize>],
    domain: &DomainSpec,
    channel: &FlipChannel,
    seed: u64,
    trial: u64,
) -> Result<Vec<ReportMatrix>> {
    values
        .par_iter()
        .enumerate()
        .map(|(i, x)| encode_value(x, domain, channel, &mut stream(seed, trial, Lane::Encode, i as u64)))
        .collect()
}

/// `Pr[report | x]` under the flip channel.
pub fn likelihood(report: &ReportMatrix, x: &[usize], domain: &DomainSpec, channel: &FlipChannel) -> Result<f64> {
    let clean = ReportMatrix::threshold(x, domain)?;
    if report.rows.len() != clean.rows.len() || report.rows.iter().zip(&clean.rows).any(|(a, b)| a.len() != b.len()) {
        return Err(shape_err!("report does not match the domain"));
    }
    let (keep, flip) = (channel.keep_probability(), channel.flip_probability());
    let flips: i32 = report
        .rows
        .iter()
        .zip(&clean.rows)
        .map(|(a, b)| a.iter().zip(b).filter(|(u, v)| u != v).count() as i32)
        .sum();
    let bits: i32 = domain.dims().iter().sum::<usize>() as i32;
    Ok(keep.powi(bits - flips) * flip.powi(flips))
}
