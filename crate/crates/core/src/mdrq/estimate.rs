use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encode::{FlipChannel, ReportMatrix};
use super::observations::{accumulate_observations, check_report, Observations};
use super::transform::{binv_row, range_row_sum, RangeQuery, SparseRow};
use crate::domain::DomainSpec;
use crate::error::{domain_err, Error, Result};

/// Anything that can answer unweighted range counts over a fixed domain.
pub trait RangeOracle {
    fn domain(&self) -> &DomainSpec;
    fn estimate_range(&self, query: &RangeQuery) -> Result<f64>;
    fn owner_count(&self) -> Option<u64>;

    fn estimate_point(&self, x: &[usize]) -> Result<f64> {
        self.estimate_range(&RangeQuery::point(x))
    }
}

/// How the collector stores what it needs to answer queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Dense observations; a query reads the `2^{D_R}` cells of its range row.
    #[default]
    Observations,
    /// Every single-value estimate precomputed; a query sums the box.
    Frequencies,
    /// Prefix sums of the single-value estimates; `2^D` lookups per query.
    PrefixSums,
    /// Raw reports only; each needed `o_x` is recomputed from them.
    OnTheFly,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "observations" => Ok(Backend::Observations),
            "frequencies" => Ok(Backend::Frequencies),
            "prefix_sums" => Ok(Backend::PrefixSums),
            "on_the_fly" => Ok(Backend::OnTheFly),
            _ => Err(Error::Config(format!("unknown backend {s:?}"))),
        }
    }
}

// Frequency and prefix tables hold `B^-1 o` without the `debias^D` factor.
// Those sums are dyadic rationals and stay exact in f64, so every backend
// produces the same number before the final multiplication.
#[derive(Debug, Clone)]
enum Store {
    Observations(Observations),
    Frequencies(Vec<f64>),
    PrefixSums(Vec<f64>),
    OnTheFly(Vec<ReportMatrix>),
}

#[derive(Debug, Clone)]
pub struct Estimator {
    domain: DomainSpec,
    scale: f64,
    owner_count: u64,
    dummy_dims: usize,
    store: Store,
}

impl Estimator {
    /// `domain` is the encoding domain (already extended if dummies are used).
    pub fn from_reports(
        reports: Vec<ReportMatrix>,
        domain: &DomainSpec,
        channel: &FlipChannel,
        backend: Backend,
    ) -> Result<Self> {
        let n = reports.len() as u64;
        if backend == Backend::OnTheFly {
            for r in &reports {
                check_report(r, domain)?;
            }
            return Ok(Estimator {
                domain: domain.clone(),
                scale: scale_for(channel, domain),
                owner_count: n,
                dummy_dims: 0,
                store: Store::OnTheFly(reports),
            });
        }
        let obs = accumulate_observations(&reports, domain)?;
        Self::from_observations(obs, channel, backend)
    }

    pub fn from_observations(obs: Observations, channel: &FlipChannel, backend: Backend) -> Result<Self> {
        let domain = obs.domain().clone();
        let owner_count = obs.owner_count().unwrap_or(0);
        let store = match backend {
            Backend::Observations => Store::Observations(obs),
            Backend::Frequencies => Store::Frequencies(unscaled_frequencies(&obs)),
            Backend::PrefixSums => Store::PrefixSums(prefix_sums(unscaled_frequencies(&obs), &domain)),
            Backend::OnTheFly => {
                return Err(Error::Config("the on-the-fly backend needs raw reports".into()));
            }
        };
        Ok(Estimator { scale: scale_for(channel, &domain), domain, owner_count, dummy_dims: 0, store })
    }

    /// Restricts queries to the original coordinates `[1, m_d - 1]` in every dimension.
    pub fn with_dummy_extension(self, on: bool) -> Self {
        let dims = if on { self.domain.num_dims() } else { 0 };
        self.with_dummy_dims(dims)
    }

    /// As `with_dummy_extension`, for the leading `count` dimensions only.
    pub fn with_dummy_dims(mut self, count: usize) -> Self {
        self.dummy_dims = count.min(self.domain.num_dims());
        self
    }

    pub fn dummy_dims(&self) -> usize {
        self.dummy_dims
    }

    pub fn backend(&self) -> Backend {
        match self.store {
            Store::Observations(_) => Backend::Observations,
            Store::Frequencies(_) => Backend::Frequencies,
            Store::PrefixSums(_) => Backend::PrefixSums,
            Store::OnTheFly(_) => Backend::OnTheFly,
        }
    }

    fn check_query(&self, query: &RangeQuery) -> Result<()> {
        query.check(&self.domain)?;
        let dims = self.domain.dims();
        for (d, (&(_, r), &m)) in query.bounds.iter().zip(dims).enumerate().take(self.dummy_dims) {
            if r >= m {
                return Err(domain_err!("dimension {} has {} original values, query reaches {r}", d + 1, m - 1));
            }
        }
        Ok(())
    }

    /// The unscaled answer `range_row_sum(R) . o`.
    fn unscaled(&self, query: &RangeQuery) -> Result<f64> {
        Ok(match &self.store {
            Store::Observations(obs) => range_row_sum(query, &self.domain)?.dot(obs.values()),
            Store::Frequencies(freq) => {
                query.cells().iter().map(|x| freq[self.domain.flat_index_unchecked(x) - 1]).sum()
            }
            Store::PrefixSums(prefix) => inclusion_exclusion(prefix, query, &self.domain),
            Store::OnTheFly(reports) => {
                let row = range_row_sum(query, &self.domain)?;
                row.entries
                    .iter()
                    .map(|&(i, c)| {
                        let x = self.domain.coords(i).expect("index from a valid row");
                        c * reports.iter().map(|r| r.cell_product(&x) as i64).sum::<i64>() as f64
                    })
                    .sum()
            }
        })
    }
}

impl RangeOracle for Estimator {
    fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    fn estimate_range(&self, query: &RangeQuery) -> Result<f64> {
        self.check_query(query)?;
        Ok(self.scale * self.unscaled(query)?)
    }

    fn owner_count(&self) -> Option<u64> {
        Some(self.owner_count)
    }
}

fn scale_for(channel: &FlipChannel, domain: &DomainSpec) -> f64 {
    channel.debias().powi(domain.num_dims() as i32)
}

fn unscaled_frequencies(obs: &Observations) -> Vec<f64> {
    let dom = obs.domain();
    (1..=dom.total_size())
        .into_par_iter()
        .map(|i| {
            let x = dom.coords(i).expect("index in range");
            binv_row_unchecked(&x, dom).dot(obs.values())
        })
        .collect()
}

fn binv_row_unchecked(x: &[usize], domain: &DomainSpec) -> SparseRow {
    binv_row(x, domain).expect("coordinates from the domain")
}

/// In-place D-dimensional prefix sums, one pass per dimension.
fn prefix_sums(mut v: Vec<f64>, domain: &DomainSpec) -> Vec<f64> {
    let strides = domain.strides();
    for (d, &m) in domain.dims().iter().enumerate() {
        let s = strides[d];
        for i in 0..v.len() {
            if (i / s) % m != 0 {
                v[i] += v[i - s];
            }
        }
    }
    v
}

fn inclusion_exclusion(prefix: &[f64], query: &RangeQuery, domain: &DomainSpec) -> f64 {
    let dims = query.num_dims();
    let mut total = 0.0;
    'corners: for mask in 0u32..(1 << dims) {
        let mut corner = Vec::with_capacity(dims);
        for (d, &(l, r)) in query.bounds.iter().enumerate() {
            let v = if mask >> d & 1 == 1 { l - 1 } else { r };
            if v == 0 {
                continue 'corners;
            }
            corner.push(v);
        }
        let p = prefix[domain.flat_index_unchecked(&corner) - 1];
        if mask.count_ones() % 2 == 0 {
            total += p;
        } else {
            total -= p;
        }
    }
    total
}

/// Single-value error bound with constant 1:
/// `a^{2D} 2^{-D} (1 - a^{-2D}) n` where `a = (e^eps + 1) / (e^eps - 1)`.
pub fn variance_bound_point(epsilon: f64, dims: usize, n: u64) -> f64 {
    variance_bound_range(epsilon, dims, dims, n)
}

/// Range error bound with `D_R` nontrivial dimensions.
pub fn variance_bound_range(epsilon: f64, dims: usize, nontrivial: usize, n: u64) -> f64 {
    let a = 1.0 / (epsilon / 2.0).tanh();
    let a2d = a.powi(2 * dims as i32);
    a2d * 0.5f64.powi(nontrivial as i32) * (1.0 - 1.0 / a2d) * n as f64
}
