use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::DomainSpec;
use crate::error::{domain_err, Result};
use crate::mdrq::RangeQuery;
use crate::rng::{stream, Lane};

/// `Pr[v] ∝ v^-s` over `1..=m`.
pub fn zipf_pmf(m: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=m).map(|v| (v as f64).powf(-exponent)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / z).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Real weights uniform on `[0, Δ]`, rounded privately by each owner.
    #[default]
    Private,
    /// Integer weights uniform on `{0, ..., Δ}`, known to the collector.
    Nonprivate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub values: Vec<Vec<usize>>,
    pub weights: Option<Vec<f64>>,
}

struct Samplers(Vec<WeightedIndex<f64>>);

impl Samplers {
    fn new(domain: &DomainSpec, exponent: f64) -> Result<Self> {
        if !(exponent.is_finite() && exponent > 1.0) {
            return Err(domain_err!("Zipf exponent must exceed 1, got {exponent}"));
        }
        let dists = domain
            .dims()
            .iter()
            .map(|&m| WeightedIndex::new(zipf_pmf(m, exponent)).expect("positive finite weights"))
            .collect();
        Ok(Samplers(dists))
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        self.0.iter().map(|d| d.sample(rng) + 1).collect()
    }
}

/// `n` owners with independent Zipf coordinates; owner `i` draws from `(seed, trial, Data, i)`.
pub fn gen_zipf_trial(n: usize, domain: &DomainSpec, exponent: f64, seed: u64, trial: u64) -> Result<Vec<Vec<usize>>> {
    let samplers = Samplers::new(domain, exponent)?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| samplers.draw(&mut stream(seed, trial, Lane::Data, i as u64)))
        .collect())
}

pub fn gen_zipf(n: usize, domain: &DomainSpec, exponent: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    gen_zipf_trial(n, domain, exponent, seed, 0)
}

/// Zipf values plus a weight per owner, drawn after the coordinates on the same stream.
pub fn gen_weighted(
    n: usize,
    domain: &DomainSpec,
    exponent: f64,
    delta: f64,
    mode: WeightMode,
    seed: u64,
    trial: u64,
) -> Result<Dataset> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(domain_err!("weight bound must be positive, got {delta}"));
    }
    if mode == WeightMode::Nonprivate && delta.fract() != 0.0 {
        return Err(domain_err!("public integer weights need an integer bound, got {delta}"));
    }
    let samplers = Samplers::new(domain, exponent)?;
    let (values, weights): (Vec<_>, Vec<_>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, trial, Lane::Data, i as u64);
            let x = samplers.draw(&mut rng);
            let w = match mode {
                WeightMode::Private => rng.gen_range(0.0..=delta),
                WeightMode::Nonprivate => rng.gen_range(0..=delta as u64) as f64,
            };
            (x, w)
        })
        .unzip();
    Ok(Dataset { values, weights: Some(weights) })
}

/// Uniform random box: per dimension two uniform draws, sorted.
pub fn random_range<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> RangeQuery {
    let bounds = dims
        .iter()
        .map(|&m| {
            let (a, b) = (rng.gen_range(1..=m), rng.gen_range(1..=m));
            (a.min(b), a.max(b))
        })
        .collect();
    RangeQuery { bounds }
}

/// Queries `0..count` of a trial, query `q` drawn from `(seed, trial, Query, q)`.
pub fn random_ranges(dims: &[usize], count: usize, seed: u64, trial: u64) -> Vec<RangeQuery> {
    (0..count).map(|q| random_range(dims, &mut stream(seed, trial, Lane::Query, q as u64))).collect()
}

pub fn true_count(values: &[Vec<usize>], query: &RangeQuery) -> u64 {
    values.iter().filter(|x| query.contains(x)).count() as u64
}

pub fn true_weighted_count(values: &[Vec<usize>], weights: &[f64], query: &RangeQuery) -> f64 {
    values.iter().zip(weights).filter(|(x, _)| query.contains(x)).map(|(_, w)| w).sum()
}

/// Counts per cell, indexed by flat index minus one.
pub fn histogram(values: &[Vec<usize>], domain: &DomainSpec) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; domain.total_size()];
    for x in values {
        counts[domain.flat_index(x)? - 1] += 1;
    }
    Ok(counts)
}
