//! Weighted range counts `sum_i w_i 1[x_i in R]`.
//!
//! Private weights are randomly rounded to `{1, 2}` (2 with probability
//! `w / Δ`) and carried as an extra size-2 dimension, so that
//! `Δ ĉ(R × [2, 2])` is unbiased. Public weights partition the owners into
//! groups that are estimated separately.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use super::encode::{encode_value, FlipChannel, ReportMatrix};
use super::estimate::{variance_bound_range, RangeOracle};
use super::transform::RangeQuery;
use crate::domain::DomainSpec;
use crate::error::{domain_err, shape_err, Result};
use crate::rng::{stream, Lane};

fn check_weight(w: f64, delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(domain_err!("weight bound must be positive, got {delta}"));
    }
    if !(0.0..=delta).contains(&w) {
        return Err(domain_err!("weight {w} outside [0, {delta}]"));
    }
    Ok(())
}

/// 2 with probability `w / Δ`, else 1.
pub fn round_weight<R: Rng + ?Sized>(w: f64, delta: f64, rng: &mut R) -> Result<usize> {
    check_weight(w, delta)?;
    Ok(if rng.gen::<f64>() < w / delta { 2 } else { 1 })
}

/// Domain of the weighted encoding: `domain` plus a trailing size-2 dimension.
pub fn weighted_domain(domain: &DomainSpec) -> Result<DomainSpec> {
    domain.with_extra_dim(2)
}

pub fn encode_weighted_private<R: Rng + ?Sized>(
    x: &[usize],
    w: f64,
    delta: f64,
    domain: &DomainSpec,
    channel: &FlipChannel,
    rng: &mut R,
) -> Result<ReportMatrix> {
    domain.check(x)?;
    let rounded = round_weight(w, delta, rng)?;
    let mut point = x.to_vec();
    point.push(rounded);
    encode_value(&point, &weighted_domain(domain)?, channel, rng)
}

/// Owner `i` rounds on stream `(seed, trial, Weight, i)` and encodes on `(seed, trial, Encode, i)`.
pub fn encode_weighted_batch(
    values: &[Vec<usize>],
    weights: &[f64],
    delta: f64,
    domain: &DomainSpec,
    channel: &FlipChannel,
    seed: u64,
    trial: u64,
) -> Result<Vec<ReportMatrix>> {
    if values.len() != weights.len() {
        return Err(shape_err!("{} values but {} weights", values.len(), weights.len()));
    }
    let extended = weighted_domain(domain)?;
    values
        .par_iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (x, &w))| {
            domain.check(x)?;
            let rounded = round_weight(w, delta, &mut stream(seed, trial, Lane::Weight, i as u64))?;
            let mut point = x.clone();
            point.push(rounded);
            encode_value(&point, &extended, channel, &mut stream(seed, trial, Lane::Encode, i as u64))
        })
        .collect()
}

/// `Δ ĉ(R × [2, 2])` from an oracle over the weighted domain.
pub fn estimate_weighted_private<O: RangeOracle + ?Sized>(oracle: &O, query: &RangeQuery, delta: f64) -> Result<f64> {
    let dims = oracle.domain().dims();
    if dims.len() != query.num_dims() + 1 || dims[dims.len() - 1] != 2 {
        return Err(shape_err!(
            "weighted oracle over {:?} does not extend a {}-dimensional query by a size-2 weight dimension",
            dims,
            query.num_dims()
        ));
    }
    if delta == 0.0 {
        return Ok(0.0);
    }
    Ok(delta * oracle.estimate_range(&query.with_extra_dim(2, 2))?)
}

/// Range bound for the private-weight estimator with constant 1: the
/// unweighted bound over `D + 1` dimensions with `D_R + 1` nontrivial, times `Δ²`.
pub fn variance_bound_weighted_private(epsilon: f64, dims: usize, nontrivial: usize, delta: f64, n: u64) -> f64 {
    delta * delta * variance_bound_range(epsilon, dims + 1, nontrivial + 1, n)
}

/// Splits owner indices by exact weight, in increasing weight order.
pub fn group_by_weight(weights: &[f64]) -> Result<Vec<(f64, Vec<usize>)>> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &w) in weights.iter().enumerate() {
        if !(w.is_finite() && w >= 0.0) {
            return Err(domain_err!("weight {w} of owner {} is not a finite non-negative number", i + 1));
        }
        // +0.0 and -0.0 must share a group
        groups.entry((w + 0.0).to_bits()).or_default().push(i);
    }
    Ok(groups.into_iter().map(|(bits, idx)| (f64::from_bits(bits), idx)).collect())
}

/// `sum_w w ĉ_{g_w}(R)` over per-weight group oracles.
pub fn estimate_weighted_nonprivate<O: RangeOracle>(groups: &[(f64, O)], query: &RangeQuery) -> Result<f64> {
    groups.iter().map(|(w, oracle)| Ok(w * oracle.estimate_range(query)?)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdrq::encode::encode_batch;
    use crate::mdrq::estimate::{Backend, Estimator};
    use crate::rng::owner_stream;

    #[test]
    fn rounding_extremes_and_rate() {
        let mut rng = owner_stream(4, 0);
        assert!((0..100).all(|_| round_weight(10.0, 10.0, &mut rng).unwrap() == 2));
        assert!((0..100).all(|_| round_weight(0.0, 10.0, &mut rng).unwrap() == 1));
        let twos = (0..10_000).filter(|_| round_weight(5.0, 10.0, &mut rng).unwrap() == 2).count();
        assert!((twos as f64 / 1e4 - 0.5).abs() < 0.02);
        assert!(round_weight(11.0, 10.0, &mut rng).is_err());
        assert!(round_weight(-1.0, 10.0, &mut rng).is_err());
        assert!(round_weight(0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn private_weights_at_the_cap_are_exact_without_noise() {
        let dom = DomainSpec::line(4).unwrap();
        let values: Vec<Vec<usize>> = vec![vec![1], vec![2], vec![2], vec![4]];
        let weights = vec![3.0; 4];
        let ch = FlipChannel::noiseless();
        let reports = encode_weighted_batch(&values, &weights, 3.0, &dom, &ch, 1, 0).unwrap();
        let est = Estimator::from_reports(reports, &weighted_domain(&dom).unwrap(), &ch, Backend::Observations).unwrap();
        let q: RangeQuery = "1:2".parse().unwrap();
        assert_eq!(estimate_weighted_private(&est, &q, 3.0).unwrap(), 9.0);
        assert_eq!(estimate_weighted_private(&est, &q, 0.0).unwrap(), 0.0);
        assert!(estimate_weighted_private(&est, &"1:2,1:1".parse().unwrap(), 3.0).is_err());
    }

    #[test]
    fn nonprivate_groups_without_noise() {
        let dom = DomainSpec::line(3).unwrap();
        let values: Vec<Vec<usize>> = vec![vec![1], vec![2], vec![3], vec![2]];
        let weights = [1.0, 2.0, 2.0, 1.0];
        let ch = FlipChannel::noiseless();
        let groups: Vec<(f64, Estimator)> = group_by_weight(&weights)
            .unwrap()
            .into_iter()
            .map(|(w, idx)| {
                let vals: Vec<Vec<usize>> = idx.iter().map(|&i| values[i].clone()).collect();
                let reports = encode_batch(&vals, &dom, &ch, 0, 0).unwrap();
                (w, Estimator::from_reports(reports, &dom, &ch, Backend::Observations).unwrap())
            })
            .collect();
        assert_eq!(groups.len(), 2);
        assert_eq!(estimate_weighted_nonprivate(&groups, &"2:3".parse().unwrap()).unwrap(), 5.0);
        assert_eq!(estimate_weighted_nonprivate(&groups, &"1:3".parse().unwrap()).unwrap(), 6.0);
    }

    #[test]
    fn single_unit_group_is_the_unweighted_estimate() {
        let dom = DomainSpec::line(5).unwrap();
        let values: Vec<Vec<usize>> = (0..40).map(|i| vec![i % 5 + 1]).collect();
        let ch = FlipChannel::new(1.0).unwrap();
        let est = Estimator::from_reports(encode_batch(&values, &dom, &ch, 2, 0).unwrap(), &dom, &ch, Backend::Observations)
            .unwrap();
        let q: RangeQuery = "2:4".parse().unwrap();
        let plain = est.estimate_range(&q).unwrap();
        assert_eq!(estimate_weighted_nonprivate(&[(1.0, est)], &q).unwrap(), plain);
    }

    #[test]
    fn grouping_rejects_bad_weights() {
        assert!(group_by_weight(&[1.0, f64::NAN]).is_err());
        let g = group_by_weight(&[0.0, -0.0, 2.5]).unwrap();
        assert_eq!(g.len(), 2);
    }
}
