//! Multi-dimensional range counting under the scaled-L1 metric.
//!
//! Each owner sends one ±1 threshold vector per dimension with every bit
//! flipped independently. The collector aggregates tensor products of the
//! rows into observations `o` and estimates counts through the sparse inverse
//! transform.

mod encode;
mod estimate;
mod observations;
mod transform;
mod weighted;

pub use encode::{encode_batch, encode_value, likelihood, FlipChannel, ReportMatrix};
pub use estimate::{variance_bound_point, variance_bound_range, Backend, Estimator, RangeOracle};
pub use observations::{accumulate_observations, Observations, MAX_DENSE_CELLS};
pub use transform::{binv_row, range_row_sum, RangeQuery, SparseRow};
pub use weighted::{
    encode_weighted_batch, encode_weighted_private, estimate_weighted_nonprivate, estimate_weighted_private,
    group_by_weight, round_weight, variance_bound_weighted_private, weighted_domain,
};

/// Point estimate `ĉ_x` straight from observations.
pub fn estimate_point(obs: &Observations, x: &[usize], channel: &FlipChannel) -> crate::Result<f64> {
    let scale = channel.debias().powi(obs.domain().num_dims() as i32);
    Ok(scale * binv_row(x, obs.domain())?.dot(obs.values()))
}

/// Range estimate `ĉ(R)` straight from observations.
pub fn estimate_range(obs: &Observations, query: &RangeQuery, channel: &FlipChannel) -> crate::Result<f64> {
    let scale = channel.debias().powi(obs.domain().num_dims() as i32);
    Ok(scale * range_row_sum(query, obs.domain())?.dot(obs.values()))
}
