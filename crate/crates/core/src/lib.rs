pub mod domain;
pub mod error;
pub mod io;
pub mod matrix_mech;
pub mod mdrq;
pub mod metrics;
pub mod quantile;
pub mod rng;
pub mod sim;

pub use domain::DomainSpec;
pub use error::{Error, Result};
pub use metrics::{Metric, MetricSpec};
