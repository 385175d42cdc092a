//! Interval aggregation, metrics, data splits and the experiment runners.

mod aggregate;
mod corpus;
mod experiment;
mod kfold;
mod metrics;

pub use aggregate::*;
pub use corpus::*;
pub use experiment::*;
pub use kfold::*;
pub use metrics::*;
