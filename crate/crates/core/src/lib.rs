//! Constant-factor approximation pipelines for Nash social welfare with XOS
//! and subadditive valuations, together with brute-force exact oracles that
//! check every stage on small instances.

// `!(x > 0.0)` guards reject NaN as well as non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concentration;
pub mod error;
pub mod fuzz;
pub mod generators;
pub mod lp;
pub mod matching;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod relaxation;
pub mod rounding;
pub mod splitting;
pub mod valuations;

pub use error::{NswError, Result};
pub use model::{
    geometric_mean, load_instance, nsw_value, serialize_instance, Allocation, ConfigSolution,
    Instance, ItemFractional, ItemSet, Matching,
};
pub use valuations::{validate_valuation, PriceVector, Valuation};
