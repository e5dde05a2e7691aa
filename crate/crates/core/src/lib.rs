//! Structure-weighted split-conformal intervals for conditional treatment
//! effects when the causal graph is uncertain.
//!
//! The pipeline samples candidate DAGs from an edge prior, prunes them with
//! partial-correlation tests, extracts backdoor adjustment sets, weights the
//! resulting strategies by BIC plus a Bernoulli structural prior, fits doubly
//! robust pseudo-outcomes per strategy, and calibrates a composite conformal
//! score over the weighted aggregate.

pub mod conformal;
pub mod dataset;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod graph;
pub mod identification;
pub mod independence;
pub mod linalg;
pub mod pipeline;
pub mod prior;
pub mod weighting;

pub use error::{Error, Result};
