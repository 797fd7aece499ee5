//! Streaming fabric for scientific experiments.
//!
//! A broker with namespaced, partitioned topics and consumer groups; agents that
//! chunk large payloads or hand them off through a claim-check object store;
//! experiment capture with timing-faithful replay; storage connectors; and the
//! benchmark harnesses used to characterize all of it.

pub mod agent;
pub mod broker;
pub mod connectors;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod service;
pub mod wire;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod test_support;
