//! Trust management for UAV networks: trust scoring, a hash-chained ledger,
//! federated trust-model learning, a network simulator, baseline schemes and
//! an experiment harness.

pub mod baselines;
pub mod config;
pub mod engine;
pub mod error;
pub mod fed;
pub mod harness;
pub mod ledger;
pub mod metrics;
pub mod netsim;
pub mod trust;

pub use error::{Error, Result};
