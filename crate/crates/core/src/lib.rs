//! Functional and performance simulator for sparse-dense recommendation inference.
//!
//! The pipeline is embedding gather/reduce, bottom MLP, pairwise dot-product
//! feature interaction, top MLP and Sigmoid. [`reference`] is the plain oracle,
//! [`engine`] models the accelerator dataflow and emits an event log that
//! [`perf`] turns into latency and energy for three design points. [`cache`]
//! replays gather address traces through an LRU cache and [`report`] drives
//! the command-line experiments.

pub mod cache;
pub mod engine;
pub mod error;
pub mod kv;
pub mod perf;
pub mod reference;
pub mod report;
pub mod tensor;
pub mod workload;

pub use error::{Error, Result};
