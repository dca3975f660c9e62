//! Evolutionary pathway selection and transfer for modular neural networks.
//!
//! A [`network::ModuleBank`] holds `L` layers of `M` small ReLU modules. A
//! [`genotype::Genotype`] picks up to `N` of them per layer; the
//! [`evolution`] module searches over genotypes with a binary-tournament
//! (microbial) genetic algorithm while SGD trains the selected modules, and
//! [`transfer`] freezes the best source pathway before re-evolving on a
//! destination task. [`audio`] turns speech into 64x64x3 log-Mel segments,
//! [`data`] handles manifests and subject-independent splits, and
//! [`metrics`] scores the results.

pub mod audio;
pub mod checkpoint;
pub mod container;
pub mod data;
pub mod error;
pub mod evolution;
pub mod genotype;
pub mod hparams;
pub mod metrics;
pub mod network;
pub mod par;
pub mod transfer;

pub use error::{Error, Result};
pub use genotype::Genotype;
pub use hparams::HyperParams;
pub use network::{Batch, ModuleBank};
