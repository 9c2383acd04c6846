//! Federated learning across clients with heterogeneous architectures and
//! noisy, non-IID private labels.
//!
//! Each client trains its own network on private data with the Symmetric
//! loss (`λ·CE + RCE`), then aligns its softmax outputs on a shared public
//! set with every peer by minimising `KL(peer ‖ own)`. Only those output
//! distributions ever leave a client.
//!
//! Module map:
//!
//! - [`tensor`], [`nn`]: dense tensors, layers with manual backward passes, Adam
//! - [`losses`]: CE, RCE, Symmetric loss, KL and the peer-learning loss
//! - [`data`]: synthetic clusters, dataset files, Dirichlet partitioning, label noise
//! - [`models`]: the heterogeneous architecture zoo
//! - [`federation`]: clients, knowledge exchange and the round loop
//! - [`config`], [`report`]: experiment configs, ablation grids, CSV/JSON output

// `!(x > 0.0)` style range checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod losses;
pub mod models;
pub mod nn;
pub mod report;
pub mod seed;
pub mod tensor;

pub use config::{parse_config, parse_config_str, FederationConfig, NoiseKind};
pub use error::{Error, Result};
pub use federation::{run_federation, Client, ExperimentResult, Federation};
pub use tensor::Tensor;
