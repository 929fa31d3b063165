//! Federated graph learning with global self-supervision: clients train a
//! two-layer GCN on their own subgraphs while the server fuses their
//! predictions and embeddings into pseudo labels and a pseudo graph.

pub mod cli;
pub mod client;
pub mod config;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod io;
pub mod orchestrator;
pub mod partition;
pub mod rng;
pub mod server;
pub mod sparse;

pub use error::{FedglError, Result};
