//! Multi-view binary hashing with query-adaptive ranking.
//!
//! The crate is organized around the offline/online split of a hash-table
//! search system:
//!
//! - [`dataset`]: multi-view vector ingestion, splits, ground truth and
//!   synthetic data.
//! - [`hashing`]: LSH / PCAH / ITQ hash functions, packed codes and plain
//!   Hamming ranking.
//! - [`anchors`]: anchor sets, sparse anchor embeddings and the
//!   embedding-space similarity used to pick query neighbors.
//! - [`qrank`]: query-adaptive bit weights, mutual-information based
//!   calibration (replicator dynamics) and weighted Hamming ranking.
//! - [`fusion`]: per-table candidate graphs, graph superposition and
//!   random walk with restart reranking across tables.
//! - [`eval`]: precision / recall / AP / MAP and brute-force oracles.
//! - [`config`] and [`bundle`]: run configuration and the on-disk index.

pub mod anchors;
pub mod bundle;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod hashing;
pub mod index;
pub mod qrank;

mod io;

pub use error::{Error, Result};
