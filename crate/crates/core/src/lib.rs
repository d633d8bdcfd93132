//! Cycle-level simulator of a GNN inference accelerator built from hybrid
//! dense/sparse systolic-array tiles, a four-tile Strassen GEMM cluster, and
//! greedy sparse-tile load balancing.
//!
//! The crate is organized bottom-up:
//!
//! - [`matrix`]: dense/sparse containers, block partitioning, and the
//!   brute-force reference products everything is checked against
//! - [`pe`]: the hybrid processing element, its searchable FIFO, and the
//!   event-driven systolic tile
//! - [`strassen`]: the four-tile cluster and its six-group schedule
//! - [`balancer`]: greedy packing of complementary sparse tiles
//! - [`scheduler`]: ring/chain mapping of work onto tiles
//! - [`gnn`], [`engine`], [`reference`]: layer specs, the hardware lowering,
//!   and the independent dense-math check
//! - [`graph`], [`graphgen`], [`io`]: graph containers, synthetic
//!   generation, and file formats
//! - [`config`], [`report`]: run configuration and the emitted counters

pub mod balancer;
pub mod config;
pub mod engine;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod graphgen;
pub mod io;
pub mod matrix;
pub mod pe;
pub mod reference;
pub mod report;
pub mod scheduler;
pub mod strassen;

pub use config::EngineConfig;
pub use engine::Engine;
pub use error::{Result, SimError};
pub use graph::Graph;
pub use matrix::{dense_matmul_oracle, partition_2x2, spmm_oracle, DenseMatrix, SparseTile};
pub use report::SimReport;
