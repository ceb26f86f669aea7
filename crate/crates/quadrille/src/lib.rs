//! quadrille: a deterministic, desk-scale simulator and analysis toolkit for
//! hybrid-parallel neural network training.
//!
//! The crate models training runs that combine data parallelism with a
//! three-dimensional tensor-parallel decomposition of every weight matrix.
//! Workers form a virtual 4D grid (X, Y, Z, data). Weight matrices are tiled
//! over the X-Y plane, sharded along Z, and replicated across the data axis;
//! activations travel through ring-based collectives whose byte volumes and
//! timings the crate reproduces exactly, in memory, on a single machine.
//!
//! Everything is deterministic: the same seed and inputs produce the same
//! numbers, bytes, and files, bit for bit.
//!
//! # Modules
//!
//! - [`grid`]: the virtual 4D worker grid, rank/coordinate maps, process
//!   groups, and exhaustive configuration enumeration.
//! - [`simnet`]: an in-memory message transport with ring-algorithm
//!   collectives, byte accounting, and an event-driven timing engine with
//!   bandwidth sharing on node-boundary links.
//! - [`matrix`]: dense row-major matrices and the NN/NT/TN matmul kernels.
//! - [`pmm`]: the parallel matrix-multiplication layer itself: sharding,
//!   forward/backward over the grid, full training steps, a serial reference
//!   implementation, and the matmul-mode autotuner.
//! - [`perfmodel`]: the closed-form communication model, effective-bandwidth
//!   estimation, and configuration ranking.
//! - [`overlap`]: dependency-driven schedules that overlap communication
//!   with computation, and the resulting iteration timelines.
//! - [`flops`]: flop accounting and efficiency reporting against hardware
//!   peaks.
//! - [`cli`]: run configuration and drivers behind the `quadrille` binary.
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run -p quadrille --example grid_tour
//! cargo run -p quadrille --example ring_collectives
//! cargo run -p quadrille --example sharded_training
//! cargo run -p quadrille --example rank_configurations
//! cargo run -p quadrille --example overlap_schedules
//! cargo run -p quadrille --example tune_matmul
//! cargo run -p quadrille --example flops_report
//! ```
//!
//! The `quadrille` binary wraps the same entry points behind subcommands
//! (`rank-configs`, `simulate`, `verify`, `tune`, `flops`); see the README.

pub mod cli;
pub mod error;
pub mod flops;
pub mod grid;
pub mod matrix;
pub mod overlap;
pub mod perfmodel;
pub mod pmm;
pub mod simnet;

pub use error::{Error, Result};
