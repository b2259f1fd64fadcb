//! Decentralized secure state tracking for linear systems observed by a
//! network of scalar sensors, some of which may be spoofed.
//!
//! Every node runs a dynamic average consensus observer that tracks a
//! compressed version of all nodes' measurement windows, then decodes the
//! plant state from that compressed vector by exhaustive-support secure
//! state reconstruction.
//!
//! Module map:
//! - [`model`]: plant, companion form, observability stack, discretization.
//! - [`graph`]: communication graph and Laplacian spectrum.
//! - [`detect`]: PBH detectability, sparse detectability (also relative to a
//!   compression matrix) and the solvability gate.
//! - [`compress`]: certification and random design of the compression matrix.
//! - [`tracker`]: the consensus observer, gain selection and diagnostics.
//! - [`adversary`]: attack generation and the local sanity check.
//! - [`decoder`]: secure state reconstruction and its error bound.
//! - [`sim`]: synchronous-round simulator and trace output.
//! - [`config`]: scenario configuration files.
//! - [`cli`]: the `dsst` command-line tool.

pub mod adversary;
pub mod cli;
pub mod compress;
pub mod config;
pub mod decoder;
pub mod detect;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod sim;
pub mod tracker;

pub use error::Error;
