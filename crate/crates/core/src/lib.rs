//! Random walks reflected off infinity on infinite weighted graphs, and the
//! objects built from them: free spanning forests sampled by Aldous–Broder
//! and Wilson, Green's functions and Gaussian free fields with free
//! boundary at infinity, and Tutte embeddings of planar maps.
//!
//! Infinite graphs are explored through [`graph::GraphOracle`] and cut down
//! to finite levels by an [`graph::Exhaustion`]. Everything stochastic is
//! driven by [`walk::LevelChainKernel`], the level-n chain that jumps from
//! the outer shell back into the graph by harmonic measure.

pub mod error;
pub mod forest;
pub mod graph;
pub mod green;
pub mod harmonic;
pub mod linalg;
pub mod par;
pub mod planar;
pub mod rng;
pub mod stats;
pub mod verify;
pub mod walk;

pub use error::{Error, Result};
