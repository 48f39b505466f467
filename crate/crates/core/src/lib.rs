//! K-order graph attention transformer for 2D-to-3D pose lifting, and a
//! sparse-to-dense attention network for pose-to-mesh shape estimation.

// NaN-rejecting `!(x > 0.0)` checks and index-heavy numeric loops are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::should_implement_trait)]
pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{KogError, Result};
