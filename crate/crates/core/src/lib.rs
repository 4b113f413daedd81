//! Hierarchical flexibility dispatch for distribution grids.
//!
//! Online feedback optimization controllers run in closed loop with a
//! steady-state AC power-flow plant. Each controller supervises one grid
//! layer and either minimizes curtailment (the primary, at the top) or tracks
//! an active-power request at its point of common coupling (secondaries).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid_model;
pub mod hierarchy;
pub mod ofo;
pub mod plant;
pub mod powerflow;
pub mod qp;
pub mod sensitivity;
pub mod sim;
pub mod voltvar;

pub use error::{Error, Result};
