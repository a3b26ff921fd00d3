//! Monge-map estimation by one-dimensional projections.
//!
//! One-dimensional transport is a sort. The estimators here repeatedly pick
//! a direction, sort the projected source against the projected target, and
//! move each source point along the direction to its sorted partner. They
//! differ only in how directions are chosen: random draws, averages over
//! several random draws (sliced), or the SAVE direction that best separates
//! the current source from the target (PPMM).

mod directions;
mod one_dim;
mod pursuit;
mod save;

pub use directions::{low_discrepancy_directions, random_direction, Direction, SobolSequence, MAX_SOBOL_DIM};
pub use one_dim::{otm_1d, OneDimTransport};
pub use pursuit::{
    diagnostic_directions, estimate_map_observed, ppmm, random_projection_otm, sliced_otm, sliced_wasserstein,
    DirectionSource, IterationRecord, IterationTrace, ProjectionConfig, ProjectionOutcome, PursuitMethod,
    StepView, StopReason, DEFAULT_DIAGNOSTIC_SLICES, DEFAULT_STALL_WINDOW, DEFAULT_TOL_ABS, DEFAULT_TOL_REL,
    MAX_ITERS_PER_DIMENSION,
};
pub use save::{save_direction, SaveResult, COVARIANCE_RIDGE};
