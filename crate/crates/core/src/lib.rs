//! Discrete optimal transport toolkit.
//!
//! Exact network-simplex transport, entropic Sinkhorn scaling in the log
//! domain, Nystrom-factored Sinkhorn with `O(ns)` memory, and projection
//! based Monge-map estimation (random, sliced, and SAVE-guided projection
//! pursuit).

pub mod error;
pub mod exact;
pub mod gaussian;
pub mod measures;
pub mod nystrom;
pub mod projection;
pub mod sinkhorn;

pub use error::{OtError, Result};
