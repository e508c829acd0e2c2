//! Continuous-time sequential recommendation with an autoregressive graph ODE.
//!
//! Training interactions are cut into `K` time intervals. Inside each interval
//! node embeddings evolve under a linear graph ODE ([`ode`]); at each interval
//! boundary a temporal attention layer aggregates the interactions observed so
//! far ([`attention`]). The per-layer states are averaged into final user and
//! item representations and trained with a pairwise ranking loss ([`model`]).
//! [`eval`] holds the ranking metrics, the experiment driver and file formats.

pub mod attention;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod ode;

pub use error::{Error, Result};
