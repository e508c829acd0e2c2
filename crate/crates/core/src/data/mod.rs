//! Interaction logs, chronological splitting and the interval-partitioned
//! training graph.

mod adjacency;
mod hybrid;
mod log;
mod split;

pub use adjacency::{build_adjacency, distinct_degrees, structural_pairs};
pub use hybrid::{build_hybrid_system, EdgeView, HybridSystem};
pub use log::{
    load, parse_amazon, parse_amazon_str, parse_movielens, parse_movielens_str, DatasetFormat, InteractionLog,
    TemporalEdge,
};
pub use split::{chronological_split, SplitRatios, Splits};
