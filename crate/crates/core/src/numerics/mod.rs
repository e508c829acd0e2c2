//! Dense and sparse matrix arithmetic, a reverse-mode tape and the optimizer.

pub mod dense;
pub mod optim;
pub mod sparse;
pub mod tape;

pub use dense::{log_sigmoid, sigmoid, DenseMatrix};
pub use optim::OptimizerState;
pub use sparse::SparseAdjacency;
pub use tape::{EdgeMessages, Function, Gradients, Tape, Var};
