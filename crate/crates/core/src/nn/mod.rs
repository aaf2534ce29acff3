//! Minimal neural-network substrate: autodiff graph, kernels, parameter
//! storage and the optimizer.

pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;

pub use graph::{Gradients, Graph, Var};
pub use kernels::{Interp, WindowLayout};
pub use optim::{AdamW, CosineSchedule};
pub use params::{Bound, ParamSet};
