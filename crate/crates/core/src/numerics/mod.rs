//! Numeric foundation: math kernels, the autodiff graph, the parameter
//! store, AdamW, and the finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod store;

pub use gradcheck::{grad_check, GradCheckReport, GradMap};
pub use graph::{Graph, VarId};
pub use kernels::{cross_entropy, gelu, l1_loss, l2_normalize, layer_norm};
pub use optim::{OptimConfig, OptimState};
pub use store::{Binder, Param, ParamStore};
