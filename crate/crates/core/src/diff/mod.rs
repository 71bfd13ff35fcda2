//! Minimal differentiable substrate: dense matrix tape, layers, optimizers
//! and a finite-difference gradient checker.

mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;

pub use gradcheck::{grad_check, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{Graph, Mat, Var};
pub use layers::{sinusoidal_positions, AttentionBlock, LayerNorm, Linear, Mlp};
pub use optim::{sgd_step, Adam, OptimizerConfig};
pub use params::{Grads, Init, ParamId, ParamStore};

#[allow(unused_imports)]
pub(crate) use graph::softplus;
