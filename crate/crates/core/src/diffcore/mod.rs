//! Minimal reverse-mode differentiation engine: NHWC convolutions, pooling,
//! activations, affine maps, softmax, and the fused RL loss heads.

mod gradcheck;
mod graph;
pub mod kernels;
mod optim;

pub use gradcheck::{grad_check, grad_check_all};
pub use graph::{
    huber, softmax_vec, ActKind, Gradients, Graph, NodeId, Param, ParamId, ParamKind, ParamStore,
    PpoTargets, PpoTerms,
};
pub use kernels::PoolKind;
pub use optim::{clip_global_norm, Adam};

#[cfg(test)]
mod tests;
