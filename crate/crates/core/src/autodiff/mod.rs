//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! Only the primitives the dimension-search model graph needs are provided.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use graph::{
    argmax, logloss, sigmoid, Activation, BatchNormMode, BatchNormState, Gradients, Graph, Var,
    PROB_CLAMP,
};
pub(crate) use graph::softmax_in_place;
pub use tensor::{Param, ParamGroup, ParamId, ParamStore, Tensor};
