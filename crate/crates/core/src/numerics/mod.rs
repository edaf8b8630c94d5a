//! Dense `f64` tensors with reverse-mode differentiation over the operator
//! set the search space needs.

pub mod gradcheck;
pub mod kernels;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use kernels::ConvSpec;
pub use ops::{
    apply_stat_updates, dil_conv3x3, sep_conv3x3, ConvNormParams, Ctx, NormParams, PointwiseParams,
    SepConvParams, Stencil,
};
pub use optim::{Gradients, Param, ParamGroup, ParamId, ParamStore, Sgd};
pub use tape::{channel_softmax, Tape, Var};
pub use tensor::{softmax_vec, Shape, Tensor};
