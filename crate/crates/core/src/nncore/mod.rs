//! Dense tensors, reverse-mode differentiation, MLPs, Adam and minmax
//! scaling.

mod checkpoint;
mod mlp;
mod optim;
mod scaler;
mod tape;
mod tensor;

pub use checkpoint::{Architecture, Checkpoint, ParamArray, CHECKPOINT_FORMAT};
pub use mlp::{
    glorot_uniform, mlp_forward, Activation, BoundMlp, InputBlock, Layer, LayerNormParams,
    MlpParams,
};
pub use optim::{adam_step, clip_gradients, global_grad_norm, AdamState};
pub use scaler::{minmax_apply, minmax_fit, minmax_invert, MinMaxScaler};
pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor2D;
