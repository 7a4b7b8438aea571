//! The embedding network: plain MLP or attention-augmented MLP, with exact
//! reverse-mode gradients and Adam with decoupled weight decay.
//!
//! Matrices are row-major `batch × features`; a linear layer computes
//! `x · W + b` with `W` shaped `fan_in × fan_out`.

mod adam;
mod config;
mod forward;
mod io;
mod params;

pub use adam::{adam_step, OptimizerState};
pub use config::{NetConfig, OutputMode};
pub use forward::{
    attention_forward, backward, backward_with_input, forward, forward_eval, forward_train, ForwardTrace, Mode,
};
pub use io::ModelDocument;
pub use params::{init_params, Gradients, Head, HiddenLayer, LayerGrads, ModelParams, ParamRole};
