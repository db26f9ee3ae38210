//! Reverse-mode autodiff over dense `f64` tensors and the layers built on it.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport, GRAD_FLOOR};
pub use layers::{
    attention, film, gated_activation, positional_encoding, time_embedding, Conv1d, LayerNorm,
    Linear, MultiHeadAttention, LAYER_NORM_EPS,
};
pub use optim::{global_norm, Sgd};
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
