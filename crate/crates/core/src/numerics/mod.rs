//! Dense tensor math with reverse-mode gradients and the model family built on it.

mod attention;
mod gradcheck;
mod loss;
mod models;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use attention::{
    attend, attention_param_shapes, multi_head, multi_head_attention, scaled_dot_product_attention,
    sinusoidal_positions, AttentionVars,
};
pub use gradcheck::{
    finite_difference_at, finite_difference_gradient, max_relative_error, relative_error, sample_coordinates,
    RELATIVE_ERROR_FLOOR,
};
pub use loss::label_smoothed_cross_entropy;
pub use models::{
    backward, build_model, model_forward, model_registry, AttentionClassifier, Forward, ForwardCtx, ForwardOutput,
    MaskedTokenModel, Mlp, Model, ModelFactory, ModelSpec, WeightPolicy,
};
pub use params::{init_parameters, Init, ParamShape, Parameters};
pub use tape::{add_gradients, flatten_gradients, unflatten_gradients, zero_gradients, Gradients, Tape, Var};
pub use tensor::{DType, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dtype mismatch: {0}")]
    DType(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("tape/parameter mismatch: {0}")]
    TapeMismatch(String),
    #[error("bad model input: {0}")]
    Input(String),
    #[error("malformed tensor encoding: {0}")]
    Format(String),
}

impl From<crate::codec::Truncated> for NumericsError {
    fn from(e: crate::codec::Truncated) -> Self {
        NumericsError::Format(e.to_string())
    }
}
