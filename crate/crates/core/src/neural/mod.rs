//! Dense numerical kernel: matrices, the GRU cell, softmax, the parameter
//! store and a reverse-mode tape.

pub mod gru;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gru::{encode_state, gru_init_state, gru_sequence, gru_step, GruStep};
pub use params::{
    AttnIds, GruIds, GruMode, GruParams, Layout, ModelParams, ModelShape, ParamId, ParamStore,
};
pub use tape::{GradTape, Var};
pub use tensor::{dot, sigmoid, softmax, Matrix};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("invalid model shape: {0}")]
    InvalidShape(String),
    #[error("{0} received an empty input")]
    EmptyInput(&'static str),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no parameters for vertical {0}")]
    UnknownVertical(usize),
    #[error("gradient tape was already consumed by a backward pass")]
    TapeConsumed,
    #[error("backward needs a scalar loss, got length {0}")]
    NotScalar(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
