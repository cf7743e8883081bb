//! Minimal tensor and layer kernel: character codec, reverse-mode graph,
//! parameter storage and the Adam optimizer.

pub mod codec;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;

pub use codec::{CharCodec, CODEC_VERSION, EMBEDDING_ROWS, UNKNOWN_INDEX};
pub use graph::{Gradients, Graph, Mode, RunningStats, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Binding, ParamStore};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("input of length {len} is shorter than filter width {width}")]
    TooShort { len: usize, width: usize },
    #[error("empty pooling window")]
    EmptyPoolingWindow,
    #[error("batch norm in train mode needs at least 2 samples")]
    BatchTooSmall,
    #[error("variable is detached from this graph")]
    Detached,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
}
