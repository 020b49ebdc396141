//! Dense tensors with reverse-mode autodiff, plus the attention, sampling
//! and pooling kernels the encoders, decoder and predictors are built from.

pub mod blob;
mod gradcheck;
mod kernels;
pub mod nn;
mod ops;
mod optim;
mod real;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use kernels::{bilinear_sample, deform_sample, lift_outer, scatter_add_pool, DeformLayout, Level, Pooled};
pub use nn::{
    attention, deformable_attention, join, AttentionConfig, DeformableAttention, DeformableConfig, Init, LayerNorm, Linear,
    Mlp, Module, MultiHeadAttention, SamplingPlan,
};
pub use optim::{Adam, AdamConfig};
pub use real::{lit, Real};
pub use tensor::{Param, Tape, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("point {point:?} lies outside the {height}x{width} grid")]
    OutOfGrid { point: [f64; 2], height: usize, width: usize },
    #[error("tensor blob parse error at byte {offset}: {reason}")]
    Blob { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NumError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        NumError::Shape { op, detail }
    }
}
