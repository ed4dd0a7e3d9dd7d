//! Differentiable compute substrate: tensors, a reverse-mode tape, the layers
//! both models are built from, Adam, and a finite-difference checker.

mod adam;
mod gradcheck;
mod graph;
mod layers;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use layers::{
    bce_node, cross_entropy_node, dense, init_uniform, init_zeros, Activation, Attention,
    AttentionKind, BiLstm, Dense, Keys, Lstm, LstmState, INIT_SCALE,
};
pub use tensor::{Gradients, ParamId, ParamStore, Tensor};

use thiserror::Error;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("id {id} out of range for table with {rows} rows")]
    InvalidId { id: usize, rows: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("attention over an empty key set")]
    EmptyKeys,
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("divergence: {0}")]
    Divergence(String),
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    graph::softmax_in_place(&mut v);
    v
}

pub fn cross_entropy(dist: &[f64], target: usize) -> Result<f64, NnError> {
    let p = dist.get(target).ok_or(NnError::IndexOutOfRange {
        index: target,
        len: dist.len(),
    })?;
    Ok(-p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
}

pub fn binary_cross_entropy(p: f64, label: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
