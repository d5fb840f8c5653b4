//! Minimal reverse-mode autodiff on dense f64 tensors.
//!
//! A [`Tape`] records one forward computation; [`Tape::backward`] replays
//! it in reverse to fill gradients. Parameters live in a [`ParamStore`]
//! outside any tape, so training builds a fresh tape per sample and
//! scatters gradients back into a [`Gradients`] accumulator.

mod gradcheck;
mod optim;
mod params;
mod tape;

pub use gradcheck::{
    max_rel_error, numeric_gradient, primitive_cases, primitive_suite, run_case, GradCheck,
    PrimitiveCase,
};
pub use optim::{epoch_rng, step_decay_lr, Adam, Sgd};
pub use params::{read_weights, write_weights, Gradients, ParamId, ParamStore};
pub use tape::{Tape, TensorId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("weight file format error: {0}")]
    Format(String),
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidArgument("zero-sized tensor dimension".into()));
        }
        if data.len() != n {
            return Err(NnError::InvalidArgument(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        assert!(shape.iter().all(|&d| d > 0));
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1], data: vec![x] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }
}
