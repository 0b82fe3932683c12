//! Differentiable layers for the script classifiers.
//!
//! Every layer exposes a forward pass that records what its backward pass
//! needs, and a backward pass that accumulates parameter gradients into a
//! same-shaped gradient container. Layers are generic over [`Real`] so the
//! same code trains in `f32` and is gradient-checked in `f64`.

pub mod adam;
pub mod conv;
pub mod dense;
pub mod embedding;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod lstm;
pub mod pool;
pub mod tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use conv::ConvParams;
pub use dense::{DenseParams, OutputParams};
pub use embedding::{EmbeddingParams, VOCAB_SIZE};
pub use lstm::{LstmParams, LstmState};
pub use tensor::Tensor;

/// Floating point type the layers compute in.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("temporal max pool over zero valid positions")]
    EmptyPool,
    #[error("input of length {len} is shorter than the convolution window {window}")]
    ShortInput { len: usize, window: usize },
    #[error("backward called without a recorded forward pass")]
    NoForward,
}

pub(crate) fn shape_err(msg: impl Into<String>) -> NnError {
    NnError::Shape(msg.into())
}

/// Logistic sigmoid without overflow for large |z|.
pub fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Visits named parameter tensors in a fixed order.
pub trait Parameters<F: Real> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
