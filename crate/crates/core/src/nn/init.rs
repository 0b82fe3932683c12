//! Parameter initialization. All draws come from a seeded ChaCha stream so a
//! seed fixes every initial weight bit for bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Real, Tensor};

pub type InitRng = ChaCha8Rng;

/// Range of the uniform embedding initialization.
pub const EMBEDDING_INIT_RANGE: f64 = 0.05;

/// Initial value of LSTM forget-gate biases.
pub const FORGET_BIAS_INIT: f64 = 1.0;

pub fn uniform<F: Real>(rng: &mut InitRng, shape: &[usize], limit: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::of(rng.gen_range(-limit..=limit)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

/// Glorot uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<F: Real>(
    rng: &mut InitRng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, limit)
}
