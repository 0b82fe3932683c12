use super::init::{self, InitRng};
use super::tensor::{accumulate_outer, axpy, dot};
use super::{shape_err, sigmoid, NnError, Parameters, Real, Tensor};

/// Bias-free fully connected layer, `weight: [out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<F> {
    pub weight: Tensor<F>,
}

impl<F: Real> DenseParams<F> {
    pub fn new(rng: &mut InitRng, input: usize, output: usize) -> Self {
        Self {
            weight: init::glorot(rng, &[output, input], input, output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn check(&self, x: &[F]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(shape_err(format!(
                "dense input {} for weight {:?}",
                x.len(),
                self.weight.shape()
            )));
        }
        Ok(())
    }

    pub fn linear(&self, x: &[F]) -> Result<Vec<F>, NnError> {
        self.check(x)?;
        Ok((0..self.output_dim())
            .map(|o| dot(self.weight.row(o), x))
            .collect())
    }

    /// Gradient of `linear`: accumulates into `grad`, returns `d x`.
    pub fn linear_backward(&self, x: &[F], d_out: &[F], grad: &mut DenseParams<F>) -> Vec<F> {
        let mut dx = vec![F::zero(); self.input_dim()];
        for (o, &g) in d_out.iter().enumerate() {
            if g != F::zero() {
                axpy(g, x, grad.weight.row_mut(o));
                axpy(g, self.weight.row(o), &mut dx);
            }
        }
        dx
    }
}

/// `max(0, W·x)` elementwise.
pub fn dense_relu<F: Real>(params: &DenseParams<F>, x: &[F]) -> Result<Vec<F>, NnError> {
    Ok(params
        .linear(x)?
        .into_iter()
        .map(|z| z.max(F::zero()))
        .collect())
}

/// Backward of [`dense_relu`] given its output `y`.
pub fn dense_relu_backward<F: Real>(
    params: &DenseParams<F>,
    x: &[F],
    y: &[F],
    d_out: &[F],
    grad: &mut DenseParams<F>,
) -> Vec<F> {
    let dz: Vec<F> = y
        .iter()
        .zip(d_out)
        .map(|(&yv, &g)| if yv > F::zero() { g } else { F::zero() })
        .collect();
    params.linear_backward(x, &dz, grad)
}

/// Final classification layer, `weight: [1 × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputParams<F> {
    pub weight: Tensor<F>,
}

impl<F: Real> OutputParams<F> {
    pub fn new(rng: &mut InitRng, input: usize) -> Self {
        Self {
            weight: init::glorot(rng, &[1, input], input, 1),
        }
    }

    pub fn zeros(input: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[1, input]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Largest value below one and smallest above zero that `p` is kept within.
pub fn open_unit_bounds<F: Real>() -> (F, F) {
    (
        F::min_positive_value(),
        F::one() - F::epsilon() / F::of(2.0),
    )
}

/// `(logit, p)` with `p = σ(W_D · x)` kept strictly inside `(0, 1)`.
pub fn sigmoid_output<F: Real>(params: &OutputParams<F>, x: &[F]) -> Result<(F, F), NnError> {
    if x.len() != params.input_dim() {
        return Err(shape_err(format!(
            "output layer input {} for width {}",
            x.len(),
            params.input_dim()
        )));
    }
    let logit = dot(params.weight.row(0), x);
    let (lo, hi) = open_unit_bounds::<F>();
    Ok((logit, sigmoid(logit).max(lo).min(hi)))
}

/// Given `d loss / d logit`, accumulates into `grad` and returns `d x`.
pub fn sigmoid_output_backward<F: Real>(
    params: &OutputParams<F>,
    x: &[F],
    d_logit: F,
    grad: &mut OutputParams<F>,
) -> Vec<F> {
    accumulate_outer(&[d_logit], x, &mut grad.weight);
    params.weight.row(0).iter().map(|&w| w * d_logit).collect()
}

impl<F: Real> Parameters<F> for DenseParams<F> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        vec![("weight".into(), &self.weight)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        vec![("weight".into(), &mut self.weight)]
    }
}

impl<F: Real> Parameters<F> for OutputParams<F> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        vec![("weight".into(), &self.weight)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        vec![("weight".into(), &mut self.weight)]
    }
}
