use super::init::{self, InitRng};
use super::tensor::{axpy, dot};
use super::{shape_err, NnError, Parameters, Real, Tensor};

/// One-dimensional convolution over time. `filters` is
/// `[n_filters × window × input_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<F> {
    pub filters: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
}

impl<F: Real> ConvParams<F> {
    pub fn new(
        rng: &mut InitRng,
        n_filters: usize,
        window: usize,
        input_dim: usize,
        stride: usize,
    ) -> Self {
        assert!(
            window >= 1 && stride >= 1,
            "window and stride must be positive"
        );
        let fan_in = window * input_dim;
        Self {
            filters: init::glorot(rng, &[n_filters, window, input_dim], fan_in, n_filters),
            bias: Tensor::zeros(&[n_filters]),
            stride,
        }
    }

    pub fn zeros(n_filters: usize, window: usize, input_dim: usize, stride: usize) -> Self {
        assert!(
            window >= 1 && stride >= 1,
            "window and stride must be positive"
        );
        Self {
            filters: Tensor::zeros(&[n_filters, window, input_dim]),
            bias: Tensor::zeros(&[n_filters]),
            stride,
        }
    }

    pub fn n_filters(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn window(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn input_dim(&self) -> usize {
        self.filters.shape()[2]
    }

    /// `floor((len - window) / stride) + 1`, or `None` when `len < window`.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        (len >= self.window()).then(|| (len - self.window()) / self.stride + 1)
    }

    /// `out[j][f] = bias[f] + Σ_{w,c} filters[f][w][c] · seq[j·stride + w][c]`
    pub fn forward(&self, seq: &Tensor<F>) -> Result<Tensor<F>, NnError> {
        if seq.shape().len() != 2 || seq.cols() != self.input_dim() {
            return Err(shape_err(format!(
                "conv input {:?} for input_dim {}",
                seq.shape(),
                self.input_dim()
            )));
        }
        let out_len = self.output_len(seq.rows()).ok_or(NnError::ShortInput {
            len: seq.rows(),
            window: self.window(),
        })?;
        let span = self.window() * self.input_dim();
        let nf = self.n_filters();
        let mut out = Tensor::zeros(&[out_len, nf]);
        for j in 0..out_len {
            let start = j * self.stride * self.input_dim();
            // Consecutive rows are contiguous, so the receptive field is one slice.
            let field = &seq.data()[start..start + span];
            for (f, o) in out.row_mut(j).iter_mut().enumerate() {
                *o = self.bias.data()[f] + dot(self.filters.row(f), field);
            }
        }
        Ok(out)
    }

    /// Accumulates filter and bias gradients; returns the gradient on `seq`.
    pub fn backward(
        &self,
        seq: &Tensor<F>,
        d_out: &Tensor<F>,
        grad: &mut ConvParams<F>,
    ) -> Tensor<F> {
        let span = self.window() * self.input_dim();
        let mut d_seq = Tensor::zeros(seq.shape());
        for j in 0..d_out.rows() {
            let start = j * self.stride * self.input_dim();
            for (f, &g) in d_out.row(j).iter().enumerate() {
                if g == F::zero() {
                    continue;
                }
                grad.bias.data_mut()[f] += g;
                axpy(g, &seq.data()[start..start + span], grad.filters.row_mut(f));
                axpy(
                    g,
                    self.filters.row(f),
                    &mut d_seq.data_mut()[start..start + span],
                );
            }
        }
        d_seq
    }
}

impl<F: Real> Parameters<F> for ConvParams<F> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        vec![
            ("filters".into(), &self.filters),
            ("bias".into(), &self.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        vec![
            ("filters".into(), &mut self.filters),
            ("bias".into(), &mut self.bias),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn output_length_formula() {
        let c = ConvParams::<f32>::zeros(128, 10, 4, 5);
        assert_eq!(c.output_len(100), Some(19));
        assert_eq!(c.output_len(10), Some(1));
        assert_eq!(c.output_len(9), None);
    }

    #[test]
    fn ones_filter_sums_windows() {
        let mut c = ConvParams::<f64>::zeros(1, 2, 1, 1);
        c.filters.fill(1.0);
        let seq = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.forward(&seq).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn zero_filters_give_zero_output() {
        let c = ConvParams::<f64>::zeros(3, 2, 2, 2);
        let seq = Tensor::from_vec(&[5, 2], (0..10).map(f64::from).collect()).unwrap();
        let out = c.forward(&seq).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_input_is_rejected() {
        let c = ConvParams::<f64>::zeros(1, 4, 1, 1);
        let seq = Tensor::zeros(&[3, 1]);
        assert_eq!(
            c.forward(&seq),
            Err(NnError::ShortInput { len: 3, window: 4 })
        );
    }

    proptest! {
        #[test]
        fn length_law(len in 1usize..300, window in 1usize..20, stride in 1usize..10) {
            prop_assume!(len >= window);
            let c = ConvParams::<f32>::zeros(2, window, 1, stride);
            let out = c.forward(&Tensor::zeros(&[len, 1])).unwrap();
            prop_assert_eq!(out.rows(), (len - window) / stride + 1);
        }
    }
}
