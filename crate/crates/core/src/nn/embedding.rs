use super::init::{self, InitRng};
use super::{shape_err, NnError, Parameters, Real, Tensor};

/// One row per possible byte value.
pub const VOCAB_SIZE: usize = 256;

/// Byte embedding table `[256 × embed_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams<F> {
    pub table: Tensor<F>,
}

impl<F: Real> EmbeddingParams<F> {
    pub fn new(rng: &mut InitRng, embed_dim: usize) -> Self {
        Self {
            table: init::uniform(rng, &[VOCAB_SIZE, embed_dim], init::EMBEDDING_INIT_RANGE),
        }
    }

    pub fn zeros(embed_dim: usize) -> Self {
        Self {
            table: Tensor::zeros(&[VOCAB_SIZE, embed_dim]),
        }
    }

    pub fn from_table(table: Tensor<F>) -> Result<Self, NnError> {
        if table.shape().len() != 2 || table.rows() != VOCAB_SIZE {
            return Err(shape_err(format!(
                "embedding table must be [256 × E], got {:?}",
                table.shape()
            )));
        }
        Ok(Self { table })
    }

    pub fn embed_dim(&self) -> usize {
        self.table.cols()
    }

    /// Row `t` of the result is table row `codes[t]`.
    pub fn forward(&self, codes: &[u8]) -> Tensor<F> {
        let e = self.embed_dim();
        let mut data = Vec::with_capacity(codes.len() * e);
        for &c in codes {
            data.extend_from_slice(self.table.row(usize::from(c)));
        }
        Tensor::from_vec(&[codes.len(), e], data).expect("rows × embed_dim")
    }

    /// Scatters `d_out` rows into the rows of `grad` selected by `codes`.
    pub fn backward(&self, codes: &[u8], d_out: &Tensor<F>, grad: &mut EmbeddingParams<F>) {
        debug_assert_eq!(d_out.rows(), codes.len());
        for (t, &c) in codes.iter().enumerate() {
            super::tensor::axpy(F::one(), d_out.row(t), grad.table.row_mut(usize::from(c)));
        }
    }
}

impl<F: Real> Parameters<F> for EmbeddingParams<F> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        vec![("table".into(), &self.table)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        vec![("table".into(), &mut self.table)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn lookup_returns_table_rows() {
        let mut rng = InitRng::seed_from_u64(0);
        let emb = EmbeddingParams::<f64>::new(&mut rng, 4);
        let out = emb.forward(&[97, 3]);
        assert_eq!(out.shape(), &[2, 4]);
        assert_eq!(out.row(0), emb.table.row(97));
        assert_eq!(out.row(1), emb.table.row(3));
        assert!(emb.table.data().iter().all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn empty_sequence_gives_zero_rows() {
        let emb = EmbeddingParams::<f32>::zeros(3);
        assert_eq!(emb.forward(&[]).shape(), &[0, 3]);
    }

    #[test]
    fn backward_of_sum_counts_occurrences() {
        let emb = EmbeddingParams::<f64>::zeros(2);
        let codes = [5u8, 7, 5, 5];
        let mut ones = Tensor::zeros(&[4, 2]);
        ones.fill(1.0);
        let mut grad = EmbeddingParams::zeros(2);
        emb.backward(&codes, &ones, &mut grad);
        assert_eq!(grad.table.row(5), &[3.0, 3.0]);
        assert_eq!(grad.table.row(7), &[1.0, 1.0]);
        assert_eq!(grad.table.row(6), &[0.0, 0.0]);
    }

    #[test]
    fn table_must_have_256_rows() {
        assert!(EmbeddingParams::from_table(Tensor::<f32>::zeros(&[255, 2])).is_err());
    }
}
