use super::{NnError, Real, Tensor};

/// Per-dimension maximum over the first `valid` rows of `seq` (`[M × k]`).
/// Returns the pooled vector and, per dimension, the row that won; ties go to
/// the earliest row.
pub fn temporal_max_pool<F: Real>(
    seq: &Tensor<F>,
    valid: usize,
) -> Result<(Vec<F>, Vec<usize>), NnError> {
    if valid == 0 {
        return Err(NnError::EmptyPool);
    }
    if valid > seq.rows() {
        return Err(super::shape_err(format!(
            "{valid} valid rows in a {}-row sequence",
            seq.rows()
        )));
    }
    let mut out = seq.row(0).to_vec();
    let mut argmax = vec![0usize; out.len()];
    for t in 1..valid {
        for (k, &v) in seq.row(t).iter().enumerate() {
            if v > out[k] {
                out[k] = v;
                argmax[k] = t;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes `d_out[k]` to row `argmax[k]` of an `[rows × k]` gradient.
pub fn temporal_max_pool_backward<F: Real>(
    argmax: &[usize],
    d_out: &[F],
    rows: usize,
) -> Tensor<F> {
    let mut d = Tensor::zeros(&[rows, d_out.len()]);
    let k = d_out.len();
    let data = d.data_mut();
    for (dim, (&t, &g)) in argmax.iter().zip(d_out).enumerate() {
        data[t * k + dim] += g;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), 2).unwrap()
    }

    #[test]
    fn pools_per_dimension() {
        let (out, arg) = temporal_max_pool(&m(&[[1.0, 4.0], [3.0, 2.0], [2.0, 5.0]]), 3).unwrap();
        assert_eq!(out, vec![3.0, 5.0]);
        assert_eq!(arg, vec![1, 2]);
    }

    #[test]
    fn single_row_is_identity() {
        let (out, _) = temporal_max_pool(&m(&[[-1.0, 7.0]]), 1).unwrap();
        assert_eq!(out, vec![-1.0, 7.0]);
    }

    #[test]
    fn masked_rows_are_ignored() {
        let (out, _) = temporal_max_pool(&m(&[[1.0, 1.0], [9.0, 9.0]]), 1).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
        assert_eq!(
            temporal_max_pool(&m(&[[1.0, 1.0]]), 0),
            Err(NnError::EmptyPool)
        );
    }

    #[test]
    fn ties_route_to_first_occurrence() {
        let s = m(&[[2.0, 0.0], [2.0, 1.0]]);
        let (_, arg) = temporal_max_pool(&s, 2).unwrap();
        assert_eq!(arg, vec![0, 1]);
        let d = temporal_max_pool_backward(&arg, &[1.0, 1.0], 2);
        assert_eq!(d.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn dominance_and_permutation_invariance(
            rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 1..12),
            rot in 0usize..12,
        ) {
            let s = Tensor::from_rows(&rows, 3).unwrap();
            let (out, _) = temporal_max_pool(&s, rows.len()).unwrap();
            for k in 0..3 {
                prop_assert!(rows.iter().all(|r| out[k] >= r[k]));
                prop_assert!(rows.iter().any(|r| out[k] == r[k]));
            }
            let mut permuted = rows.clone();
            permuted.rotate_left(rot % rows.len());
            permuted.reverse();
            let (out2, _) = temporal_max_pool(&Tensor::from_rows(&permuted, 3).unwrap(), rows.len()).unwrap();
            prop_assert_eq!(out, out2);
        }
    }
}
