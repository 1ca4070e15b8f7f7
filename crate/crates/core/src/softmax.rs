//! Masked softmax over per-row keep sets, and deterministic Top-K index
//! selection. Masked-out entries are written as literal zeros, never as
//! small residuals.

use crate::tensor::{Element, Error, Result, Tensor};

/// Indices of the `k` largest entries of `row`, ties broken by the lower
/// index, returned in ascending index order.
///
/// The selection step always runs, including at k = n, so the cost of the
/// select-gather path is non-decreasing in k.
pub fn top_k_indices<T: Element>(row: &[T], k: usize) -> Vec<usize> {
    debug_assert!(k >= 1 && k <= row.len());
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.select_nth_unstable_by(k - 1, |&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .expect("scores must be finite")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Softmax over the last axis restricted to each row's keep set. Entries
/// outside the keep set are exactly zero; kept entries are exp-normalized
/// over the kept logits.
pub fn masked_softmax<T: Element>(logits: &Tensor<T>, keep: &[Vec<usize>]) -> Result<Tensor<T>> {
    let shape = logits.shape();
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            context: "masked_softmax",
            shape: shape.to_vec(),
            data_len: logits.numel(),
        });
    }
    let cols = shape[shape.len() - 1];
    let rows = logits.numel() / cols;
    if keep.len() != rows {
        return Err(Error::DimensionMismatch {
            context: "masked_softmax",
            dim: "rows",
            expected: rows,
            got: keep.len(),
        });
    }
    let mut out = logits.zeros_like();
    for (r, kept) in keep.iter().enumerate() {
        if kept.is_empty() {
            return Err(Error::EmptyKeepSet { row: r });
        }
        let row = &logits.data()[r * cols..(r + 1) * cols];
        let mut m = row[kept[0]];
        for &j in kept {
            if row[j] > m {
                m = row[j];
            }
        }
        let mut denom = T::zero();
        for &j in kept {
            denom = denom + (row[j] - m).exp();
        }
        let out_row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        for &j in kept {
            out_row[j] = (row[j] - m).exp() / denom;
        }
    }
    Ok(out)
}

/// Reverse rule: for each row, dS_j = A_j * (dA_j - sum_k A_k dA_k) on kept
/// entries and zero elsewhere.
pub fn masked_softmax_backward(
    output: &Tensor<f64>,
    keep: &[Vec<usize>],
    cot: &Tensor<f64>,
) -> Tensor<f64> {
    let cols = *output.shape().last().expect("non-empty shape");
    let mut dx = output.zeros_like();
    for (r, kept) in keep.iter().enumerate() {
        let a = &output.data()[r * cols..(r + 1) * cols];
        let dy = &cot.data()[r * cols..(r + 1) * cols];
        let mut inner = 0.0;
        for &j in kept {
            inner += a[j] * dy[j];
        }
        let row = &mut dx.data_mut()[r * cols..(r + 1) * cols];
        for &j in kept {
            row[j] = a[j] * (dy[j] - inner);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_spread_evenly() {
        let logits = Tensor::full(&[1, 8], 0.3f64);
        let keep = vec![vec![1, 3, 5, 7]];
        let out = masked_softmax(&logits, &keep).unwrap();
        for &j in &keep[0] {
            assert!((out.data()[j] - 0.25).abs() < 1e-15);
        }
        for j in [0, 2, 4, 6] {
            assert_eq!(out.data()[j], 0.0);
        }
    }

    #[test]
    fn singleton_keep_is_certain() {
        let logits = Tensor::from_vec(vec![1, 3], vec![-5.0, 2.0, 40.0]).unwrap();
        let out = masked_softmax(&logits, &[vec![1]]).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_kept_logits_match_analytic_softmax() {
        let logits = Tensor::from_vec(vec![1, 2], vec![0.0, (2.0f64).ln()]).unwrap();
        let out = masked_softmax(&logits, &[vec![0, 1]]).unwrap();
        assert!((out.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((out.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_keep_set_is_rejected() {
        let logits = Tensor::from_vec(vec![1, 2], vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            masked_softmax(&logits, &[vec![]]),
            Err(Error::EmptyKeepSet { row: 0 })
        ));
    }

    #[test]
    fn rows_sum_to_one_over_kept() {
        let logits =
            Tensor::from_vec(vec![2, 4], vec![3.0, -1.0, 0.5, 9.0, 2.0, 2.0, -7.0, 0.1]).unwrap();
        let keep = vec![vec![0, 2, 3], vec![1, 2]];
        let out = masked_softmax(&logits, &keep).unwrap();
        for r in 0..2 {
            let s: f64 = out.data()[r * 4..(r + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn top_k_breaks_ties_by_lowest_index() {
        let row = [1.0f64, 3.0, 3.0, 0.5, 3.0];
        assert_eq!(top_k_indices(&row, 2), vec![1, 2]);
        assert_eq!(top_k_indices(&row, 3), vec![1, 2, 4]);
        assert_eq!(top_k_indices(&row, 5), vec![0, 1, 2, 3, 4]);
    }
}
