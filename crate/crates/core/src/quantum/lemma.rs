//! The rearrangement inequality behind entropy non-decrease: for a doubly
//! stochastic A, x non-increasing and y non-decreasing (all positive),
//! Σ_kj A_kj x_j y_k ≥ Σ_k x_k y_k.

use nalgebra::DMatrix;
use thiserror::Error;

/// Row and column sums must equal one within this tolerance.
pub const DOUBLY_STOCHASTIC_TOL: f64 = 1e-9;
/// Slack allowed on the inequality itself.
pub const INEQUALITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LemmaError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("sequence lengths x = {x}, y = {y} do not match matrix size {n}")]
    LengthMismatch { n: usize, x: usize, y: usize },
    #[error("matrix entry ({row}, {col}) = {value} is negative or not finite")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("{kind} {index} sums to {sum}, expected 1")]
    NotDoublyStochastic { kind: &'static str, index: usize, sum: f64 },
    #[error("{name}[{index}] = {value} is not positive")]
    NonPositive { name: &'static str, index: usize, value: f64 },
    #[error("x is not non-increasing at index {index}")]
    XNotNonIncreasing { index: usize },
    #[error("y is not non-decreasing at index {index}")]
    YNotNonDecreasing { index: usize },
}

/// Checks the preconditions and returns whether the inequality holds.
pub fn lemma_check(a: &DMatrix<f64>, x: &[f64], y: &[f64]) -> Result<bool, LemmaError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LemmaError::NotSquare { rows: n, cols: a.ncols() });
    }
    if x.len() != n || y.len() != n {
        return Err(LemmaError::LengthMismatch { n, x: x.len(), y: y.len() });
    }
    for row in 0..n {
        for col in 0..n {
            let value = a[(row, col)];
            if !(value.is_finite() && value >= 0.0) {
                return Err(LemmaError::NegativeEntry { row, col, value });
            }
        }
    }
    for i in 0..n {
        let row_sum: f64 = a.row(i).sum();
        if (row_sum - 1.0).abs() > DOUBLY_STOCHASTIC_TOL {
            return Err(LemmaError::NotDoublyStochastic { kind: "row", index: i, sum: row_sum });
        }
        let col_sum: f64 = a.column(i).sum();
        if (col_sum - 1.0).abs() > DOUBLY_STOCHASTIC_TOL {
            return Err(LemmaError::NotDoublyStochastic { kind: "column", index: i, sum: col_sum });
        }
    }
    for (name, seq) in [("x", x), ("y", y)] {
        if let Some((index, &value)) = seq.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(LemmaError::NonPositive { name, index, value });
        }
    }
    if let Some(index) = (1..n).find(|&i| x[i] > x[i - 1]) {
        return Err(LemmaError::XNotNonIncreasing { index });
    }
    if let Some(index) = (1..n).find(|&i| y[i] < y[i - 1]) {
        return Err(LemmaError::YNotNonDecreasing { index });
    }

    let mut mixed = 0.0;
    for k in 0..n {
        for j in 0..n {
            mixed += a[(k, j)] * x[j] * y[k];
        }
    }
    let diagonal: f64 = x.iter().zip(y).map(|(x, y)| x * y).sum();
    Ok(mixed >= diagonal - INEQUALITY_TOL * diagonal.max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn permutation_matrix(p: &[usize]) -> DMatrix<f64> {
        let n = p.len();
        DMatrix::from_fn(n, n, |r, c| if p[r] == c { 1.0 } else { 0.0 })
    }

    #[test]
    fn identity_and_swap() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!(lemma_check(&id, &[3.0, 2.0, 1.0], &[1.0, 1.5, 4.0]).unwrap());
        let swap = permutation_matrix(&[1, 0]);
        assert!(lemma_check(&swap, &[2.0, 1.0], &[1.0, 2.0]).unwrap());
    }

    #[test]
    fn precondition_errors_are_distinct() {
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            lemma_check(&DMatrix::zeros(2, 3), &[1.0, 1.0], &[1.0, 1.0]),
            Err(LemmaError::NotSquare { .. })
        ));
        assert!(matches!(lemma_check(&id, &[1.0], &[1.0, 1.0]), Err(LemmaError::LengthMismatch { .. })));
        let neg = DMatrix::from_row_slice(2, 2, &[1.5, -0.5, -0.5, 1.5]);
        assert!(matches!(lemma_check(&neg, &[1.0, 1.0], &[1.0, 1.0]), Err(LemmaError::NegativeEntry { .. })));
        let sub = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.5, 0.6]);
        assert!(matches!(
            lemma_check(&sub, &[1.0, 1.0], &[1.0, 1.0]),
            Err(LemmaError::NotDoublyStochastic { kind: "row", .. })
        ));
        assert!(matches!(lemma_check(&id, &[1.0, 0.0], &[1.0, 1.0]), Err(LemmaError::NonPositive { name: "x", .. })));
        assert!(matches!(lemma_check(&id, &[1.0, 2.0], &[1.0, 1.0]), Err(LemmaError::XNotNonIncreasing { index: 1 })));
        assert!(matches!(lemma_check(&id, &[2.0, 1.0], &[2.0, 1.0]), Err(LemmaError::YNotNonDecreasing { index: 1 })));
    }

    // By Birkhoff's theorem the mixed sum is a convex combination of its
    // values at permutation matrices, so checking every permutation is an
    // exhaustive proof for the given x, y.
    fn brute_force_min(x: &[f64], y: &[f64]) -> f64 {
        permutations(x.len())
            .iter()
            .map(|p| p.iter().enumerate().map(|(k, &j)| x[j] * y[k]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    fn sorted(mut v: Vec<f64>, descending: bool) -> Vec<f64> {
        v.sort_by(|a, b| a.total_cmp(b));
        if descending {
            v.reverse();
        }
        v
    }

    proptest! {
        #[test]
        fn holds_for_mixtures_of_permutations(
            n in 1usize..=4,
            raw_x in prop::collection::vec(0.01f64..10.0, 4),
            raw_y in prop::collection::vec(0.01f64..10.0, 4),
            weights in prop::collection::vec(0.0f64..1.0, 24),
        ) {
            let x = sorted(raw_x[..n].to_vec(), true);
            let y = sorted(raw_y[..n].to_vec(), false);
            let perms = permutations(n);
            let total: f64 = weights[..perms.len()].iter().sum::<f64>() + 1e-3;
            let mut a = DMatrix::<f64>::identity(n, n) * (1e-3 / total);
            for (p, w) in perms.iter().zip(&weights) {
                a += permutation_matrix(p) * (w / total);
            }
            prop_assert!(lemma_check(&a, &x, &y).unwrap());
            // the identity attains the minimum over all permutations
            let diagonal: f64 = x.iter().zip(&y).map(|(x, y)| x * y).sum();
            prop_assert!((brute_force_min(&x, &y) - diagonal).abs() <= 1e-12 * diagonal);
        }
    }
}
