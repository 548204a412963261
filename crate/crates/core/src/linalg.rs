//! Small dense complex matrix helpers.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

/// Largest |m_ij|.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest |a_ij - b_ij|.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Largest |m_ij - conj(m_ji)|.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// (m + m†)/2.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub fn is_diagonal(m: &CMatrix) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == Complex64::new(0.0, 0.0)))
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues in ascending
/// order. Exactly diagonal inputs are handled without iteration so that their
/// eigenvectors are exact unit vectors.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let (values, vectors): (Vec<f64>, CMatrix) = if is_diagonal(m) {
        ((0..n).map(|i| m[(i, i)].re).collect(), CMatrix::identity(n, n))
    } else {
        let eig = SymmetricEigen::new(hermitize(m));
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let sorted_vectors = CMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    (sorted_values, sorted_vectors)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    hermitian_eigen(m).0
}
