//! Finite-dimensional quantum states and their averaged evolution.

pub mod decay;
pub mod entropy;
pub mod evolve;
pub mod lemma;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::units::UnitSystem;

pub use decay::{decay_factor, decoherence_crossing_time, effective_decay_rate, survival_probability};
pub use entropy::{entropy, entropy_rate, EntropyRate};
pub use evolve::{
    analytic_trajectory, evolve_analytic, evolve_ode, evolve_unitary, EvolutionTrajectory, OdeForm, OdeSettings,
};
pub use lemma::{lemma_check, LemmaError};

/// Largest supported Hilbert-space dimension.
pub const MAX_DIM: usize = 64;
/// Elementwise tolerance on R = R†.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance on Tr R = 1.
pub const TRACE_TOL: f64 = 1e-12;
/// Most negative eigenvalue accepted as round-off.
pub const PSD_TOL: f64 = 1e-10;

/// A validated density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    m: CMatrix,
}

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        check_dim(m.nrows(), m.ncols())?;
        let defect = linalg::hermiticity_defect(&m);
        if defect > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian: max |R - R†| = {defect:e}"
            )));
        }
        let trace = m.trace();
        if (trace.re - 1.0).abs() > TRACE_TOL || trace.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace = {trace}, expected 1")));
        }
        let min_eig = linalg::hermitian_eigenvalues(&m)[0];
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "not positive semidefinite: eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self { m })
    }

    /// |ψ⟩⟨ψ| for the normalized amplitude vector.
    pub fn pure(amplitudes: &[Complex64]) -> Result<Self> {
        check_dim(amplitudes.len(), amplitudes.len())?;
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidState("zero or non-finite state vector".into()));
        }
        let psi = DVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|a| a / norm));
        let m = &psi * psi.adjoint();
        Self::new(linalg::hermitize(&m))
    }

    /// Equal-weight superposition (|0⟩ + … + |d-1⟩)/√d.
    pub fn uniform_superposition(dim: usize) -> Result<Self> {
        Self::pure(&vec![Complex64::new(1.0, 0.0); dim])
    }

    /// diag(p₀, …, p_{d-1}).
    pub fn from_diagonal(probabilities: &[f64]) -> Result<Self> {
        let d = DVector::from_iterator(
            probabilities.len(),
            probabilities.iter().map(|p| Complex64::new(*p, 0.0)),
        );
        Self::new(CMatrix::from_diagonal(&d))
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        Self::from_diagonal(&vec![1.0 / dim as f64; dim])
    }

    /// Wraps a matrix produced by an evolution that preserves the invariants
    /// up to round-off.
    pub(crate) fn from_evolved(m: CMatrix) -> Self {
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn get(&self, k: usize, l: usize) -> Complex64 {
        self.m[(k, l)]
    }

    pub fn trace(&self) -> Complex64 {
        self.m.trace()
    }

    /// Tr R² = Σ|R_kl|².
    pub fn purity(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::hermitian_eigenvalues(&self.m)
    }
}

fn check_dim(rows: usize, cols: usize) -> Result<()> {
    if rows != cols {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: cols,
        });
    }
    if rows == 0 || rows > MAX_DIM {
        return Err(Error::InvalidState(format!(
            "dimension {rows} outside 1..={MAX_DIM}"
        )));
    }
    Ok(())
}

/// A Hermitian Hamiltonian with its eigendecomposition H = V·diag(E)·V†.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    matrix: CMatrix,
    energies: Vec<f64>,
    eigenvectors: CMatrix,
    hbar: f64,
    diagonal: bool,
}

impl Hamiltonian {
    pub fn new(matrix: CMatrix, units: &UnitSystem) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidHamiltonian(format!(
                "matrix is {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        check_dim(matrix.nrows(), matrix.ncols()).map_err(|e| Error::InvalidHamiltonian(e.to_string()))?;
        if matrix.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::InvalidHamiltonian("non-finite entry".into()));
        }
        let scale = linalg::max_abs(&matrix);
        let defect = linalg::hermiticity_defect(&matrix);
        if defect > HERMITIAN_TOL * scale.max(1.0) {
            return Err(Error::InvalidHamiltonian(format!(
                "not Hermitian: max |H - H†| = {defect:e}"
            )));
        }
        let diagonal = linalg::is_diagonal(&matrix);
        let (energies, eigenvectors) = linalg::hermitian_eigen(&matrix);
        let lambda = CMatrix::from_diagonal(&DVector::from_iterator(
            energies.len(),
            energies.iter().map(|e| Complex64::new(*e, 0.0)),
        ));
        let residual = linalg::max_abs_diff(&(&matrix * &eigenvectors), &(&eigenvectors * lambda));
        if residual > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidHamiltonian(format!(
                "eigendecomposition residual {residual:e} too large"
            )));
        }
        Ok(Self {
            matrix,
            energies,
            eigenvectors,
            hbar: units.hbar(),
            diagonal,
        })
    }

    /// H = diag(E₀, …) in the given basis order.
    pub fn from_energies(energies: &[f64], units: &UnitSystem) -> Result<Self> {
        let d = DVector::from_iterator(energies.len(), energies.iter().map(|e| Complex64::new(*e, 0.0)));
        Self::new(CMatrix::from_diagonal(&d), units)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Energies in ascending order.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Columns are the energy eigenvectors, ordered like [`Self::energies`].
    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// Largest |H_ij|.
    pub fn norm_max(&self) -> f64 {
        linalg::max_abs(&self.matrix)
    }

    /// ω_kl = (E_k - E_l)/ħ, indices in the energy basis.
    pub fn omega(&self, k: usize, l: usize) -> f64 {
        (self.energies[k] - self.energies[l]) / self.hbar
    }

    pub(crate) fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// V† M V.
    pub fn to_energy_basis(&self, m: &CMatrix) -> CMatrix {
        self.eigenvectors.adjoint() * m * &self.eigenvectors
    }

    /// V M V†.
    pub fn from_energy_basis(&self, m: &CMatrix) -> CMatrix {
        &self.eigenvectors * m * self.eigenvectors.adjoint()
    }

    pub(crate) fn check_state(&self, rho: &DensityMatrix) -> Result<()> {
        if rho.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: rho.dim(),
            });
        }
        Ok(())
    }
}
