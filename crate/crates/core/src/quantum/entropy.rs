//! von Neumann entropy and its production rate under averaged evolution.

use num_complex::Complex64;

use super::{DensityMatrix, Hamiltonian};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::time_model::{TimeFamily, TimeModel};

/// Eigenvalues below this contribute nothing to the entropy.
pub const ENTROPY_CUTOFF: f64 = 1e-15;
/// Eigenvalues below this are raised to it before taking logarithms in the
/// entropy rate.
pub const RATE_EIGENVALUE_FLOOR: f64 = 1e-12;

/// S = −Σ λ ln λ in nats.
pub fn entropy(r: &DensityMatrix) -> f64 {
    entropy_from_eigenvalues(&r.eigenvalues())
}

pub(crate) fn entropy_from_eigenvalues(eigenvalues: &[f64]) -> f64 {
    let s: f64 = eigenvalues
        .iter()
        .filter(|&&l| l >= ENTROPY_CUTOFF)
        .map(|&l| -l * l.ln())
        .sum();
    s.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyRate {
    /// dS/dt in nats per unit macroscopic time.
    pub value: f64,
    /// Number of eigenvalues of R raised to [`RATE_EIGENVALUE_FLOOR`].
    pub clamped_eigenvalues: usize,
}

/// dS/dt = −Tr(Ṙ ln R) evaluated in the basis that diagonalizes R.
///
/// Gaussian time: (κτ/2ħ²) Σ_kj |H_kj|² (λ_k − λ_j) ln(λ_k/λ_j).
///
/// Generalized Poisson time: Ṙ = (1/τ)(E_ξ[U_ξ R U_ξ†] − R) with
/// U_ξ = e^{−iHξτ/ħ}, so dS/dt = −(1/τ) Σ_k ln λ_k (Σ_j M_kj λ_j − λ_k) where
/// M_kj = E_ξ|⟨r_k|U_ξ|r_j⟩|² is doubly stochastic. The ξ-average is done by
/// quadrature against the increment density.
pub fn entropy_rate(r: &DensityMatrix, h: &Hamiltonian, model: &TimeModel) -> Result<EntropyRate> {
    h.check_state(r)?;
    let (raw, basis) = linalg::hermitian_eigen(r.matrix());
    let clamped_eigenvalues = raw.iter().filter(|&&l| l < RATE_EIGENVALUE_FLOOR).count();
    let lambda: Vec<f64> = raw.iter().map(|l| l.max(RATE_EIGENVALUE_FLOOR)).collect();
    let log: Vec<f64> = lambda.iter().map(|l| l.ln()).collect();
    let n = lambda.len();
    let hbar = h.hbar();

    let value = match model.family() {
        TimeFamily::Gaussian { kappa } => {
            let hr = basis.adjoint() * h.matrix() * &basis;
            let mut sum = 0.0;
            for k in 0..n {
                for j in 0..n {
                    if k != j {
                        sum += hr[(k, j)].norm_sqr() * (lambda[k] - lambda[j]) * (log[k] - log[j]);
                    }
                }
            }
            kappa * model.tau() / (2.0 * hbar * hbar) * sum
        }
        TimeFamily::GeneralizedPoisson { increments } => {
            // W_ka = ⟨r_k|e_a⟩
            let w = basis.adjoint() * h.eigenvectors();
            let energies = h.energies();
            let tau = model.tau();
            let spread = energies[n - 1] - energies[0];
            let baseline: f64 = lambda.iter().zip(&log).map(|(l, g)| l * g).sum();
            if spread == 0.0 {
                0.0
            } else {
                let mut phases = vec![Complex64::new(0.0, 0.0); n];
                let mut q = CMatrix::zeros(n, n);
                let mixed = increments.expectation(
                    |xi| {
                        for (p, e) in phases.iter_mut().zip(energies) {
                            let arg = -e * xi * tau / hbar;
                            *p = Complex64::new(arg.cos(), arg.sin());
                        }
                        // Q = W diag(phases) W†
                        for k in 0..n {
                            for j in 0..n {
                                let mut acc = Complex64::new(0.0, 0.0);
                                for a in 0..n {
                                    acc += w[(k, a)] * phases[a] * w[(j, a)].conj();
                                }
                                q[(k, j)] = acc;
                            }
                        }
                        let mut s = 0.0;
                        for k in 0..n {
                            let mut inner = 0.0;
                            for j in 0..n {
                                inner += q[(k, j)].norm_sqr() * lambda[j];
                            }
                            s += log[k] * inner;
                        }
                        s
                    },
                    spread * tau / hbar,
                );
                -(mixed - baseline) / tau
            }
        }
        TimeFamily::ModifiedPoisson { .. } => {
            return Err(Error::InvalidModel(
                "entropy rate needs a time-homogeneous model (generalized Poisson or Gaussian)".into(),
            ))
        }
    };
    Ok(EntropyRate {
        value,
        clamped_eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::evolve::{evolve_analytic, evolve_ode, OdeForm, OdeSettings};
    use crate::time_model::IncrementDensity;
    use crate::units::UnitSystem;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sigma_x() -> Hamiltonian {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        Hamiltonian::new(m, &UnitSystem::natural()).unwrap()
    }

    fn three_level() -> (Hamiltonian, DensityMatrix) {
        let h = CMatrix::from_row_slice(
            3,
            3,
            &[
                c(0.2, 0.0),
                c(0.3, 0.1),
                c(0.0, 0.0),
                c(0.3, -0.1),
                c(1.0, 0.0),
                c(0.2, 0.0),
                c(0.0, 0.0),
                c(0.2, 0.0),
                c(1.7, 0.0),
            ],
        );
        let r = CMatrix::from_row_slice(
            3,
            3,
            &[
                c(0.5, 0.0),
                c(0.1, 0.05),
                c(0.02, 0.0),
                c(0.1, -0.05),
                c(0.3, 0.0),
                c(0.0, 0.03),
                c(0.02, 0.0),
                c(0.0, -0.03),
                c(0.2, 0.0),
            ],
        );
        (
            Hamiltonian::new(h, &UnitSystem::natural()).unwrap(),
            DensityMatrix::new(r).unwrap(),
        )
    }

    // M_kj = Σ_ab W_ka W̄_ja W̄_kb W_jb φ(−(E_a − E_b)τ/ħ), an exact closed form
    // independent of the quadrature used in the library.
    fn closed_form_rate(r: &DensityMatrix, h: &Hamiltonian, tau: f64, inc: &IncrementDensity) -> f64 {
        let (lambda, basis) = linalg::hermitian_eigen(r.matrix());
        let w = basis.adjoint() * h.eigenvectors();
        let e = h.energies();
        let n = lambda.len();
        let mut rate = 0.0;
        for k in 0..n {
            let mut flow = -lambda[k];
            for j in 0..n {
                let mut m = c(0.0, 0.0);
                for a in 0..n {
                    for b in 0..n {
                        m += w[(k, a)] * w[(j, a)].conj() * w[(k, b)].conj() * w[(j, b)]
                            * inc.char_fn(-(e[a] - e[b]) * tau / h.hbar());
                    }
                }
                flow += m.re * lambda[j];
            }
            rate -= lambda[k].ln() * flow / tau;
        }
        rate
    }

    #[test]
    fn entropy_examples() {
        let pure = DensityMatrix::uniform_superposition(3).unwrap();
        assert!(entropy(&pure).abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        assert!((entropy(&mixed) - std::f64::consts::LN_2).abs() < 1e-15);
        let d = DensityMatrix::from_diagonal(&[0.25, 0.75]).unwrap();
        assert!((entropy(&d) - 0.562_335_144_618_808_6).abs() < 1e-12);
    }

    #[test]
    fn gaussian_rate_example() {
        let r = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let model = TimeModel::gaussian(0.1, 2.0).unwrap();
        let rate = entropy_rate(&r, &sigma_x(), &model).unwrap();
        assert!((rate.value - 0.1 * 3f64.ln()).abs() < 1e-14, "{}", rate.value);
        assert_eq!(rate.clamped_eigenvalues, 0);
    }

    #[test]
    fn energy_diagonal_state_has_zero_rate() {
        let h = Hamiltonian::from_energies(&[0.0, 1.0, 3.0], &UnitSystem::natural()).unwrap();
        let r = DensityMatrix::from_diagonal(&[0.5, 0.3, 0.2]).unwrap();
        for model in [TimeModel::poisson(0.3).unwrap(), TimeModel::gaussian(0.3, 2.0).unwrap()] {
            assert!(entropy_rate(&r, &h, &model).unwrap().value.abs() < 1e-12);
        }
    }

    #[test]
    fn rate_vanishes_as_tau_shrinks() {
        let (h, r) = three_level();
        let big = entropy_rate(&r, &h, &TimeModel::poisson(1e-2).unwrap()).unwrap().value;
        let small = entropy_rate(&r, &h, &TimeModel::poisson(1e-6).unwrap()).unwrap().value;
        assert!(big > 0.0);
        assert!(small.abs() < big * 1e-3);
    }

    #[test]
    fn poisson_quadrature_matches_closed_form() {
        let (h, r) = three_level();
        for inc in [
            IncrementDensity::Exponential,
            IncrementDensity::gamma(2.0).unwrap(),
            IncrementDensity::gamma_unit_mean(3.5).unwrap(),
            IncrementDensity::Deterministic,
        ] {
            let model = TimeModel::generalized_poisson(0.7, inc.clone()).unwrap();
            let got = entropy_rate(&r, &h, &model).unwrap().value;
            let want = closed_form_rate(&r, &h, 0.7, &inc);
            assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{inc:?}: {got} vs {want}");
            assert!(got >= -1e-10);
        }
    }

    #[test]
    fn rate_matches_finite_difference_of_analytic_entropy() {
        let (h, r0) = three_level();
        for model in [TimeModel::poisson(0.2).unwrap(), TimeModel::gaussian(0.2, 2.0).unwrap()] {
            let t = 0.8;
            let step = 1e-4;
            let s = |t: f64| entropy(&evolve_analytic(&r0, &h, &model, t).unwrap());
            let fd = (s(t + step) - s(t - step)) / (2.0 * step);
            let rt = evolve_analytic(&r0, &h, &model, t).unwrap();
            let rate = entropy_rate(&rt, &h, &model).unwrap().value;
            assert!((fd - rate).abs() <= 1e-6f64.max(1e-3 * rate.abs()), "{fd} vs {rate}");
        }
    }

    #[test]
    fn gaussian_rate_matches_ode_finite_difference() {
        let h = sigma_x();
        let r0 = DensityMatrix::from_diagonal(&[0.75, 0.25]).unwrap();
        let model = TimeModel::gaussian(0.1, 2.0).unwrap();
        let dt = 1e-3;
        let traj = evolve_ode(&r0, &h, &model, 2.0 * dt, &OdeSettings::new(dt, OdeForm::SecondOrder)).unwrap();
        let fd = (traj.entropy[2] - traj.entropy[0]) / (2.0 * dt);
        let rate = entropy_rate(&traj.states[1], &h, &model).unwrap().value;
        assert!((fd - rate).abs() <= 1e-6f64.max(1e-3 * rate), "{fd} vs {rate}");
    }

    #[test]
    fn degenerate_density_matrix_matches_finite_difference() {
        // R = V diag(0.4, 0.4, 0.2) V† has a two-fold degenerate eigenvalue, so
        // its eigenbasis is not unique; the trace formula must not care.
        let (h, _) = three_level();
        let other = Hamiltonian::new(
            CMatrix::from_row_slice(
                3,
                3,
                &[c(0.0, 0.0), c(0.4, 0.3), c(0.1, 0.0), c(0.4, -0.3), c(0.5, 0.0), c(0.0, 0.6), c(0.1, 0.0), c(0.0, -0.6), c(-0.2, 0.0)],
            ),
            &UnitSystem::natural(),
        )
        .unwrap();
        let v = other.eigenvectors().clone();
        let d = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.4, 0.0), c(0.4, 0.0), c(0.2, 0.0)]));
        let r = DensityMatrix::new(linalg::hermitize(&(&v * d * v.adjoint()))).unwrap();
        for model in [TimeModel::poisson(0.5).unwrap(), TimeModel::gaussian(0.5, 2.0).unwrap()] {
            let rate = entropy_rate(&r, &h, &model).unwrap().value;
            // S(t) along the averaged flow started at R is smooth at t = 0 from the right
            let step = 1e-5;
            let s1 = entropy(&evolve_analytic(&r, &h, &model, step).unwrap());
            let s2 = entropy(&evolve_analytic(&r, &h, &model, 2.0 * step).unwrap());
            let fd = (-3.0 * entropy(&r) + 4.0 * s1 - s2) / (2.0 * step);
            assert!(rate > 0.0);
            assert!((fd - rate).abs() <= 1e-6f64.max(1e-3 * rate), "{fd} vs {rate}");
        }
    }

    #[test]
    fn pure_state_eigenvalues_are_clamped() {
        let h = sigma_x();
        let r = DensityMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let rate = entropy_rate(&r, &h, &TimeModel::gaussian(0.1, 2.0).unwrap()).unwrap();
        assert_eq!(rate.clamped_eigenvalues, 1);
        assert!(rate.value > 0.0);
    }

    #[test]
    fn modified_poisson_rejected() {
        let model = TimeModel::modified_poisson(0.5, IncrementDensity::Exponential, IncrementDensity::Exponential).unwrap();
        let r = DensityMatrix::maximally_mixed(2).unwrap();
        assert!(entropy_rate(&r, &sigma_x(), &model).is_err());
    }
}
