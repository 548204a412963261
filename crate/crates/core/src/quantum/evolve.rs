//! The three evolution routes: unitary evolution in microscopic time, the
//! closed-form averaged state, and explicit integration of the averaged
//! master equation.

use nalgebra::DVector;
use num_complex::Complex64;

use super::entropy::entropy_from_eigenvalues;
use super::{DensityMatrix, Hamiltonian};
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::time_model::TimeModel;

/// Most negative eigenvalue tolerated from the truncated second-order
/// equation before integration aborts.
pub const SECOND_ORDER_POSITIVITY_TOL: f64 = 1e-6;
/// Most negative eigenvalue tolerated from the full equation. The exact flow
/// is a mixture of unitaries, so anything beyond round-off is a defect.
pub const FULL_POSITIVITY_TOL: f64 = 1e-9;

/// e^{-iHθ/ħ} ρ₀ e^{iHθ/ħ}, computed in the energy basis.
pub fn evolve_unitary(rho0: &DensityMatrix, h: &Hamiltonian, theta: f64) -> Result<DensityMatrix> {
    h.check_state(rho0)?;
    if theta == 0.0 {
        return Ok(rho0.clone());
    }
    Ok(DensityMatrix::from_evolved(apply_in_energy_basis(
        rho0.matrix(),
        h,
        |k, l| {
            let phase = -h.omega(k, l) * theta;
            Complex64::new(phase.cos(), phase.sin())
        },
    )))
}

/// The averaged state R(t): every energy-basis element R_kl is multiplied by
/// E[e^{-iω_kl θ}], i.e. the model's characteristic function at λ = -ω_kl.
pub fn evolve_analytic(r0: &DensityMatrix, h: &Hamiltonian, model: &TimeModel, t: f64) -> Result<DensityMatrix> {
    h.check_state(r0)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!("t must be ≥ 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(r0.clone());
    }
    Ok(DensityMatrix::from_evolved(apply_in_energy_basis(
        r0.matrix(),
        h,
        |k, l| model.char_fn(-h.omega(k, l), t),
    )))
}

/// Multiplies the energy-basis elements of `m` by `factor(k, l)` and rotates
/// back. Diagonal factors are taken as exactly one.
fn apply_in_energy_basis<F: Fn(usize, usize) -> Complex64>(m: &CMatrix, h: &Hamiltonian, factor: F) -> CMatrix {
    let n = m.nrows();
    let mut e = if h.is_diagonal() {
        permute_to_energy_order(m, h)
    } else {
        h.to_energy_basis(m)
    };
    for k in 0..n {
        for l in (k + 1)..n {
            let f = factor(k, l);
            e[(k, l)] *= f;
            e[(l, k)] *= f.conj();
        }
    }
    if h.is_diagonal() {
        permute_from_energy_order(&e, h)
    } else {
        h.from_energy_basis(&e)
    }
}

// For diagonal H the eigenvector matrix is a permutation; applying it by
// index keeps the elements bit-exact.
fn energy_order(h: &Hamiltonian) -> Vec<usize> {
    let v = h.eigenvectors();
    (0..h.dim())
        .map(|c| (0..h.dim()).find(|&r| v[(r, c)].re == 1.0).expect("permutation column"))
        .collect()
}

fn permute_to_energy_order(m: &CMatrix, h: &Hamiltonian) -> CMatrix {
    let order = energy_order(h);
    CMatrix::from_fn(m.nrows(), m.ncols(), |k, l| m[(order[k], order[l])])
}

fn permute_from_energy_order(e: &CMatrix, h: &Hamiltonian) -> CMatrix {
    let order = energy_order(h);
    let mut m = CMatrix::zeros(e.nrows(), e.ncols());
    for k in 0..e.nrows() {
        for l in 0..e.ncols() {
            m[(order[k], order[l])] = e[(k, l)];
        }
    }
    m
}

/// Time series of averaged states.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// von Neumann entropy in nats.
    pub entropy: Vec<f64>,
    pub purity: Vec<f64>,
    /// Recorded states whose negative eigenvalues were clipped to zero.
    pub clamped_states: usize,
    /// Most negative eigenvalue seen before clipping (0 if none).
    pub min_eigenvalue: f64,
}

impl EvolutionTrajectory {
    fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            entropy: Vec::with_capacity(n),
            purity: Vec::with_capacity(n),
            clamped_states: 0,
            min_eigenvalue: 0.0,
        }
    }

    fn push(&mut self, t: f64, state: DensityMatrix, eigenvalues: &[f64]) {
        self.entropy.push(entropy_from_eigenvalues(eigenvalues));
        self.purity.push(state.purity());
        self.times.push(t);
        self.states.push(state);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&DensityMatrix> {
        self.states.last()
    }
}

/// Closed-form averaged states at each of `times`.
pub fn analytic_trajectory(
    r0: &DensityMatrix,
    h: &Hamiltonian,
    model: &TimeModel,
    times: &[f64],
) -> Result<EvolutionTrajectory> {
    let mut traj = EvolutionTrajectory::with_capacity(times.len());
    for &t in times {
        let r = evolve_analytic(r0, h, model, t)?;
        let eig = r.eigenvalues();
        traj.min_eigenvalue = traj.min_eigenvalue.min(eig[0]);
        traj.push(t, r, &eig);
    }
    Ok(traj)
}

/// Which master equation to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeForm {
    /// dR/dt = (1/τ)[∫ e^{-iHξτ/ħ} R e^{iHξτ/ħ} p(ξ) dξ − R], with the
    /// ξ-integral applied in the energy basis through the characteristic
    /// function. For Gaussian time the exact generator is used.
    Full,
    /// dR/dt = −(iμ/ħ)[H, R] − (a²τ/2ħ²)[H, [H, R]] with μ the increment mean
    /// and a² its second moment (κ for Gaussian time).
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeSettings {
    pub dt: f64,
    pub form: OdeForm,
    /// Record every n-th step (the final state is always recorded).
    pub record_every: usize,
}

impl OdeSettings {
    pub fn new(dt: f64, form: OdeForm) -> Self {
        Self {
            dt,
            form,
            record_every: 1,
        }
    }

    /// Largest step allowed for `h` and `model`: min(τ, ħ/‖H‖_max)/10.
    pub fn max_step(h: &Hamiltonian, model: &TimeModel) -> f64 {
        let norm = h.norm_max();
        let dynamical = if norm > 0.0 { h.hbar() / norm } else { f64::INFINITY };
        model.tau().min(dynamical) / 10.0
    }
}

/// Integrates the averaged master equation from 0 to `t_end` with classic
/// fourth-order Runge–Kutta. After each step the state is re-Hermitized and
/// its trace reset to one.
pub fn evolve_ode(
    r0: &DensityMatrix,
    h: &Hamiltonian,
    model: &TimeModel,
    t_end: f64,
    settings: &OdeSettings,
) -> Result<EvolutionTrajectory> {
    h.check_state(r0)?;
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::Domain(format!("t must be ≥ 0, got {t_end}")));
    }
    let limit = OdeSettings::max_step(h, model);
    if !(settings.dt > 0.0) || settings.dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepSize {
            dt: settings.dt,
            limit,
        });
    }
    let rhs = Generator::new(h, model, settings.form)?;
    let tol = match settings.form {
        OdeForm::Full => FULL_POSITIVITY_TOL,
        OdeForm::SecondOrder => SECOND_ORDER_POSITIVITY_TOL,
    };

    let n_steps = if t_end == 0.0 {
        0
    } else {
        ((t_end / settings.dt) - 1e-9).ceil().max(1.0) as usize
    };
    let step = if n_steps > 0 { t_end / n_steps as f64 } else { 0.0 };
    let every = settings.record_every.max(1);

    let mut traj = EvolutionTrajectory::with_capacity(n_steps / every + 2);
    let eig0 = r0.eigenvalues();
    traj.push(0.0, r0.clone(), &eig0);

    let mut r = r0.matrix().clone();
    let half = Complex64::new(0.5 * step, 0.0);
    let full = Complex64::new(step, 0.0);
    let sixth = Complex64::new(step / 6.0, 0.0);
    let two = Complex64::new(2.0, 0.0);
    for i in 1..=n_steps {
        let k1 = rhs.apply(&r);
        let k2 = rhs.apply(&(&r + &k1 * half));
        let k3 = rhs.apply(&(&r + &k2 * half));
        let k4 = rhs.apply(&(&r + &k3 * full));
        r += (k1 + k2 * two + k3 * two + k4) * sixth;
        r = linalg::hermitize(&r);
        let tr = r.trace().re;
        r /= Complex64::new(tr, 0.0);

        let t = if i == n_steps { t_end } else { i as f64 * step };
        let (eigenvalues, eigenvectors) = linalg::hermitian_eigen(&r);
        let min_eig = eigenvalues[0];
        traj.min_eigenvalue = traj.min_eigenvalue.min(min_eig);
        if min_eig < -tol {
            return Err(Error::PositivityLoss {
                t,
                min_eigenvalue: min_eig,
            });
        }
        if i % every == 0 || i == n_steps {
            if min_eig < 0.0 && settings.form == OdeForm::SecondOrder {
                let clipped: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0)).collect();
                let total: f64 = clipped.iter().sum();
                let clipped: Vec<f64> = clipped.iter().map(|v| v / total).collect();
                let d = DVector::from_iterator(clipped.len(), clipped.iter().map(|v| Complex64::new(*v, 0.0)));
                let m = &eigenvectors * CMatrix::from_diagonal(&d) * eigenvectors.adjoint();
                traj.clamped_states += 1;
                traj.push(t, DensityMatrix::from_evolved(linalg::hermitize(&m)), &clipped);
            } else {
                traj.push(t, DensityMatrix::from_evolved(r.clone()), &eigenvalues);
            }
        }
    }
    Ok(traj)
}

enum Generator<'a> {
    Full {
        h: &'a Hamiltonian,
        rates: CMatrix,
    },
    SecondOrder {
        h: CMatrix,
        commutator: Complex64,
        double_commutator: Complex64,
    },
}

impl<'a> Generator<'a> {
    fn new(h: &'a Hamiltonian, model: &TimeModel, form: OdeForm) -> Result<Self> {
        match form {
            OdeForm::Full => {
                let n = h.dim();
                let mut rates = CMatrix::zeros(n, n);
                for k in 0..n {
                    for l in 0..n {
                        rates[(k, l)] = model.generator(h.omega(k, l))?;
                    }
                }
                Ok(Generator::Full { h, rates })
            }
            OdeForm::SecondOrder => {
                // validates that the model has a stationary generator
                model.generator(1.0)?;
                let hbar = h.hbar();
                let mu = model.clock_rate();
                let a2 = model.second_moment_coefficient();
                Ok(Generator::SecondOrder {
                    h: h.matrix().clone(),
                    commutator: Complex64::new(0.0, -mu / hbar),
                    double_commutator: Complex64::new(-a2 * model.tau() / (2.0 * hbar * hbar), 0.0),
                })
            }
        }
    }

    fn apply(&self, r: &CMatrix) -> CMatrix {
        match self {
            Generator::Full { h, rates } => {
                let mut e = h.to_energy_basis(r);
                e.component_mul_assign(rates);
                h.from_energy_basis(&e)
            }
            Generator::SecondOrder {
                h,
                commutator,
                double_commutator,
            } => {
                let c = h * r - r * h;
                let cc = h * &c - &c * h;
                c * *commutator + cc * *double_commutator
            }
        }
    }
}
