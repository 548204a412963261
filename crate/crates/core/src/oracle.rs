//! Monte Carlo ground truth: average exact unitary evolutions over sampled
//! microscopic times and compare the result with the deterministic routes.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::quantum::{DensityMatrix, Hamiltonian};
use crate::time_model::{block_len, block_rng, SamplerConfig, ThetaSampler, TimeModel, SAMPLE_BLOCK};

pub const MIN_ORACLE_SAMPLES: usize = 1000;
/// A comparison passes iff every elementwise z-score is at most this.
pub const Z_THRESHOLD: f64 = 5.0;
/// Standard errors are floored here before dividing.
pub const STDERR_FLOOR: f64 = 1e-15;

/// Sample mean of e^{−iHθ/ħ} ρ₀ e^{iHθ/ħ} and its standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub mean_state: CMatrix,
    pub stderr_re: DMatrix<f64>,
    pub stderr_im: DMatrix<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Running sums of (x − shift) and (x − shift)² for a vector of reals.
///
/// Shifting by a value the samples cluster around (the θ = 0 state) keeps
/// the variance formula well conditioned and makes the mean exact whenever
/// every sample equals the shift.
#[derive(Debug, Clone)]
struct ShiftedSums {
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl ShiftedSums {
    fn new(len: usize) -> Self {
        Self {
            s1: vec![0.0; len],
            s2: vec![0.0; len],
        }
    }

    fn add(&mut self, deviations: &[f64]) {
        for ((a, b), d) in self.s1.iter_mut().zip(self.s2.iter_mut()).zip(deviations) {
            *a += d;
            *b += d * d;
        }
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.s1.iter_mut().zip(&other.s1) {
            *a += b;
        }
        for (a, b) in self.s2.iter_mut().zip(&other.s2) {
            *a += b;
        }
    }

    /// (mean, standard error) of component `i`.
    fn stats(&self, i: usize, shift: f64, n: usize) -> (f64, f64) {
        let nf = n as f64;
        let mean_dev = self.s1[i] / nf;
        let var = if n > 1 {
            ((self.s2[i] - self.s1[i] * mean_dev) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        (shift + mean_dev, (var / nf).sqrt())
    }
}

fn check_samples(cfg: &SamplerConfig) -> Result<()> {
    if cfg.n_samples < MIN_ORACLE_SAMPLES {
        return Err(Error::Range(format!(
            "oracle needs at least {MIN_ORACLE_SAMPLES} samples, got {}",
            cfg.n_samples
        )));
    }
    Ok(())
}

/// Runs `per_sample` over every sample in fixed-size blocks and folds the
/// block sums in block order, so the result does not depend on how rayon
/// schedules the blocks.
fn accumulate<F>(sampler: &ThetaSampler, cfg: &SamplerConfig, len: usize, per_sample: F) -> ShiftedSums
where
    F: Fn(f64, &mut [f64]) + Sync,
{
    let n_blocks = cfg.n_samples.div_ceil(SAMPLE_BLOCK);
    let partials: Vec<ShiftedSums> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(cfg.seed, b);
            let mut sums = ShiftedSums::new(len);
            let mut dev = vec![0.0; len];
            for _ in 0..block_len(cfg.n_samples, b) {
                let theta = sampler.draw(&mut rng);
                per_sample(theta, &mut dev);
                sums.add(&dev);
            }
            sums
        })
        .collect();
    let mut total = ShiftedSums::new(len);
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Averages the exact unitary evolution of `rho0` over `cfg.n_samples`
/// draws of θ at macroscopic time `t`.
pub fn average_density_matrix(
    rho0: &DensityMatrix,
    h: &Hamiltonian,
    model: &TimeModel,
    t: f64,
    cfg: &SamplerConfig,
) -> Result<OracleResult> {
    if rho0.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: rho0.dim(),
        });
    }
    check_samples(cfg)?;
    let sampler = model.theta_sampler(t)?;
    let n = h.dim();
    let r0 = rho0.matrix();
    let hbar = h.hbar();
    let diagonal = crate::linalg::is_diagonal(h.matrix());
    let levels: Vec<f64> = (0..n).map(|k| h.matrix()[(k, k)].re).collect();
    let energies = h.energies().to_vec();
    let r0_energy = h.to_energy_basis(r0);
    let v = h.eigenvectors().clone();

    // layout: element (k, l) at 2(k·n + l) (real part) and +1 (imaginary)
    let sums = accumulate(&sampler, cfg, 2 * n * n, |theta, dev| {
        if theta == 0.0 {
            dev.iter_mut().for_each(|d| *d = 0.0);
            return;
        }
        if diagonal {
            for k in 0..n {
                for l in 0..n {
                    let idx = 2 * (k * n + l);
                    let x = r0[(k, l)];
                    let value = if k == l {
                        x
                    } else {
                        let arg = -(levels[k] - levels[l]) * theta / hbar;
                        x * Complex64::new(arg.cos(), arg.sin())
                    };
                    dev[idx] = value.re - x.re;
                    dev[idx + 1] = value.im - x.im;
                }
            }
        } else {
            let mut e = r0_energy.clone();
            for k in 0..n {
                for l in 0..n {
                    if k != l {
                        let arg = -(energies[k] - energies[l]) * theta / hbar;
                        e[(k, l)] *= Complex64::new(arg.cos(), arg.sin());
                    }
                }
            }
            let sample = &v * e * v.adjoint();
            for k in 0..n {
                for l in 0..n {
                    let idx = 2 * (k * n + l);
                    dev[idx] = sample[(k, l)].re - r0[(k, l)].re;
                    dev[idx + 1] = sample[(k, l)].im - r0[(k, l)].im;
                }
            }
        }
    });

    let mut mean_state = CMatrix::zeros(n, n);
    let mut stderr_re = DMatrix::zeros(n, n);
    let mut stderr_im = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            let idx = 2 * (k * n + l);
            let (re, se_re) = sums.stats(idx, r0[(k, l)].re, cfg.n_samples);
            let (im, se_im) = sums.stats(idx + 1, r0[(k, l)].im, cfg.n_samples);
            mean_state[(k, l)] = Complex64::new(re, im);
            stderr_re[(k, l)] = se_re;
            stderr_im[(k, l)] = se_im;
        }
    }
    Ok(OracleResult {
        mean_state,
        stderr_re,
        stderr_im,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
    })
}

/// Scalar functions of θ whose averages have closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarKernel {
    /// e^{−iωθ}.
    Phase { omega: f64 },
    /// e^{−θ/T}.
    Decay { lifetime: f64 },
}

impl ScalarKernel {
    pub fn eval(&self, theta: f64) -> Complex64 {
        match *self {
            ScalarKernel::Phase { omega } => {
                let arg = -omega * theta;
                Complex64::new(arg.cos(), arg.sin())
            }
            ScalarKernel::Decay { lifetime } => Complex64::new((-theta / lifetime).exp(), 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarEstimate {
    pub mean: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
    pub n_samples: usize,
}

/// Sample mean and standard error of `kernel(θ)`.
pub fn average_scalar(kernel: ScalarKernel, model: &TimeModel, t: f64, cfg: &SamplerConfig) -> Result<ScalarEstimate> {
    check_samples(cfg)?;
    if let ScalarKernel::Decay { lifetime } = kernel {
        if !(lifetime > 0.0) {
            return Err(Error::Domain(format!("lifetime must be positive, got {lifetime}")));
        }
    }
    let sampler = model.theta_sampler(t)?;
    let sums = accumulate(&sampler, cfg, 2, |theta, dev| {
        let v = kernel.eval(theta);
        dev[0] = v.re - 1.0;
        dev[1] = v.im;
    });
    let (re, stderr_re) = sums.stats(0, 1.0, cfg.n_samples);
    let (im, stderr_im) = sums.stats(1, 0.0, cfg.n_samples);
    Ok(ScalarEstimate {
        mean: Complex64::new(re, im),
        stderr_re,
        stderr_im,
        n_samples: cfg.n_samples,
    })
}

/// One matrix element of a comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementComparison {
    pub row: usize,
    pub col: usize,
    pub deviation: Complex64,
    pub z_re: f64,
    pub z_im: f64,
}

impl ElementComparison {
    pub fn z(&self) -> f64 {
        self.z_re.max(self.z_im)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub max_abs_deviation: f64,
    pub max_z_score: f64,
    /// Element with the largest z-score.
    pub worst: (usize, usize),
    pub threshold: f64,
    pub pass: bool,
    pub entries: Vec<ElementComparison>,
}

/// Elementwise z-scores |oracle − reference|/stderr, real and imaginary parts
/// separately; passes iff the largest is at most [`Z_THRESHOLD`].
pub fn compare(result: &OracleResult, reference: &CMatrix) -> Result<ComparisonReport> {
    let n = result.mean_state.nrows();
    if reference.nrows() != n || reference.ncols() != result.mean_state.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: reference.nrows(),
        });
    }
    let mut entries = Vec::with_capacity(n * n);
    let mut max_abs_deviation: f64 = 0.0;
    let mut max_z_score: f64 = 0.0;
    let mut worst = (0, 0);
    for k in 0..n {
        for l in 0..n {
            let deviation = result.mean_state[(k, l)] - reference[(k, l)];
            let entry = ElementComparison {
                row: k,
                col: l,
                deviation,
                z_re: deviation.re.abs() / result.stderr_re[(k, l)].max(STDERR_FLOOR),
                z_im: deviation.im.abs() / result.stderr_im[(k, l)].max(STDERR_FLOOR),
            };
            max_abs_deviation = max_abs_deviation.max(deviation.norm());
            if entry.z() > max_z_score {
                max_z_score = entry.z();
                worst = (k, l);
            }
            entries.push(entry);
        }
    }
    Ok(ComparisonReport {
        max_abs_deviation,
        max_z_score,
        worst,
        threshold: Z_THRESHOLD,
        pass: max_z_score <= Z_THRESHOLD,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::evolve_analytic;
    use crate::units::UnitSystem;

    fn two_level() -> Hamiltonian {
        Hamiltonian::from_energies(&[0.0, 1.0], &UnitSystem::natural()).unwrap()
    }

    #[test]
    fn trivial_cases_are_exact() {
        let h = two_level();
        let model = TimeModel::poisson(1.0).unwrap();
        let cfg = SamplerConfig::new(7, 5000);
        let diag = DensityMatrix::from_diagonal(&[0.3, 0.7]).unwrap();
        let r = average_density_matrix(&diag, &h, &model, 2.0, &cfg).unwrap();
        assert_eq!(&r.mean_state, diag.matrix());
        assert!(r.stderr_re.iter().chain(r.stderr_im.iter()).all(|s| *s == 0.0));

        let plus = DensityMatrix::uniform_superposition(2).unwrap();
        let r = average_density_matrix(&plus, &h, &model, 0.0, &cfg).unwrap();
        assert_eq!(&r.mean_state, plus.matrix());
    }

    #[test]
    fn too_few_samples_rejected() {
        let model = TimeModel::poisson(1.0).unwrap();
        assert!(average_scalar(ScalarKernel::Phase { omega: 1.0 }, &model, 1.0, &SamplerConfig::new(0, 999)).is_err());
    }

    #[test]
    fn scalar_kernels() {
        let model = TimeModel::poisson(1.0).unwrap();
        let cfg = SamplerConfig::new(3, 200_000);
        let zero = average_scalar(ScalarKernel::Phase { omega: 0.0 }, &model, 1.0, &cfg).unwrap();
        assert_eq!(zero.mean, Complex64::new(1.0, 0.0));
        assert_eq!(zero.stderr_re, 0.0);
        let inf = average_scalar(ScalarKernel::Decay { lifetime: f64::INFINITY }, &model, 1.0, &cfg).unwrap();
        assert_eq!(inf.mean, Complex64::new(1.0, 0.0));

        let phase = average_scalar(ScalarKernel::Phase { omega: 1.0 }, &model, 1.0, &cfg).unwrap();
        let want = model.char_fn(-1.0, 1.0);
        assert!((want - Complex64::from_polar((-0.5f64).exp(), -0.5)).norm() < 1e-15);
        assert!((phase.mean.re - want.re).abs() <= 5.0 * phase.stderr_re);
        assert!((phase.mean.im - want.im).abs() <= 5.0 * phase.stderr_im);

        let quarter = TimeModel::poisson(0.25).unwrap();
        let decay = average_scalar(ScalarKernel::Decay { lifetime: 1.0 }, &quarter, 1.0, &cfg).unwrap();
        assert!((decay.mean.re - (-0.8f64).exp()).abs() <= 5.0 * decay.stderr_re);
    }

    #[test]
    fn oracle_matches_closed_forms() {
        let h = two_level();
        let plus = DensityMatrix::uniform_superposition(2).unwrap();
        let cfg = SamplerConfig::new(11, 100_000);
        for model in [
            TimeModel::poisson(1.0).unwrap(),
            // t/τ = 100 keeps the rejected θ < 0 mass below 1e-12
            TimeModel::gaussian(0.01, 2.0).unwrap(),
            TimeModel::gamma(0.5, 2.0).unwrap(),
        ] {
            let r = average_density_matrix(&plus, &h, &model, 1.0, &cfg).unwrap();
            let exact = evolve_analytic(&plus, &h, &model, 1.0).unwrap();
            let report = compare(&r, exact.matrix()).unwrap();
            assert!(report.pass, "{model:?}: z = {}", report.max_z_score);
            assert!((r.mean_state.trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_diagonal_hamiltonian() {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let m = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.5, 0.5), c(0.5, -0.5), c(1.0, 0.0)]);
        let h = Hamiltonian::new(m, &UnitSystem::natural()).unwrap();
        let rho = DensityMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let model = TimeModel::poisson(0.5).unwrap();
        let r = average_density_matrix(&rho, &h, &model, 2.0, &SamplerConfig::new(5, 50_000)).unwrap();
        let exact = evolve_analytic(&rho, &h, &model, 2.0).unwrap();
        assert!(compare(&r, exact.matrix()).unwrap().pass);
        assert!((r.mean_state.trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perturbed_reference_is_flagged() {
        let h = two_level();
        let plus = DensityMatrix::uniform_superposition(2).unwrap();
        let model = TimeModel::poisson(1.0).unwrap();
        let r = average_density_matrix(&plus, &h, &model, 1.0, &SamplerConfig::new(1, 10_000)).unwrap();
        let same = compare(&r, &r.mean_state).unwrap();
        assert_eq!(same.max_z_score, 0.0);
        assert!(same.pass);
        let mut bad = r.mean_state.clone();
        bad[(1, 0)] += Complex64::new(100.0 * r.stderr_re[(1, 0)], 0.0);
        let report = compare(&r, &bad).unwrap();
        assert!(!report.pass);
        assert_eq!(report.worst, (1, 0));
        assert!((report.max_z_score - 100.0).abs() < 1e-6);
    }

    #[test]
    fn thread_count_does_not_change_bits() {
        let h = two_level();
        let plus = DensityMatrix::uniform_superposition(2).unwrap();
        let model = TimeModel::gaussian(0.3, 2.0).unwrap();
        let cfg = SamplerConfig::new(99, 30_000);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| average_density_matrix(&plus, &h, &model, 1.5, &cfg).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
