//! Random microscopic time.
//!
//! A [`TimeModel`] describes the distribution of the microscopic time θ that
//! has elapsed after a macroscopic (mean) time `t`. Every averaged evolution
//! in this crate is built from the characteristic function E[e^{iλθ}] of
//! that distribution, and every Monte Carlo check draws θ from the exact
//! sampler defined here.
//!
//! Three families are supported:
//!
//! * generalized Poisson: a clock ticks `N ~ Poisson(t/τ)` times and
//!   θ = τ·(Δ₁ + … + Δ_N) with i.i.d. increments Δ drawn from an
//!   [`IncrementDensity`] on ξ ≥ 0;
//! * Gaussian: θ ~ N(t, κtτ), restricted to θ ≥ 0 by resampling;
//! * modified Poisson: as generalized Poisson, except that the atom at θ = 0
//!   (no tick) is replaced by one draw from a separate initial density.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Tolerance on ∫p = 1 and, in strict mode, on ∫ξp = 1.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Minimum number of grid points for a tabulated density.
pub const MIN_TABULATED_POINTS: usize = 16;
/// Largest mean tick count t/τ accepted by the sampler.
pub const MAX_MEAN_TICKS: f64 = 1e12;
/// Samples drawn from one RNG stream. Fixed so that results do not depend on
/// how blocks are scheduled across threads.
pub const SAMPLE_BLOCK: usize = 4096;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Density p(ξ) of the dimensionless clock increments, ξ ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub enum IncrementDensity {
    /// p(ξ) = e^{-ξ}.
    Exponential,
    /// p(ξ) = ξ^{s-1} e^{-ξ/θ} / (Γ(s) θ^s) with shape `s` and scale `θ`.
    ///
    /// `scale = 1` is the literal gamma density (mean `s`); `scale = 1/s`
    /// gives the unit-mean variant.
    Gamma { shape: f64, scale: f64 },
    /// p(ξ) = δ(ξ - 1): every tick advances the clock by exactly τ.
    Deterministic,
    /// Piecewise-linear density through user-supplied points.
    Tabulated(TabulatedDensity),
}

impl IncrementDensity {
    /// Gamma density of order `shape` with unit scale (mean = `shape`).
    pub fn gamma(shape: f64) -> Result<Self> {
        Self::gamma_scaled(shape, 1.0)
    }

    /// Gamma density of order `shape` rescaled to unit mean.
    pub fn gamma_unit_mean(shape: f64) -> Result<Self> {
        Self::gamma_scaled(shape, 1.0 / shape)
    }

    fn gamma_scaled(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidDensity(format!(
                "gamma shape and scale must be positive, got shape = {shape}, scale = {scale}"
            )));
        }
        Ok(IncrementDensity::Gamma { shape, scale })
    }

    /// φ(ζ) = ∫ p(ξ) e^{iζξ} dξ.
    pub fn char_fn(&self, zeta: f64) -> Complex64 {
        if zeta == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        self.char_fn_complex(Complex64::new(zeta, 0.0))
    }

    /// φ continued to complex arguments; `char_fn_complex(i·s)` is the Laplace
    /// transform E[e^{-sξ}].
    pub fn char_fn_complex(&self, z: Complex64) -> Complex64 {
        if z == Complex64::new(0.0, 0.0) {
            return Complex64::new(1.0, 0.0);
        }
        match self {
            IncrementDensity::Exponential => (Complex64::new(1.0, 0.0) - I * z).inv(),
            IncrementDensity::Gamma { shape, scale } => {
                (Complex64::new(1.0, 0.0) - I * z * *scale).powf(-*shape)
            }
            IncrementDensity::Deterministic => (I * z).exp(),
            IncrementDensity::Tabulated(table) => table.char_fn_complex(z),
        }
    }

    /// φ(z) − 1 without the cancellation of forming φ first; the exponent of
    /// the compound-Poisson characteristic function is (t/τ)(φ(λτ) − 1), and
    /// small λτ is the interesting regime.
    pub fn char_fn_minus_one(&self, z: Complex64) -> Complex64 {
        if z == Complex64::new(0.0, 0.0) {
            return Complex64::new(0.0, 0.0);
        }
        match self {
            IncrementDensity::Exponential => I * z / (Complex64::new(1.0, 0.0) - I * z),
            IncrementDensity::Gamma { shape, scale } => complex_expm1(-*shape * complex_ln1p(-I * z * *scale)),
            IncrementDensity::Deterministic => complex_expm1(I * z),
            IncrementDensity::Tabulated(table) => table.char_fn_minus_one(z),
        }
    }

    /// ∫ ξ p(ξ) dξ.
    pub fn mean(&self) -> f64 {
        match self {
            IncrementDensity::Exponential | IncrementDensity::Deterministic => 1.0,
            IncrementDensity::Gamma { shape, scale } => shape * scale,
            IncrementDensity::Tabulated(table) => table.moment(1),
        }
    }

    /// a² = ∫ ξ² p(ξ) dξ.
    pub fn moment_a2(&self) -> f64 {
        match self {
            IncrementDensity::Exponential => 2.0,
            IncrementDensity::Deterministic => 1.0,
            IncrementDensity::Gamma { shape, scale } => shape * (shape + 1.0) * scale * scale,
            IncrementDensity::Tabulated(table) => table.moment(2),
        }
    }

    /// ∫ p(ξ) dξ.
    pub fn integral(&self) -> f64 {
        match self {
            IncrementDensity::Tabulated(table) => table.moment(0),
            _ => 1.0,
        }
    }

    /// Integrates `f(ξ)·p(ξ)` over the support of the density to roughly
    /// machine precision. `max_frequency` bounds how fast `f` oscillates
    /// (radians per unit ξ) and sets the panel count.
    pub(crate) fn expectation<F: FnMut(f64) -> f64>(&self, mut f: F, max_frequency: f64) -> f64 {
        use crate::quadrature::integrate_panels;
        match self {
            IncrementDensity::Deterministic => f(1.0),
            IncrementDensity::Exponential => {
                let upper = 45.0;
                let panels = panel_count(upper, max_frequency);
                integrate_panels(|x| f(x) * (-x).exp(), 0.0, upper, panels)
            }
            IncrementDensity::Gamma { shape, scale } => {
                let (shape, scale) = (*shape, *scale);
                let upper = scale * (shape + 45.0 + 10.0 * shape.sqrt());
                let log_norm = libm::lgamma(shape) + shape * scale.ln();
                let panels = panel_count(upper, max_frequency) + (upper / scale).ceil() as usize;
                integrate_panels(
                    |x| {
                        if x <= 0.0 {
                            return 0.0;
                        }
                        f(x) * ((shape - 1.0) * x.ln() - x / scale - log_norm).exp()
                    },
                    0.0,
                    upper,
                    panels,
                )
            }
            IncrementDensity::Tabulated(table) => table
                .xi
                .windows(2)
                .zip(table.p.windows(2))
                .map(|(x, p)| {
                    let (a, b) = (x[0], x[1]);
                    let slope = (p[1] - p[0]) / (b - a);
                    let panels = panel_count(b - a, max_frequency);
                    integrate_panels(|xi| f(xi) * (p[0] + slope * (xi - a)), a, b, panels)
                })
                .sum(),
        }
    }

    fn sampler(&self) -> IncrementSampler {
        match self {
            IncrementDensity::Exponential => IncrementSampler::GammaSum { shape: 1.0, scale: 1.0 },
            IncrementDensity::Gamma { shape, scale } => IncrementSampler::GammaSum {
                shape: *shape,
                scale: *scale,
            },
            IncrementDensity::Deterministic => IncrementSampler::Unit,
            IncrementDensity::Tabulated(table) => IncrementSampler::Table(table.clone()),
        }
    }
}

fn panel_count(width: f64, frequency: f64) -> usize {
    // roughly one panel per radian of phase, never fewer than a handful
    ((width * frequency.abs()).ceil() as usize).max(4) + (width.ceil() as usize)
}

/// A density tabulated at strictly increasing points ξ₀ < ξ₁ < … and
/// interpolated linearly between them (zero outside the grid).
///
/// All integrals (normalization, moments, characteristic function) are exact
/// for the interpolant, and the sampler draws from the same interpolant, so
/// the two never disagree by a discretization error.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    xi: Vec<f64>,
    p: Vec<f64>,
    cdf: Vec<f64>,
}

impl TabulatedDensity {
    /// Requires ∫p = 1 within [`NORMALIZATION_TOL`].
    pub fn new(xi: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let table = Self::build(xi, p)?;
        let total = table.moment(0);
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDensity(format!(
                "tabulated density integrates to {total}, not 1"
            )));
        }
        Ok(table)
    }

    /// Rescales `p` so that the interpolant integrates to one.
    pub fn normalized(xi: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let table = Self::build(xi, p)?;
        let total = table.moment(0);
        let p = table.p.iter().map(|v| v / total).collect();
        Self::build(table.xi, p)
    }

    fn build(xi: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if xi.len() != p.len() {
            return Err(Error::InvalidDensity(format!(
                "grid has {} points but {} density values",
                xi.len(),
                p.len()
            )));
        }
        if xi.len() < MIN_TABULATED_POINTS {
            return Err(Error::InvalidDensity(format!(
                "tabulated density needs at least {MIN_TABULATED_POINTS} points, got {}",
                xi.len()
            )));
        }
        if xi.iter().chain(&p).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("non-finite grid or density value".into()));
        }
        if xi[0] < 0.0 {
            return Err(Error::InvalidDensity(format!(
                "density support must lie in ξ ≥ 0, grid starts at {}",
                xi[0]
            )));
        }
        if let Some(w) = xi.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidDensity(format!(
                "grid is not strictly increasing at index {}",
                w + 1
            )));
        }
        if let Some(i) = p.iter().position(|v| *v < 0.0) {
            return Err(Error::InvalidDensity(format!("negative density at index {i}")));
        }
        let mut cdf = Vec::with_capacity(xi.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for k in 1..xi.len() {
            acc += 0.5 * (xi[k] - xi[k - 1]) * (p[k] + p[k - 1]);
            cdf.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::InvalidDensity("density is not normalizable".into()));
        }
        Ok(Self { xi, p, cdf })
    }

    pub fn grid(&self) -> &[f64] {
        &self.xi
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    /// ∫ ξ^k p(ξ) dξ for k ≤ 2, exact for the interpolant (three-point
    /// Gauss–Legendre per segment integrates cubics exactly).
    fn moment(&self, k: i32) -> f64 {
        const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let mut total = 0.0;
        for s in 0..self.xi.len() - 1 {
            let (a, b) = (self.xi[s], self.xi[s + 1]);
            let (pa, pb) = (self.p[s], self.p[s + 1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (u, w) in NODES.iter().zip(WEIGHTS) {
                let x = mid + half * u;
                let px = pa + (pb - pa) * (x - a) / (b - a);
                total += w * half * x.powi(k) * px;
            }
        }
        total
    }

    fn char_fn_complex(&self, z: Complex64) -> Complex64 {
        let mut total = Complex64::new(0.0, 0.0);
        for s in 0..self.xi.len() - 1 {
            let (a, b) = (self.xi[s], self.xi[s + 1]);
            let (pa, pb) = (self.p[s], self.p[s + 1]);
            let h = b - a;
            let w = z * h;
            let (f0, f1) = linear_phase_moments(w);
            total += (I * z * a).exp() * h * (pa * f0 + (pb - pa) * f1);
        }
        total
    }

    /// ∫ ξⁿ p(ξ) dξ in closed form for the interpolant.
    fn raw_moment(&self, n: i32) -> f64 {
        let mut total = 0.0;
        for s in 0..self.xi.len() - 1 {
            let (a, b) = (self.xi[s], self.xi[s + 1]);
            let (pa, pb) = (self.p[s], self.p[s + 1]);
            let slope = (pb - pa) / (b - a);
            let n1 = (n + 1) as f64;
            let n2 = (n + 2) as f64;
            total += (pa - slope * a) * (b.powi(n + 1) - a.powi(n + 1)) / n1
                + slope * (b.powi(n + 2) - a.powi(n + 2)) / n2;
        }
        total
    }

    fn char_fn_minus_one(&self, z: Complex64) -> Complex64 {
        let support = *self.xi.last().expect("non-empty grid");
        if z.norm() * support < 0.5 {
            // Σ_{n≥1} (iz)ⁿ mₙ / n!
            let mut total = Complex64::new(0.0, 0.0);
            let mut coeff = Complex64::new(1.0, 0.0);
            for n in 1..40 {
                coeff = coeff * I * z / n as f64;
                let term = coeff * self.raw_moment(n);
                total += term;
                if term.norm() < 1e-18 * total.norm() {
                    break;
                }
            }
            total + (self.moment(0) - 1.0)
        } else {
            self.char_fn_complex(z) - 1.0
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cdf.last().expect("non-empty grid");
        let u = rng.random::<f64>() * total;
        // first segment whose upper cdf exceeds u
        let seg = self.cdf[1..].partition_point(|c| *c <= u).min(self.xi.len() - 2);
        let r = (u - self.cdf[seg]).max(0.0);
        let (a, b) = (self.xi[seg], self.xi[seg + 1]);
        let (pa, pb) = (self.p[seg], self.p[seg + 1]);
        let slope = (pb - pa) / (b - a);
        let disc = (pa * pa + 2.0 * slope * r).max(0.0);
        let denom = pa + disc.sqrt();
        let x = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
        (a + x).clamp(a, b)
    }
}

/// e^w − 1, accurate for small |w|.
fn complex_expm1(w: Complex64) -> Complex64 {
    let half = (0.5 * w.im).sin();
    Complex64::new(
        libm::expm1(w.re) * w.im.cos() - 2.0 * half * half,
        w.re.exp() * w.im.sin(),
    )
}

/// ln(1 + w) on the principal branch, accurate for small |w|.
fn complex_ln1p(w: Complex64) -> Complex64 {
    let modulus = 0.5 * libm::log1p(2.0 * w.re + w.norm_sqr());
    Complex64::new(modulus, w.im.atan2(1.0 + w.re))
}

/// F0(w) = ∫₀¹ e^{iwu} du and F1(w) = ∫₀¹ u e^{iwu} du.
fn linear_phase_moments(w: Complex64) -> (Complex64, Complex64) {
    if w.norm() < 0.5 {
        // power series, converges fast for small |w|
        let iw = I * w;
        let mut term = Complex64::new(1.0, 0.0);
        let mut f0 = Complex64::new(0.0, 0.0);
        let mut f1 = Complex64::new(0.0, 0.0);
        for n in 0..30 {
            let nf = n as f64;
            f0 += term / (nf + 1.0);
            f1 += term / (nf + 2.0);
            term = term * iw / (nf + 1.0);
        }
        (f0, f1)
    } else {
        let iw = I * w;
        let e = iw.exp();
        let f0 = (e - 1.0) / iw;
        let f1 = e / iw - (e - 1.0) / (iw * iw);
        (f0, f1)
    }
}

#[derive(Debug, Clone)]
enum IncrementSampler {
    GammaSum { shape: f64, scale: f64 },
    Unit,
    Table(TabulatedDensity),
}

impl IncrementSampler {
    /// Sum of `n` independent increments.
    fn sum<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match self {
            // a sum of n Gamma(s, θ) variables is Gamma(n·s, θ)
            IncrementSampler::GammaSum { shape, scale } => Gamma::new(n as f64 * shape, *scale)
                .expect("positive gamma parameters")
                .sample(rng),
            IncrementSampler::Unit => n as f64,
            IncrementSampler::Table(table) => (0..n).map(|_| table.sample(rng)).sum(),
        }
    }
}

/// Outcome of [`validate_density`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub integral: f64,
    pub mean: f64,
    pub second_moment: f64,
    pub warnings: Vec<String>,
}

/// Checks ∫p = 1 and reports the mean. With `strict_mean`, a mean different
/// from 1 is an error rather than a warning.
pub fn validate_density(density: &IncrementDensity, strict_mean: bool) -> Result<DensityReport> {
    let integral = density.integral();
    if (integral - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidDensity(format!("integral = {integral}")));
    }
    let mean = density.mean();
    let second_moment = density.moment_a2();
    if !second_moment.is_finite() {
        return Err(Error::InvalidDensity("second moment diverges".into()));
    }
    let mut warnings = Vec::new();
    if (mean - 1.0).abs() > NORMALIZATION_TOL {
        if strict_mean {
            return Err(Error::InvalidDensity(format!("mean = {mean}")));
        }
        warnings.push(format!(
            "mean = {mean}: the macroscopic clock runs {mean} times faster than t"
        ));
    }
    Ok(DensityReport {
        integral,
        mean,
        second_moment,
        warnings,
    })
}

/// Structure of the time process.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeFamily {
    GeneralizedPoisson {
        increments: IncrementDensity,
    },
    Gaussian {
        kappa: f64,
    },
    ModifiedPoisson {
        increments: IncrementDensity,
        initial: IncrementDensity,
    },
}

/// Seed and sample count for Monte Carlo draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub seed: u64,
    pub n_samples: usize,
}

impl SamplerConfig {
    pub fn new(seed: u64, n_samples: usize) -> Self {
        Self { seed, n_samples }
    }
}

/// Sampled microscopic times plus sampler diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSamples {
    pub values: Vec<f64>,
    /// Probability mass of the untruncated Gaussian below θ = 0 (zero for
    /// the Poisson families). Resampling removes it, which biases moments by
    /// at most this order.
    pub truncated_mass: f64,
}

/// Stochastic model of the microscopic time θ given the macroscopic time t.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeModel {
    tau: f64,
    family: TimeFamily,
}

impl TimeModel {
    pub fn new(tau: f64, family: TimeFamily) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidModel(format!("tau must be positive, got {tau}")));
        }
        match &family {
            TimeFamily::GeneralizedPoisson { increments } => {
                validate_density(increments, false)?;
            }
            TimeFamily::Gaussian { kappa } => {
                if !(kappa.is_finite() && *kappa > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "kappa must be positive, got {kappa}"
                    )));
                }
            }
            TimeFamily::ModifiedPoisson { increments, initial } => {
                validate_density(increments, false)?;
                validate_density(initial, false)?;
            }
        }
        Ok(Self { tau, family })
    }

    /// Poisson time: exponential increments.
    pub fn poisson(tau: f64) -> Result<Self> {
        Self::generalized_poisson(tau, IncrementDensity::Exponential)
    }

    /// Modular time: every tick advances the clock by exactly τ.
    pub fn modular(tau: f64) -> Result<Self> {
        Self::generalized_poisson(tau, IncrementDensity::Deterministic)
    }

    /// Gamma time of order `shape` with the literal (unit-scale) density.
    pub fn gamma(tau: f64, shape: f64) -> Result<Self> {
        Self::generalized_poisson(tau, IncrementDensity::gamma(shape)?)
    }

    pub fn generalized_poisson(tau: f64, increments: IncrementDensity) -> Result<Self> {
        Self::new(tau, TimeFamily::GeneralizedPoisson { increments })
    }

    /// Gaussian time with Var(θ) = κ·t·τ.
    pub fn gaussian(tau: f64, kappa: f64) -> Result<Self> {
        Self::new(tau, TimeFamily::Gaussian { kappa })
    }

    pub fn modified_poisson(tau: f64, increments: IncrementDensity, initial: IncrementDensity) -> Result<Self> {
        Self::new(tau, TimeFamily::ModifiedPoisson { increments, initial })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn family(&self) -> &TimeFamily {
        &self.family
    }

    /// Same family with a different τ.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(tau, self.family.clone())
    }

    /// d E[θ]/dt for the stationary part of the process.
    pub fn clock_rate(&self) -> f64 {
        match &self.family {
            TimeFamily::GeneralizedPoisson { increments } | TimeFamily::ModifiedPoisson { increments, .. } => {
                increments.mean()
            }
            TimeFamily::Gaussian { .. } => 1.0,
        }
    }

    /// Coefficient a² of the second-order expansion of the generator
    /// (κ for Gaussian time).
    pub fn second_moment_coefficient(&self) -> f64 {
        match &self.family {
            TimeFamily::GeneralizedPoisson { increments } | TimeFamily::ModifiedPoisson { increments, .. } => {
                increments.moment_a2()
            }
            TimeFamily::Gaussian { kappa } => *kappa,
        }
    }

    /// E[θ] at macroscopic time t (Gaussian truncation ignored).
    pub fn theta_mean(&self, t: f64) -> f64 {
        match &self.family {
            TimeFamily::GeneralizedPoisson { increments } => increments.mean() * t,
            TimeFamily::Gaussian { .. } => t,
            TimeFamily::ModifiedPoisson { increments, initial } => {
                let p0 = (-t / self.tau).exp();
                increments.mean() * t + p0 * initial.mean() * self.tau
            }
        }
    }

    /// Var(θ) at macroscopic time t (Gaussian truncation ignored).
    pub fn theta_variance(&self, t: f64) -> f64 {
        match &self.family {
            // compound Poisson: E[N]·E[Δ²]
            TimeFamily::GeneralizedPoisson { increments } => t * self.tau * increments.moment_a2(),
            TimeFamily::Gaussian { kappa } => kappa * t * self.tau,
            TimeFamily::ModifiedPoisson { increments, initial } => {
                let p0 = (-t / self.tau).exp();
                let second = t * self.tau * increments.moment_a2()
                    + (increments.mean() * t).powi(2)
                    + p0 * self.tau * self.tau * initial.moment_a2();
                second - self.theta_mean(t).powi(2)
            }
        }
    }

    /// E[e^{iλθ}] at macroscopic time `t`.
    ///
    /// Quantum phase factors e^{-iωθ} average to `char_fn(-ω, t)`.
    pub fn char_fn(&self, lambda: f64, t: f64) -> Complex64 {
        if lambda == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        self.char_fn_complex(Complex64::new(lambda, 0.0), t)
    }

    /// The characteristic function continued to complex λ. Evaluated at
    /// λ = i/T it is the Laplace transform E[e^{-θ/T}].
    pub fn char_fn_complex(&self, lambda: Complex64, t: f64) -> Complex64 {
        if t == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        let tau = self.tau;
        match &self.family {
            TimeFamily::GeneralizedPoisson { increments } => {
                (increments.char_fn_minus_one(lambda * tau) * (t / tau)).exp()
            }
            TimeFamily::Gaussian { kappa } => (I * lambda * t - 0.5 * kappa * lambda * lambda * t * tau).exp(),
            TimeFamily::ModifiedPoisson { increments, initial } => {
                let stationary = (increments.char_fn_minus_one(lambda * tau) * (t / tau)).exp();
                stationary + (-t / tau).exp() * initial.char_fn_minus_one(lambda * tau)
            }
        }
    }

    /// d/dt ln E[e^{-iωθ}] for the stationary families: the per-element rate
    /// of the averaged evolution in the energy basis.
    pub fn generator(&self, omega: f64) -> Result<Complex64> {
        if omega == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        match &self.family {
            TimeFamily::GeneralizedPoisson { increments } => {
                Ok(increments.char_fn_minus_one(Complex64::new(-omega * self.tau, 0.0)) / self.tau)
            }
            TimeFamily::Gaussian { kappa } => {
                Ok(Complex64::new(-0.5 * kappa * omega * omega * self.tau, -omega))
            }
            TimeFamily::ModifiedPoisson { .. } => Err(Error::InvalidModel(
                "modified Poisson time has no time-homogeneous generator".into(),
            )),
        }
    }

    /// Mass of N(t, κtτ) below zero; zero for the Poisson families.
    pub fn gaussian_truncation_mass(&self, t: f64) -> f64 {
        match &self.family {
            TimeFamily::Gaussian { kappa } if t > 0.0 => {
                0.5 * libm::erfc((t / (kappa * self.tau)).sqrt() / std::f64::consts::SQRT_2)
            }
            _ => 0.0,
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Domain(format!("macroscopic time must be ≥ 0, got {t}")));
        }
        if t / self.tau > MAX_MEAN_TICKS {
            return Err(Error::Range(format!(
                "t/τ = {:e} exceeds the sampler limit {MAX_MEAN_TICKS:e}",
                t / self.tau
            )));
        }
        Ok(())
    }

    /// Prepares a sampler for θ at macroscopic time `t`.
    pub fn theta_sampler(&self, t: f64) -> Result<ThetaSampler> {
        self.check_time(t)?;
        let ticks = if t > 0.0 {
            Some(Poisson::new(t / self.tau).map_err(|e| Error::Range(e.to_string()))?)
        } else {
            None
        };
        let kind = match &self.family {
            TimeFamily::GeneralizedPoisson { increments } => SamplerKind::Poisson {
                ticks,
                increments: increments.sampler(),
                initial: None,
            },
            TimeFamily::ModifiedPoisson { increments, initial } => SamplerKind::Poisson {
                ticks,
                increments: increments.sampler(),
                initial: Some(initial.sampler()),
            },
            TimeFamily::Gaussian { kappa } => SamplerKind::Gaussian {
                std: (kappa * t * self.tau).sqrt(),
            },
        };
        Ok(ThetaSampler {
            t,
            tau: self.tau,
            kind,
        })
    }

    /// Draws `cfg.n_samples` values of θ at macroscopic time `t`.
    ///
    /// Sample `j` lives in block `j / SAMPLE_BLOCK`, and each block has its
    /// own ChaCha stream keyed by `(seed, block)`, so the output is identical
    /// for any number of worker threads.
    pub fn sample_theta(&self, t: f64, cfg: &SamplerConfig) -> Result<ThetaSamples> {
        let sampler = self.theta_sampler(t)?;
        let n_blocks = cfg.n_samples.div_ceil(SAMPLE_BLOCK);
        let blocks: Vec<Vec<f64>> = (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let len = block_len(cfg.n_samples, b);
                let mut rng = block_rng(cfg.seed, b);
                (0..len).map(|_| sampler.draw(&mut rng)).collect()
            })
            .collect();
        Ok(ThetaSamples {
            values: blocks.concat(),
            truncated_mass: self.gaussian_truncation_mass(t),
        })
    }
}

pub(crate) fn block_len(n_samples: usize, block: usize) -> usize {
    SAMPLE_BLOCK.min(n_samples - block * SAMPLE_BLOCK)
}

pub(crate) fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Poisson {
        ticks: Option<Poisson<f64>>,
        increments: IncrementSampler,
        initial: Option<IncrementSampler>,
    },
    Gaussian {
        std: f64,
    },
}

/// Exact sampler of θ at a fixed macroscopic time.
#[derive(Debug, Clone)]
pub struct ThetaSampler {
    t: f64,
    tau: f64,
    kind: SamplerKind,
}

impl ThetaSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Poisson {
                ticks,
                increments,
                initial,
            } => {
                let n = match ticks {
                    Some(d) => d.sample(rng) as u64,
                    None => 0,
                };
                match (n, initial) {
                    (0, Some(init)) => self.tau * init.sum(1, rng),
                    _ => self.tau * increments.sum(n, rng),
                }
            }
            SamplerKind::Gaussian { std } => {
                if *std == 0.0 {
                    return self.t;
                }
                loop {
                    let z: f64 = StandardNormal.sample(rng);
                    let theta = self.t + std * z;
                    if theta >= 0.0 {
                        return theta;
                    }
                }
            }
        }
    }
}

/// Increment density sampled from a uniform grid over [0, `upper`], used by
/// tests and scenario files that describe a density by formula.
pub fn tabulate<F: Fn(f64) -> f64>(f: F, upper: f64, points: usize) -> Result<TabulatedDensity> {
    let xi: Vec<f64> = (0..points)
        .map(|k| upper * k as f64 / (points - 1) as f64)
        .collect();
    let p = xi.iter().map(|x| f(*x)).collect();
    TabulatedDensity::normalized(xi, p)
}

/// 2π, used by the modular-time helpers.
pub const TWO_PI: f64 = 2.0 * PI;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn char_fn_minus_one_is_accurate_at_small_arguments() {
        let table = tabulate(|x| x / 2.0, 2.0, 17).unwrap();
        for d in [
            IncrementDensity::Exponential,
            IncrementDensity::gamma(2.5).unwrap(),
            IncrementDensity::Deterministic,
            IncrementDensity::Tabulated(table),
        ] {
            // agrees with the direct form where cancellation is harmless
            for zeta in [0.7, 2.0, -5.0] {
                let z = Complex64::new(zeta, 0.0);
                assert!(close(d.char_fn_minus_one(z), d.char_fn_complex(z) - 1.0, 1e-13), "{d:?}");
            }
            // φ(ζ) − 1 = iζm₁ − ζ²m₂/2 + O(ζ³)
            let zeta = 1e-9;
            let series = Complex64::new(-zeta * zeta * d.moment_a2() / 2.0, zeta * d.mean());
            let got = d.char_fn_minus_one(Complex64::new(zeta, 0.0));
            assert!((got - series).norm() <= 1e-12 * series.norm(), "{d:?}: {got} vs {series}");
        }
    }

    #[test]
    fn increment_char_fn_examples() {
        let one = Complex64::new(1.0, 0.0);
        assert_eq!(IncrementDensity::Exponential.char_fn(0.0), one);
        assert!(close(
            IncrementDensity::Exponential.char_fn(1.0),
            Complex64::new(0.5, 0.5),
            1e-15
        ));
        let g2 = IncrementDensity::gamma(2.0).unwrap();
        for lambda in [0.3, 1.0, 2.5] {
            let l2: f64 = lambda * lambda;
            let expected = Complex64::new(1.0 - l2, 2.0 * lambda) / ((1.0 + l2) * (1.0 + l2));
            assert!(close(g2.char_fn(lambda), expected, 1e-14), "λ = {lambda}");
        }
        assert!(close(
            IncrementDensity::Deterministic.char_fn(TWO_PI),
            one,
            1e-15
        ));
    }

    #[test]
    fn moment_a2_examples() {
        assert_eq!(IncrementDensity::Exponential.moment_a2(), 2.0);
        assert_eq!(IncrementDensity::Deterministic.moment_a2(), 1.0);
        assert_eq!(IncrementDensity::gamma(2.0).unwrap().moment_a2(), 6.0);
    }

    #[test]
    fn validate_density_strict_and_lenient() {
        assert!(validate_density(&IncrementDensity::Exponential, true).is_ok());
        let g2 = IncrementDensity::gamma(2.0).unwrap();
        let err = validate_density(&g2, true).unwrap_err();
        assert!(err.to_string().contains("mean = 2"), "{err}");
        let report = validate_density(&g2, false).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.mean, 2.0);
        let unit = IncrementDensity::gamma_unit_mean(2.0).unwrap();
        assert!(validate_density(&unit, true).is_ok());
    }

    #[test]
    fn tabulated_rejects_bad_grids() {
        let xi: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let p = vec![0.1; 10];
        assert!(matches!(
            TabulatedDensity::new(xi, p),
            Err(Error::InvalidDensity(_))
        ));
        let xi: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let mut bad = xi.clone();
        bad[5] = bad[4];
        assert!(TabulatedDensity::normalized(bad, vec![1.0; 20]).is_err());
        assert!(TabulatedDensity::normalized(xi.clone(), vec![0.0; 20]).is_err());
        assert!(TabulatedDensity::new(xi.clone(), vec![1.0; 20]).is_err());
        let mut neg = vec![1.0; 20];
        neg[3] = -0.5;
        assert!(TabulatedDensity::normalized(xi, neg).is_err());
    }

    #[test]
    fn tabulated_moments_match_interpolant() {
        // p(ξ) = ξ/2 on [0, 2] is linear, so the table represents it exactly
        let table = tabulate(|x| x / 2.0, 2.0, 17).unwrap();
        let d = IncrementDensity::Tabulated(table);
        assert!((d.integral() - 1.0).abs() < 1e-14);
        assert!((d.mean() - 4.0 / 3.0).abs() < 1e-14);
        assert!((d.moment_a2() - 2.0).abs() < 1e-14);
        // φ(ζ) = ∫₀² (ξ/2) e^{iζξ} dξ, closed form
        for zeta in [0.01, 0.4, 3.0, 17.0] {
            let iz = I * zeta;
            let e = (iz * 2.0).exp();
            let exact = if zeta < 1.0 {
                // Σ (iζ)ⁿ 2ⁿ⁺¹ / (n! (n + 2))
                let mut sum = Complex64::new(0.0, 0.0);
                let mut c = Complex64::new(1.0, 0.0);
                for n in 0..40 {
                    sum += c * 2f64.powi(n + 1) / (n as f64 + 2.0);
                    c = c * iz / (n as f64 + 1.0);
                }
                sum
            } else {
                0.5 * (2.0 * e / iz - (e - 1.0) / (iz * iz))
            };
            assert!(close(d.char_fn(zeta), exact, 1e-13), "ζ = {zeta}");
        }
    }

    #[test]
    fn gaussian_char_fn_with_kappa_two_matches_double_commutator_form() {
        let model = TimeModel::gaussian(0.3, 2.0).unwrap();
        let (l, t) = (1.7f64, 2.2);
        let expected = Complex64::new(-l * l * t * 0.3, l * t).exp();
        assert!(close(model.char_fn(l, t), expected, 1e-15));
    }

    #[test]
    fn macro_char_fn_examples() {
        let poisson = TimeModel::poisson(1.0).unwrap();
        let v = poisson.char_fn(1.0, 1.0);
        assert!(close(v, Complex64::new(-0.5, 0.5).exp(), 1e-15));
        assert!((v.re - 0.5323).abs() < 1e-4 && (v.im - 0.2908).abs() < 1e-4);
        let modular = TimeModel::modular(0.5).unwrap();
        for t in [0.1, 1.0, 7.3, 100.0] {
            assert!(close(modular.char_fn(TWO_PI / 0.5, t), Complex64::new(1.0, 0.0), 1e-12));
        }
    }

    #[test]
    fn modified_poisson_reduces_to_stationary_at_large_t() {
        let m = TimeModel::modified_poisson(
            1.0,
            IncrementDensity::Exponential,
            IncrementDensity::gamma_unit_mean(3.0).unwrap(),
        )
        .unwrap();
        let g = TimeModel::poisson(1.0).unwrap();
        assert!(close(m.char_fn(0.7, 60.0), g.char_fn(0.7, 60.0), 1e-20));
        assert!((m.char_fn(0.7, 0.5) - g.char_fn(0.7, 0.5)).norm() > 1e-3);
    }

    #[test]
    fn sampler_rejects_bad_times() {
        let m = TimeModel::poisson(1e-3).unwrap();
        let cfg = SamplerConfig::new(1, 10);
        assert!(matches!(m.sample_theta(2e9, &cfg), Err(Error::Range(_))));
        assert!(matches!(m.sample_theta(-1.0, &cfg), Err(Error::Domain(_))));
        assert!(TimeModel::poisson(0.0).is_err());
        assert!(TimeModel::gaussian(1.0, -2.0).is_err());
    }

    #[test]
    fn degenerate_and_modular_samples() {
        let cfg = SamplerConfig::new(7, 5000);
        let zero = TimeModel::poisson(0.4).unwrap().sample_theta(0.0, &cfg).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
        let tau = 0.37;
        let modular = TimeModel::modular(tau).unwrap().sample_theta(5.0 * tau, &cfg).unwrap();
        for v in modular.values {
            let k = (v / tau).round();
            assert_eq!(v, k * tau);
        }
    }

    #[test]
    fn samples_do_not_depend_on_thread_count() {
        let model = TimeModel::gamma(0.2, 2.0).unwrap();
        let cfg = SamplerConfig::new(99, 3 * SAMPLE_BLOCK + 17);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| model.sample_theta(3.0, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.values.len(), cfg.n_samples);
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn tabulated_sampler_matches_moments() {
        let table = tabulate(|x| x * (-x).exp(), 30.0, 600).unwrap();
        let d = IncrementDensity::Tabulated(table.clone());
        let model = TimeModel::generalized_poisson(1.0, d.clone()).unwrap();
        let cfg = SamplerConfig::new(3, 200_000);
        // one tick on average is not enough to isolate increments, so sample
        // the increments directly
        let mut rng = block_rng(cfg.seed, 0);
        let xs: Vec<f64> = (0..cfg.n_samples).map(|_| table.sample(&mut rng)).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - d.mean()).abs() < 5.0 * se, "{mean} vs {}", d.mean());
        assert!(model.theta_mean(2.0) > 0.0);
    }

    proptest! {
        #[test]
        fn char_fn_bounded_by_one(lambda in -50.0f64..50.0, t in 0.0f64..20.0, tau in 0.01f64..3.0, family in 0usize..5) {
            let model = match family {
                0 => TimeModel::poisson(tau),
                1 => TimeModel::gaussian(tau, 2.0),
                2 => TimeModel::gamma(tau, 2.0),
                3 => TimeModel::modular(tau),
                _ => TimeModel::modified_poisson(tau, IncrementDensity::Exponential, IncrementDensity::Deterministic),
            }.unwrap();
            let v = model.char_fn(lambda, t);
            prop_assert!(v.norm() <= 1.0 + 1e-12);
            prop_assert_eq!(model.char_fn(0.0, t), Complex64::new(1.0, 0.0));
        }

        #[test]
        fn gamma_char_fn_is_power_of_exponential(zeta in -20.0f64..20.0) {
            let g = IncrementDensity::gamma(3.0).unwrap().char_fn(zeta);
            let e = IncrementDensity::Exponential.char_fn(zeta);
            prop_assert!((g - e * e * e).norm() < 1e-12);
        }
    }
}
