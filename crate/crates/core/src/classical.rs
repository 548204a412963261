//! Free classical motion under random time: the averaged phase density obeys
//! a drift–diffusion equation, and individual trajectories keep their shape
//! while the position along them becomes random.

use crate::error::{Error, Result};
use crate::time_model::{SamplerConfig, TimeModel};

pub const MIN_CELLS: usize = 64;
/// Tolerance on Σ W·Δx = 1.
pub const MASS_TOL: f64 = 1e-6;
/// Mass allowed in the two edge cells before the domain counts as too small.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-8;
/// Fraction of the explicit stability limit a step may use.
pub const STABILITY_FACTOR: f64 = 0.4;

/// A probability density on a uniform grid of cells over [x_min, x_max].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid1D {
    x_min: f64,
    x_max: f64,
    values: Vec<f64>,
}

impl DensityGrid1D {
    /// Cell-averaged density values. They must be non-negative and integrate
    /// to one within [`MASS_TOL`].
    pub fn new(x_min: f64, x_max: f64, values: Vec<f64>) -> Result<Self> {
        let grid = Self::unchecked(x_min, x_max, values)?;
        let mass = grid.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Domain(format!("density integrates to {mass}, not 1")));
        }
        Ok(grid)
    }

    fn unchecked(x_min: f64, x_max: f64, values: Vec<f64>) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(Error::Domain(format!("invalid domain [{x_min}, {x_max}]")));
        }
        if values.len() < MIN_CELLS {
            return Err(Error::Domain(format!(
                "grid needs at least {MIN_CELLS} cells, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain(format!("density value {} at cell {i} is invalid", values[i])));
        }
        Ok(Self { x_min, x_max, values })
    }

    /// Normal density N(mean, σ²) averaged over each cell, then rescaled so
    /// the grid carries unit mass.
    pub fn gaussian(x_min: f64, x_max: f64, n_cells: usize, mean: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        let dx = (x_max - x_min) / n_cells as f64;
        let cdf = |x: f64| 0.5 * libm::erfc(-(x - mean) / (sigma * std::f64::consts::SQRT_2));
        let values: Vec<f64> = (0..n_cells)
            .map(|i| {
                let a = x_min + i as f64 * dx;
                (cdf(a + dx) - cdf(a)) / dx
            })
            .collect();
        let grid = Self::unchecked(x_min, x_max, values)?;
        let mass = grid.mass();
        if !(mass > 0.5) {
            return Err(Error::Domain("Gaussian lies mostly outside the grid".into()));
        }
        Ok(grid.scaled(1.0 / mass))
    }

    /// Normalized histogram of `samples` on the same cells. Samples outside
    /// [x_min, x_max) are dropped but still count toward the normalization.
    pub fn from_samples(x_min: f64, x_max: f64, n_cells: usize, samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("no samples".into()));
        }
        let dx = (x_max - x_min) / n_cells as f64;
        let mut counts = vec![0.0; n_cells];
        for &s in samples {
            let cell = ((s - x_min) / dx).floor();
            if cell >= 0.0 && (cell as usize) < n_cells {
                counts[cell as usize] += 1.0;
            }
        }
        let norm = 1.0 / (samples.len() as f64 * dx);
        Self::unchecked(x_min, x_max, counts.into_iter().map(|c| c * norm).collect())
    }

    fn scaled(mut self, factor: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.values.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    /// Σ W·Δx.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx()
    }

    pub fn mean(&self) -> f64 {
        let dx = self.dx();
        self.values.iter().enumerate().map(|(i, w)| self.center(i) * w * dx).sum::<f64>() / self.mass()
    }

    /// Second central moment. Cell averaging adds Δx²/12 to the variance of
    /// a smooth density; that offset is removed.
    pub fn variance(&self) -> f64 {
        let dx = self.dx();
        let mean = self.mean();
        let raw = self
            .values
            .iter()
            .enumerate()
            .map(|(i, w)| (self.center(i) - mean).powi(2) * w * dx)
            .sum::<f64>()
            / self.mass();
        raw - dx * dx / 12.0
    }

    /// Mass in the first and last cells.
    pub fn boundary_mass(&self) -> f64 {
        (self.values[0] + self.values[self.values.len() - 1]) * self.dx()
    }

    /// Merges groups of `factor` adjacent cells.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.values.len() % factor != 0 {
            return Err(Error::Domain(format!(
                "cannot merge {} cells in groups of {factor}",
                self.values.len()
            )));
        }
        let values = self
            .values
            .chunks(factor)
            .map(|c| c.iter().sum::<f64>() / factor as f64)
            .collect();
        Self::unchecked(self.x_min, self.x_max, values)
    }

    /// ∫|W − W'| dx on matching grids.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.values.len() != other.values.len() || self.x_min != other.x_min || self.x_max != other.x_max {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                found: other.values.len(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.dx())
    }
}

/// A free particle starting at `x0` with velocity `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParticle {
    pub x0: f64,
    pub v: f64,
}

/// Largest stable step for the drift–diffusion scheme:
/// 0.4·min(Δx/|v|, Δx²/(2v²τ)).
pub fn pde_max_step(dx: f64, v: f64, tau: f64) -> f64 {
    let advective = if v != 0.0 { dx / v.abs() } else { f64::INFINITY };
    let diffusion = v * v * tau;
    let diffusive = if diffusion > 0.0 { dx * dx / (2.0 * diffusion) } else { f64::INFINITY };
    STABILITY_FACTOR * advective.min(diffusive)
}

/// Integrates ∂W/∂t = v ∂W/∂x + v²τ ∂²W/∂x² from 0 to `t`.
///
/// The equation is written as ∂W/∂t = −∂F/∂x with flux F = −vW − v²τ ∂W/∂x;
/// the advective part of F is upwinded, the diffusive part centered, and the
/// flux through both grid edges is zero. With the printed sign the density
/// drifts toward −x for v > 0.
pub fn evolve_diffusion_pde(
    w0: &DensityGrid1D,
    particle: &FreeParticle,
    tau: f64,
    t: f64,
    dt: f64,
) -> Result<DensityGrid1D> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Domain(format!("tau must be ≥ 0, got {tau}")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!("t must be ≥ 0, got {t}")));
    }
    let dx = w0.dx();
    let v = particle.v;
    let limit = pde_max_step(dx, v, tau);
    if !(dt > 0.0) || dt > limit {
        return Err(Error::StepSize { dt, limit });
    }
    if v == 0.0 || t == 0.0 {
        return Ok(w0.clone());
    }
    let n_steps = ((t / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = t / n_steps as f64;
    let advection = -v;
    let diffusion = v * v * tau;

    let n = w0.n_cells();
    let mut w = w0.values.clone();
    let mut flux = vec![0.0; n + 1];
    for step in 1..=n_steps {
        // flux[i] sits on the interface between cells i-1 and i
        for i in 1..n {
            let upwind = if advection > 0.0 { w[i - 1] } else { w[i] };
            flux[i] = advection * upwind - diffusion * (w[i] - w[i - 1]) / dx;
        }
        for i in 0..n {
            w[i] -= h / dx * (flux[i + 1] - flux[i]);
        }
        let edge = (w[0] + w[n - 1]) * dx;
        if edge > BOUNDARY_MASS_LIMIT {
            return Err(Error::BoundaryMass {
                t: step as f64 * h,
                mass: edge,
                limit: BOUNDARY_MASS_LIMIT,
            });
        }
    }
    let out = DensityGrid1D::unchecked(w0.x_min, w0.x_max, w)?;
    let drift = (out.mass() - w0.mass()).abs();
    if drift > MASS_TOL {
        return Err(Error::Stability(format!("mass changed by {drift:e}")));
    }
    Ok(out)
}

/// Positions x0 + v·θ for sampled microscopic times θ.
pub fn evolve_trajectory_mc(particle: &FreeParticle, model: &TimeModel, t: f64, cfg: &SamplerConfig) -> Result<Vec<f64>> {
    let thetas = model.sample_theta(t, cfg)?;
    Ok(thetas.values.iter().map(|th| particle.x0 + particle.v * th).collect())
}

/// τ₀ (a Lorentz-invariant constant), the particle speed and c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativisticParams {
    pub tau0: f64,
    pub v: f64,
    pub c: f64,
}

impl RelativisticParams {
    pub fn new(tau0: f64, v: f64, c: f64) -> Result<Self> {
        if !(tau0 > 0.0 && c > 0.0) {
            return Err(Error::Domain(format!("tau0 and c must be positive, got {tau0}, {c}")));
        }
        if !(v.abs() < c) {
            return Err(Error::Domain(format!("|v| = {} must be below c = {c}", v.abs())));
        }
        Ok(Self { tau0, v, c })
    }
}

/// τ = τ₀/√(1 − v²/c²).
pub fn relativistic_tau(params: &RelativisticParams) -> Result<f64> {
    let beta = params.v / params.c;
    if !(beta.abs() < 1.0) {
        return Err(Error::Domain(format!("|v|/c = {} must be below 1", beta.abs())));
    }
    Ok(params.tau0 / (1.0 - beta * beta).sqrt())
}

/// Coordinate time and its dispersion from proper time s with dispersion
/// D_ζ: t = u·s and D_θ = u²·D_ζ, u being the time component of the
/// 4-velocity.
pub fn proper_time_relations(u: f64, s: f64, d_zeta: f64) -> Result<(f64, f64)> {
    if !(u >= 1.0) {
        return Err(Error::Domain(format!("u must be ≥ 1, got {u}")));
    }
    Ok((u * s, u * u * d_zeta))
}
