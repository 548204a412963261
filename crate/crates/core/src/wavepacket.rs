//! A free Gaussian wave packet whose evolution time is Gaussian-distributed.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::quadrature::integrate_adaptive;
use crate::units::UnitSystem;

/// Half-width of the θ window in standard deviations of the time density.
pub const WINDOW_SIGMAS: f64 = 8.0;
/// Relative accuracy requested from the θ quadrature.
pub const QUADRATURE_REL_TOL: f64 = 1e-10;
/// Window truncation mass above which a warning is raised.
pub const TRUNCATION_WARN: f64 = 1e-6;
/// Below this value of mδx²/(ħ√(tτ)) the large-time regime counts as reached.
pub const LARGE_TIME_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPacket {
    pub m: f64,
    pub delta_x: f64,
    pub x0: f64,
}

impl GaussianPacket {
    pub fn new(m: f64, delta_x: f64, x0: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite() && delta_x > 0.0 && delta_x.is_finite() && x0.is_finite()) {
            return Err(Error::Domain(format!(
                "packet needs m > 0 and δx > 0, got m = {m}, δx = {delta_x}"
            )));
        }
        Ok(Self { m, delta_x, x0 })
    }

    /// σ²(θ) = δx² + (ħθ/(2mδx))².
    pub fn variance(&self, theta: f64, units: &UnitSystem) -> f64 {
        let spread = units.hbar() * theta / (2.0 * self.m * self.delta_x);
        self.delta_x * self.delta_x + spread * spread
    }
}

fn normal_density(x: f64, mean: f64, variance: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

/// Π(x, θ) = |ψ(x, θ)|², a normal density centered at x0.
pub fn density_conventional(packet: &GaussianPacket, x: f64, theta: f64, units: &UnitSystem) -> Result<f64> {
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::Domain(format!("θ must be ≥ 0, got {theta}")));
    }
    Ok(normal_density(x, packet.x0, packet.variance(theta, units)))
}

/// The θ interval the average is taken over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingWindow {
    pub lo: f64,
    pub hi: f64,
    /// Mass of the θ ≥ 0 time density lying outside [lo, hi].
    pub excluded_mass: f64,
    pub warning: Option<&'static str>,
}

/// [max(0, t − 8s), t + 8s] with s = √(κtτ).
pub fn averaging_window(tau: f64, kappa: f64, t: f64) -> Result<AveragingWindow> {
    check_time_params(tau, kappa, t)?;
    let s = (kappa * t * tau).sqrt();
    let lo = (t - WINDOW_SIGMAS * s).max(0.0);
    let hi = t + WINDOW_SIGMAS * s;
    if s == 0.0 {
        return Ok(AveragingWindow {
            lo: t,
            hi: t,
            excluded_mass: 0.0,
            warning: None,
        });
    }
    let (inside, positive) = window_masses(t, s, lo, hi);
    let excluded_mass = ((positive - inside) / positive).max(0.0);
    Ok(AveragingWindow {
        lo,
        hi,
        excluded_mass,
        warning: (excluded_mass > TRUNCATION_WARN).then_some("time density truncated by more than 1e-6"),
    })
}

fn check_time_params(tau: f64, kappa: f64, t: f64) -> Result<()> {
    if !(tau.is_finite() && tau >= 0.0 && kappa.is_finite() && kappa > 0.0) {
        return Err(Error::Domain(format!("need τ ≥ 0 and κ > 0, got τ = {tau}, κ = {kappa}")));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    Ok(())
}

// Normal(t, s²) mass on [lo, hi] and on [0, ∞).
fn window_masses(t: f64, s: f64, lo: f64, hi: f64) -> (f64, f64) {
    let upper_tail = |x: f64| 0.5 * libm::erfc((x - t) / (s * SQRT_2));
    (upper_tail(lo) - upper_tail(hi), upper_tail(0.0))
}

/// Π*(x, t) = ∫ P(θ; t) Π(x, θ) dθ with P the Gaussian time density of mean
/// t and variance κtτ, restricted to θ ≥ 0 and to the averaging window and
/// renormalized there.
pub fn density_averaged(
    packet: &GaussianPacket,
    tau: f64,
    kappa: f64,
    t: f64,
    x: f64,
    units: &UnitSystem,
) -> Result<f64> {
    let window = averaging_window(tau, kappa, t)?;
    let s = (kappa * t * tau).sqrt();
    if s == 0.0 || window.hi - window.lo <= 1e-14 * t {
        return density_conventional(packet, x, t, units);
    }
    let (inside, _) = window_masses(t, s, window.lo, window.hi);
    let integral = integrate_adaptive(
        |theta| normal_density(theta, t, s * s) * normal_density(x, packet.x0, packet.variance(theta, units)),
        window.lo,
        window.hi,
        QUADRATURE_REL_TOL,
        0.0,
        8,
    );
    Ok(integral.value / inside)
}

/// 8m²δx³/(√π ħ² τ t).
///
/// Combining the two steps of the printed derivation leaves a factor 1/τ
/// that the final printed bound omits (without it the units are wrong); it
/// is restored here.
pub fn peak_bound(packet: &GaussianPacket, tau: f64, t: f64, units: &UnitSystem) -> Result<f64> {
    if !(tau > 0.0 && t > 0.0) {
        return Err(Error::Domain(format!("need τ > 0 and t > 0, got τ = {tau}, t = {t}")));
    }
    let hbar = units.hbar();
    Ok(8.0 * packet.m.powi(2) * packet.delta_x.powi(3) / (PI.sqrt() * hbar * hbar * tau * t))
}

/// The time 4m²l⁴/(τħ²) at which the bound is evaluated for a chosen
/// length scale l.
pub fn matched_time(packet: &GaussianPacket, tau: f64, l: f64, units: &UnitSystem) -> Result<f64> {
    if !(tau > 0.0 && l > 0.0) {
        return Err(Error::Domain(format!("need τ > 0 and l > 0, got τ = {tau}, l = {l}")));
    }
    let hbar = units.hbar();
    Ok(4.0 * packet.m.powi(2) * l.powi(4) / (tau * hbar * hbar))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadingReport {
    /// Π*(x0, t)/Π(x0, t).
    pub ratio: f64,
    /// mδx²/(ħ√(tτ)); the large-time regime needs this ≪ 1.
    pub large_time_parameter: f64,
    pub large_time_regime: bool,
}

/// Ratio of the averaged to the conventional peak height at time t. Both
/// densities are symmetric about x0, so the peaks sit at x0.
pub fn spreading_ratio(
    packet: &GaussianPacket,
    tau: f64,
    kappa: f64,
    t: f64,
    units: &UnitSystem,
) -> Result<SpreadingReport> {
    let averaged = density_averaged(packet, tau, kappa, t, packet.x0, units)?;
    let conventional = density_conventional(packet, packet.x0, t, units)?;
    let large_time_parameter = packet.m * packet.delta_x.powi(2) / (units.hbar() * (t * tau).sqrt());
    Ok(SpreadingReport {
        ratio: averaged / conventional,
        large_time_parameter,
        large_time_regime: large_time_parameter < LARGE_TIME_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_panels;

    fn unit_packet() -> GaussianPacket {
        GaussianPacket::new(1.0, 1.0, 0.0).unwrap()
    }

    const NAT: UnitSystem = UnitSystem::natural();

    #[test]
    fn conventional_density() {
        let p = unit_packet();
        let peak = density_conventional(&p, 0.0, 0.0, &NAT).unwrap();
        assert!((peak - (2.0 * PI).sqrt().recip()).abs() < 1e-15);
        let mass = integrate_panels(|x| density_conventional(&p, x, 3.0, &NAT).unwrap(), -40.0, 40.0, 80);
        assert!((mass - 1.0).abs() < 1e-12);
        // large θ: peak ≈ 2mδx/(ħθ)/√(2π)
        let theta = 1e6;
        let peak = density_conventional(&p, 0.0, theta, &NAT).unwrap();
        assert!((peak * theta * (2.0 * PI).sqrt() / 2.0 - 1.0).abs() < 1e-9);
        assert!(density_conventional(&p, 0.0, -1.0, &NAT).is_err());
    }

    #[test]
    fn averaged_density_limits() {
        let p = unit_packet();
        let a = density_averaged(&p, 1e-12, 2.0, 5.0, 0.7, &NAT).unwrap();
        let c = density_conventional(&p, 0.7, 5.0, &NAT).unwrap();
        assert!((a - c).abs() < 1e-6);
        assert!(density_averaged(&p, 0.01, 2.0, 5.0, 1e3, &NAT).unwrap() < 1e-100);
        assert_eq!(density_averaged(&p, 0.0, 2.0, 5.0, 0.7, &NAT).unwrap(), c);
    }

    #[test]
    fn averaging_preserves_normalization() {
        let p = GaussianPacket::new(1.0, 0.5, 2.0).unwrap();
        let (tau, t) = (0.5, 4.0);
        let mass = integrate_panels(|x| density_averaged(&p, tau, 2.0, t, x, &NAT).unwrap(), -60.0, 64.0, 60);
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }

    #[test]
    fn translation_covariance() {
        let a = GaussianPacket::new(2.0, 0.7, 0.0).unwrap();
        let b = GaussianPacket::new(2.0, 0.7, 3.5).unwrap();
        for x in [-1.0, 0.0, 0.4, 2.0] {
            let va = density_averaged(&a, 0.1, 2.0, 3.0, x, &NAT).unwrap();
            let vb = density_averaged(&b, 0.1, 2.0, 3.0, x + 3.5, &NAT).unwrap();
            assert!((va - vb).abs() <= 1e-12 * va);
        }
    }

    #[test]
    fn window_truncation_diagnostics() {
        let w = averaging_window(0.01, 2.0, 100.0).unwrap();
        assert!(w.excluded_mass < 1e-14);
        assert!(w.warning.is_none());
        assert!((w.hi - 100.0 - 8.0 * 2f64.sqrt()).abs() < 1e-12);
        // the window is cut at θ = 0 but the θ ≥ 0 density is renormalized
        let w = averaging_window(10.0, 2.0, 1.0).unwrap();
        assert_eq!(w.lo, 0.0);
        assert!(w.excluded_mass < 1e-14);
    }

    #[test]
    fn bound_scaling() {
        let p = unit_packet();
        let b1 = peak_bound(&p, 0.01, 100.0, &NAT).unwrap();
        assert!((b1 - 8.0 / (PI.sqrt() * 0.01 * 100.0)).abs() < 1e-12);
        assert!((peak_bound(&p, 0.01, 200.0, &NAT).unwrap() * 2.0 - b1).abs() < 1e-12);
        let wide = GaussianPacket::new(1.0, 2.0, 0.0).unwrap();
        assert!((peak_bound(&wide, 0.01, 100.0, &NAT).unwrap() / b1 - 8.0).abs() < 1e-12);
        let peak = density_averaged(&p, 0.01, 2.0, 100.0, 0.0, &NAT).unwrap();
        assert!(peak <= b1);
    }

    #[test]
    fn bound_dominates_at_matched_times() {
        let p = unit_packet();
        let tau = 0.01;
        for l in [0.03, 0.1, 0.3, 1.0, 3.0] {
            let t = matched_time(&p, tau, l, &NAT).unwrap();
            let peak = density_averaged(&p, tau, 2.0, t, 0.0, &NAT).unwrap();
            assert!(peak <= peak_bound(&p, tau, t, &NAT).unwrap(), "l = {l}");
        }
    }

    #[test]
    fn ratio_tends_to_one_as_tau_vanishes() {
        let p = unit_packet();
        let r = spreading_ratio(&p, 1e-10, 2.0, 10.0, &NAT).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-8);
        assert!(!r.large_time_regime);
    }

    // f(θ) = (δx² + cθ²)^{-1/2} is concave for cθ² < δx²/2 and convex beyond,
    // so by Jensen the averaged peak lies below the conventional one while the
    // whole window stays in the concave region and above it in the convex one.
    #[test]
    fn ratio_side_follows_curvature_of_peak_height() {
        let p = unit_packet();
        // c = 1/4; concave for θ < √2
        let concave = spreading_ratio(&p, 1e-4, 2.0, 0.5, &NAT).unwrap();
        assert!(concave.ratio <= 1.0 + 1e-9, "{}", concave.ratio);
        let convex = spreading_ratio(&p, 1e-2, 2.0, 50.0, &NAT).unwrap();
        assert!(convex.ratio >= 1.0, "{}", convex.ratio);
    }

    #[test]
    fn ratio_decreases_with_mass_at_large_time() {
        let (tau, t) = (0.5, 1e4);
        let ratios: Vec<f64> = [0.5, 1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&m| {
                let p = GaussianPacket::new(m, 1.0, 0.0).unwrap();
                spreading_ratio(&p, tau, 2.0, t, &NAT).unwrap().ratio
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    }
}
