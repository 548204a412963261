//! Order-of-magnitude calculators: decoherence times, beam thresholds and
//! experimental bounds on τ.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::units::{UnitSystem, EV_IN_ERG};

fn positive(name: &str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Domain(format!("{name} must be positive, got {value}")));
    }
    Ok(())
}

/// t̂ = π²ħ²/(τΔE²): the time for a superposition with energy gap ΔE to
/// become a mixture.
pub fn decoherence_time(tau: f64, delta_e: f64, units: &UnitSystem) -> Result<f64> {
    positive("tau", tau)?;
    positive("delta_E", delta_e)?;
    let hbar = units.hbar();
    Ok(PI * PI * hbar * hbar / (tau * delta_e * delta_e))
}

/// √(tτ): the spread of the microscopic clock after macroscopic time t.
pub fn flow_stddev(t: f64, tau: f64) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0 && tau.is_finite() && tau >= 0.0) {
        return Err(Error::Domain(format!("t and tau must be ≥ 0, got {t}, {tau}")));
    }
    Ok((t * tau).sqrt())
}

/// Energy split above which a beam of particles with γ = mc²/E decoheres
/// over a flight length l: (π/2)·ħ·√(c/(lτ₀))·√(1 − γ²)·γ.
pub fn beam_threshold(l: f64, tau0: f64, gamma: f64, units: &UnitSystem) -> Result<f64> {
    positive("l", l)?;
    positive("tau0", tau0)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    Ok(0.5 * PI * units.hbar() * (units.c() / (l * tau0)).sqrt() * (1.0 - gamma * gamma).sqrt() * gamma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationBounds {
    /// τ < t_os: oscillations are seen at all.
    pub tau_weak: f64,
    /// τ < t_os²/t_f: oscillations survive the whole flight time t_f.
    pub tau_strong: f64,
}

pub fn oscillation_bounds(t_os: f64, t_f: f64) -> Result<OscillationBounds> {
    positive("t_os", t_os)?;
    positive("t_f", t_f)?;
    if t_os > t_f {
        return Err(Error::Domain(format!("t_os = {t_os} exceeds t_f = {t_f}")));
    }
    Ok(OscillationBounds {
        tau_weak: t_os,
        tau_strong: t_os * t_os / t_f,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    NonRelativistic,
    UltraRelativistic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySplit {
    pub delta_e: f64,
    /// Half-period πħ/ΔE; infinite when ΔE = 0.
    pub t_os: f64,
    pub warning: Option<&'static str>,
}

/// ΔE = Δm·c² (non-relativistic) or (Δm)²c⁴/E (ultra-relativistic), with
/// the oscillation half-period t_os = πħ/ΔE.
pub fn oscillation_energy_split(delta_m: f64, energy: f64, regime: Regime, units: &UnitSystem) -> Result<EnergySplit> {
    if !(delta_m.is_finite() && delta_m >= 0.0) {
        return Err(Error::Domain(format!("delta_m must be ≥ 0, got {delta_m}")));
    }
    let c2 = units.c() * units.c();
    let rest = delta_m * c2;
    let (delta_e, mut warning) = match regime {
        Regime::NonRelativistic => (rest, None),
        Regime::UltraRelativistic => {
            positive("E", energy)?;
            let w = (energy < 10.0 * rest).then_some("ultra-relativistic regime needs E ≫ Δm·c²");
            (rest * rest / energy, w)
        }
    };
    let t_os = if delta_e > 0.0 {
        PI * units.hbar() / delta_e
    } else {
        warning = Some("ΔE = 0: no oscillation, t_os is infinite");
        f64::INFINITY
    };
    Ok(EnergySplit { delta_e, t_os, warning })
}

/// τ < T_observed: an observed lifetime bounds the clock granularity from
/// above, since the averaged lifetime is T + τ.
pub fn lifetime_tau_bound(t_observed: f64) -> Result<f64> {
    positive("T_observed", t_observed)?;
    Ok(t_observed)
}

/// Shortest lifetimes measured for resonances, in seconds.
pub const MINIMAL_OBSERVED_LIFETIME_S: f64 = 1e-23;

/// Inputs for an oscillation-based bound, with where they come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationPreset {
    pub name: &'static str,
    /// ΔE in erg.
    pub delta_e: f64,
    /// Flight or observation time in seconds.
    pub t_f: f64,
    pub source: &'static str,
}

/// Neutral kaons: Δm_K c² = 3.484e-6 eV, observed over the K_L lifetime
/// 5.116e-8 s.
pub fn kaon_preset() -> OscillationPreset {
    OscillationPreset {
        name: "kaon",
        delta_e: 3.484e-6 * EV_IN_ERG,
        t_f: 5.116e-8,
        source: "assumption: K_L-K_S mass difference and K_L lifetime (PDG values)",
    }
}

/// Reactor antineutrinos: Δm² = 7.5e-5 eV², E = 4 MeV, baseline 180 km.
pub fn neutrino_preset() -> OscillationPreset {
    let dm2_ev2 = 7.5e-5;
    let energy_ev = 4.0e6;
    let baseline_cm = 1.8e7;
    OscillationPreset {
        name: "neutrino",
        delta_e: dm2_ev2 / energy_ev * EV_IN_ERG,
        t_f: baseline_cm / crate::units::C_CGS,
        source: "assumption: solar Δm², 4 MeV reactor antineutrinos, 180 km baseline",
    }
}

impl OscillationPreset {
    pub fn t_os(&self) -> f64 {
        PI * crate::units::HBAR_CGS / self.delta_e
    }

    pub fn bounds(&self) -> Result<OscillationBounds> {
        oscillation_bounds(self.t_os(), self.t_f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::decoherence_crossing_time;
    use crate::time_model::TimeModel;
    use crate::units::YEAR_IN_S;

    const CGS: UnitSystem = UnitSystem::cgs();
    const NAT: UnitSystem = UnitSystem::natural();

    #[test]
    fn decoherence_time_examples() {
        let t = decoherence_time(1e-30, 1e-6, &CGS).unwrap();
        assert!(t > 1e-12 / 100.0 && t < 1e-12 * 100.0, "{t}");
        assert!((t / 1.0976e-11 - 1.0).abs() < 1e-3);
        let nat = decoherence_time(0.1, 1.0, &NAT).unwrap();
        assert!((nat - 98.696_044_010_893_59).abs() < 1e-10);
        assert!((decoherence_time(0.1, 2.0, &NAT).unwrap() * 4.0 - nat).abs() < 1e-12);
        for (tau, de) in [(0.3, 1.7), (1e-30, 1e-6), (2.0, 1e-3)] {
            let units = if tau < 1e-20 { CGS } else { NAT };
            let t = decoherence_time(tau, de, &units).unwrap();
            let identity = t * tau * de * de / (units.hbar() * units.hbar());
            assert!((identity / (PI * PI) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn decoherence_time_matches_simulated_crossing() {
        for de_tau in [1e-3, 1e-2, 0.1] {
            let tau = 1.0;
            let de = de_tau / tau;
            let estimate = decoherence_time(tau, de, &NAT).unwrap();
            for model in [TimeModel::poisson(tau).unwrap(), TimeModel::gaussian(tau, 2.0).unwrap()] {
                let crossing = decoherence_crossing_time(&model, de).unwrap();
                let ratio = crossing / estimate;
                assert!((0.5..=2.0).contains(&ratio), "{ratio}");
            }
        }
    }

    #[test]
    fn flow_stddev_examples() {
        assert_eq!(flow_stddev(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(flow_stddev(2.5, 2.5).unwrap(), 2.5);
        let s = flow_stddev(1e10 * YEAR_IN_S, 1e-30).unwrap();
        assert!((s / 5.6e-7 - 1.0).abs() < 0.01 && s <= 1e-5, "{s}");
    }

    #[test]
    fn beam_threshold_peaks_at_inverse_root_two() {
        let (l, tau0) = (100.0, 1e-30);
        assert_eq!(beam_threshold(l, tau0, 1.0, &CGS).unwrap(), 0.0);
        let peak = beam_threshold(l, tau0, std::f64::consts::FRAC_1_SQRT_2, &CGS).unwrap();
        let want = 0.25 * PI * CGS.hbar() * (CGS.c() / (l * tau0)).sqrt();
        assert!((peak / want - 1.0).abs() < 1e-14);
        let best = (1..10_000)
            .map(|i| i as f64 / 10_000.0)
            .max_by(|a, b| {
                beam_threshold(l, tau0, *a, &CGS)
                    .unwrap()
                    .total_cmp(&beam_threshold(l, tau0, *b, &CGS).unwrap())
            })
            .unwrap();
        assert!((best - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        assert!(beam_threshold(l, tau0, 1e-12, &CGS).unwrap() < peak * 1e-11);
        assert!(beam_threshold(l, tau0, 0.0, &CGS).is_err());
        assert!(beam_threshold(l, tau0, 1.5, &CGS).is_err());
    }

    #[test]
    fn oscillation_bound_examples() {
        let b = oscillation_bounds(2.0, 2.0).unwrap();
        assert_eq!((b.tau_weak, b.tau_strong), (2.0, 2.0));
        let b = oscillation_bounds(1e-10, 1e-9).unwrap();
        assert!((b.tau_strong - 1e-11).abs() < 1e-25);
        assert!(b.tau_strong <= b.tau_weak);
        assert!(oscillation_bounds(2.0, 1.0).is_err());
    }

    #[test]
    fn energy_split_examples() {
        let zero = oscillation_energy_split(0.0, 1.0, Regime::NonRelativistic, &NAT).unwrap();
        assert_eq!(zero.delta_e, 0.0);
        assert!(zero.t_os.is_infinite() && zero.warning.is_some());
        let pi = oscillation_energy_split(PI, 0.0, Regime::NonRelativistic, &NAT).unwrap();
        assert!((pi.t_os - 1.0).abs() < 1e-15);
        let a = oscillation_energy_split(1e-3, 10.0, Regime::UltraRelativistic, &NAT).unwrap();
        let b = oscillation_energy_split(1e-3, 20.0, Regime::UltraRelativistic, &NAT).unwrap();
        assert!((a.delta_e / b.delta_e - 2.0).abs() < 1e-14);
        assert!(a.warning.is_none());
        let bad = oscillation_energy_split(1.0, 2.0, Regime::UltraRelativistic, &NAT).unwrap();
        assert!(bad.warning.is_some());
    }

    #[test]
    fn lifetime_bounds() {
        assert_eq!(lifetime_tau_bound(MINIMAL_OBSERVED_LIFETIME_S).unwrap(), 1e-23);
        assert_eq!(lifetime_tau_bound(1.0).unwrap(), 1.0);
        assert!(lifetime_tau_bound(1e-25).unwrap() < lifetime_tau_bound(1e-24).unwrap());
        assert!(lifetime_tau_bound(0.0).is_err());
    }

    #[test]
    fn presets() {
        let kaon = kaon_preset().bounds().unwrap();
        assert!(kaon.tau_strong < 1e-11, "{}", kaon.tau_strong);
        assert!((kaon_preset().t_os() / 5.935e-10 - 1.0).abs() < 1e-3);
        let nu = neutrino_preset().bounds().unwrap();
        assert!(nu.tau_strong > 1e-6 && nu.tau_strong < 1e-4, "{}", nu.tau_strong);
    }
}
