//! Decay of unstable states and of coherences under random time.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::time_model::{TimeFamily, TimeModel};

/// E[e^{−θ/T}]: the probability that a state with lifetime T in microscopic
/// time survives to macroscopic time `t`.
///
/// Poisson time gives exp[−t/(T+τ)]; Gaussian time gives
/// exp[−t/T + κτt/(2T²)]. Every other family goes through the characteristic
/// function continued to λ = i/T.
pub fn survival_probability(lifetime: f64, model: &TimeModel, t: f64) -> Result<f64> {
    if !(lifetime > 0.0) {
        return Err(Error::Domain(format!("lifetime must be positive, got {lifetime}")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!("t must be ≥ 0, got {t}")));
    }
    if lifetime.is_infinite() {
        return Ok(1.0);
    }
    let value = model.char_fn_complex(Complex64::new(0.0, 1.0 / lifetime), t);
    if !(value.re.is_finite() && value.re >= 0.0) || value.im.abs() > 1e-9 * value.re.abs().max(1e-300) {
        return Err(Error::Domain(format!(
            "Laplace transform of the increments diverges at 1/T = {}",
            1.0 / lifetime
        )));
    }
    Ok(value.re)
}

/// Decay rate of |R_kl| for a level spacing ω = (E_k − E_l)/ħ: −Re g(ω),
/// where g is the model's generator.
///
/// For Poisson time this is ω²τ/(1 + ω²τ²); for Gaussian time κω²τ/2.
pub fn effective_decay_rate(model: &TimeModel, omega: f64) -> Result<f64> {
    Ok(-model.generator(omega)?.re)
}

/// Dimensionless factor a in rate = a·ω²τ: 1 for Gaussian time with κ = 2,
/// 1/(1 + ω²τ²) for Poisson time.
pub fn decay_factor(model: &TimeModel, omega: f64) -> Result<f64> {
    if omega == 0.0 {
        return Err(Error::Domain("decay factor undefined for ω = 0".into()));
    }
    Ok(effective_decay_rate(model, omega)? / (omega * omega * model.tau()))
}

/// Macroscopic time at which |R_kl(t)| = |R_kl(0)|·e^{−π²} for level spacing
/// ω, the point where the superposition is effectively a mixture.
pub fn decoherence_crossing_time(model: &TimeModel, omega: f64) -> Result<f64> {
    let target = -std::f64::consts::PI.powi(2);
    if !matches!(model.family(), TimeFamily::ModifiedPoisson { .. }) {
        let rate = effective_decay_rate(model, omega)?;
        if !(rate > 0.0) {
            return Err(Error::Domain(format!("coherence at ω = {omega} does not decay")));
        }
        return Ok(-target / rate);
    }
    // ln|φ| is not linear in t here; bracket and bisect
    let log_abs = |t: f64| model.char_fn(-omega, t).norm().ln();
    let mut hi = model.tau();
    let mut iterations = 0;
    while log_abs(hi) > target {
        hi *= 2.0;
        iterations += 1;
        if iterations > 200 || !hi.is_finite() {
            return Err(Error::Domain(format!("coherence at ω = {omega} does not decay")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if log_abs(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
