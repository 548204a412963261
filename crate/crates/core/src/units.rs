//! Physical constants used by the engines.
//!
//! The reduced Planck constant is the only quantum constant that enters the
//! dynamics; `c` is needed by the relativistic estimators.

use crate::error::{Error, Result};

/// Reduced Planck constant in erg·s.
pub const HBAR_CGS: f64 = 1.054_571_817e-27;
/// Speed of light in cm/s.
pub const C_CGS: f64 = 2.997_924_58e10;
/// One electron-volt in erg.
pub const EV_IN_ERG: f64 = 1.602_176_634e-12;
/// One Julian year in seconds.
pub const YEAR_IN_S: f64 = 3.155_76e7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitSystem {
    hbar: f64,
    c: f64,
}

impl UnitSystem {
    pub fn new(hbar: f64, c: f64) -> Result<Self> {
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(Error::Domain(format!("hbar must be positive, got {hbar}")));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Domain(format!("c must be positive, got {c}")));
        }
        Ok(Self { hbar, c })
    }

    /// ħ = c = 1.
    pub const fn natural() -> Self {
        Self { hbar: 1.0, c: 1.0 }
    }

    /// Gaussian units: energies in erg, times in seconds, lengths in cm.
    pub const fn cgs() -> Self {
        Self {
            hbar: HBAR_CGS,
            c: C_CGS,
        }
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::natural()
    }
}
