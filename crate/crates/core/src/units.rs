//! Energy unit conversions between kelvin and wavenumbers.

use serde::{Deserialize, Serialize};

/// Second radiation constant hc/k_B in K·cm (CODATA 2018).
pub const KELVIN_PER_WAVENUMBER: f64 = 1.438_776_877;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitConstants {
    kelvin_per_wavenumber: f64,
}

impl Default for UnitConstants {
    fn default() -> Self {
        UnitConstants {
            kelvin_per_wavenumber: KELVIN_PER_WAVENUMBER,
        }
    }
}

impl UnitConstants {
    pub fn kelvin_per_wavenumber(&self) -> f64 {
        self.kelvin_per_wavenumber
    }

    pub fn kelvin_to_wavenumber(&self, kelvin: f64) -> f64 {
        kelvin / self.kelvin_per_wavenumber
    }

    pub fn wavenumber_to_kelvin(&self, wavenumber: f64) -> f64 {
        wavenumber * self.kelvin_per_wavenumber
    }
}

pub fn kelvin_to_wavenumber(kelvin: f64) -> f64 {
    UnitConstants::default().kelvin_to_wavenumber(kelvin)
}

pub fn wavenumber_to_kelvin(wavenumber: f64) -> f64 {
    UnitConstants::default().wavenumber_to_kelvin(wavenumber)
}

/// k_B·T expressed in cm⁻¹.
pub fn thermal_energy(temperature_k: f64) -> f64 {
    kelvin_to_wavenumber(temperature_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_zero() {
        assert_eq!(kelvin_to_wavenumber(0.0), 0.0);
    }

    #[test]
    fn j1_level_in_wavenumbers() {
        assert!((kelvin_to_wavenumber(170.0) - 118.2).abs() < 0.5);
    }

    #[test]
    fn roundtrip() {
        for x in [1.0, 100.0, 1000.0] {
            let back = wavenumber_to_kelvin(kelvin_to_wavenumber(x));
            assert!((back - x).abs() <= 4.0 * f64::EPSILON * x);
        }
    }
}
