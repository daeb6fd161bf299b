//! Piecewise-smooth synthetic terrain.

use serde::{Deserialize, Serialize};

/// Terrain elevation model: a base plane plus a smooth low-frequency
/// undulation. Wavelengths are kept ≥ 5 m so ray marching at sub-meter
/// steps cannot step over a bump.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Terrain {
    pub slope_x: f64,
    pub slope_y: f64,
    /// Peak undulation amplitude, meters.
    pub amplitude: f64,
    /// Undulation wavelength, meters (≥ 5).
    pub wavelength: f64,
    pub phase_x: f64,
    pub phase_y: f64,
}

impl Default for Terrain {
    fn default() -> Self {
        Self {
            slope_x: 0.0,
            slope_y: 0.0,
            amplitude: 0.0,
            wavelength: 12.0,
            phase_x: 0.0,
            phase_y: 0.0,
        }
    }
}

impl Terrain {
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn ramp(slope_x: f64, slope_y: f64) -> Self {
        Self {
            slope_x,
            slope_y,
            ..Self::default()
        }
    }

    pub fn elevation(&self, x: f64, y: f64) -> f64 {
        let base = self.slope_x * x + self.slope_y * y;
        if self.amplitude == 0.0 {
            return base;
        }
        let k = std::f64::consts::TAU / self.wavelength;
        base + self.amplitude * (k * x + self.phase_x).sin() * (k * y + self.phase_y).sin()
    }

    /// Bound on |z - plane| over the whole domain.
    pub fn undulation_bound(&self) -> f64 {
        self.amplitude.abs()
    }
}
