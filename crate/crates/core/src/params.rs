use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acquisition and optics constants shared by every stage.
///
/// Defaults describe an 852 nm near-infrared source recorded at 33 kHz with a
/// 20 µm pixel pitch and an ocular numerical aperture of 0.124.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticalParams {
    pub wavelength_m: f64,
    pub numerical_aperture: f64,
    pub frame_rate_hz: f64,
    pub pixel_pitch_m: f64,
    /// Signed reconstruction distance. Zero renders the recorded plane.
    pub propagation_distance_m: f64,
    pub papilla_diameter_m: f64,
}

impl Default for OpticalParams {
    fn default() -> Self {
        Self {
            wavelength_m: 852e-9,
            numerical_aperture: 0.124,
            frame_rate_hz: 33_000.0,
            pixel_pitch_m: 20e-6,
            propagation_distance_m: 0.0,
            papilla_diameter_m: 1.8e-3,
        }
    }
}

impl OpticalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("wavelength_m", self.wavelength_m)?;
        positive("frame_rate_hz", self.frame_rate_hz)?;
        positive("pixel_pitch_m", self.pixel_pitch_m)?;
        positive("papilla_diameter_m", self.papilla_diameter_m)?;
        if !(self.numerical_aperture > 0.0 && self.numerical_aperture < 1.0) {
            return Err(Error::config(format!(
                "numerical_aperture must lie in (0, 1), got {}",
                self.numerical_aperture
            )));
        }
        if !self.propagation_distance_m.is_finite() {
            return Err(Error::config("propagation_distance_m must be finite"));
        }
        Ok(())
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.frame_rate_hz / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = OpticalParams::default();
        p.validate().unwrap();
        assert_eq!(p.wavelength_m, 852e-9);
        assert_eq!(p.numerical_aperture, 0.124);
        assert_eq!(p.frame_rate_hz, 33_000.0);
        assert_eq!(p.pixel_pitch_m, 20e-6);
    }

    #[test]
    fn rejects_out_of_range_aperture() {
        let p = OpticalParams {
            numerical_aperture: 1.2,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }
}
