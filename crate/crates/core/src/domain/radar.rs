use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// FMCW radar configuration.
///
/// Defaults model a 77 GHz device with a 4 GHz sweep over 40 µs and
/// half-wavelength virtual array spacing in both planes. None of these values
/// describe a specific sensor; treat them as configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarParams {
    pub wavelength_m: f64,
    pub bandwidth_hz: f64,
    pub chirp_duration_s: f64,
    pub antenna_spacing_az_m: f64,
    pub antenna_spacing_el_m: f64,
    pub carrier_freq_hz: f64,
}

impl Default for RadarParams {
    fn default() -> Self {
        let carrier = 77.0e9;
        let wavelength = SPEED_OF_LIGHT / carrier;
        RadarParams {
            wavelength_m: wavelength,
            bandwidth_hz: 4.0e9,
            chirp_duration_s: 40.0e-6,
            antenna_spacing_az_m: 0.5 * wavelength,
            antenna_spacing_el_m: 0.5 * wavelength,
            carrier_freq_hz: carrier,
        }
    }
}

impl RadarParams {
    /// Builds a configuration whose wavelength is derived from the carrier.
    pub fn from_carrier(
        carrier_freq_hz: f64,
        bandwidth_hz: f64,
        chirp_duration_s: f64,
        antenna_spacing_az_m: f64,
        antenna_spacing_el_m: f64,
    ) -> Result<Self> {
        let rp = RadarParams {
            wavelength_m: SPEED_OF_LIGHT / carrier_freq_hz,
            bandwidth_hz,
            chirp_duration_s,
            antenna_spacing_az_m,
            antenna_spacing_el_m,
            carrier_freq_hz,
        };
        rp.validate()?;
        Ok(rp)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("wavelength_m", self.wavelength_m),
            ("bandwidth_hz", self.bandwidth_hz),
            ("chirp_duration_s", self.chirp_duration_s),
            ("antenna_spacing_az_m", self.antenna_spacing_az_m),
            ("antenna_spacing_el_m", self.antenna_spacing_el_m),
            ("carrier_freq_hz", self.carrier_freq_hz),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "radar.{name} must be finite and > 0, got {value}"
                )));
            }
        }
        let expected = SPEED_OF_LIGHT / self.carrier_freq_hz;
        if ((self.wavelength_m - expected) / expected).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "radar.wavelength_m = {} disagrees with c / carrier_freq_hz = {expected}",
                self.wavelength_m
            )));
        }
        Ok(())
    }

    /// Chirp slope S = B / T_c in Hz/s.
    pub fn chirp_slope(&self) -> f64 {
        self.bandwidth_hz / self.chirp_duration_s
    }

    /// Native range resolution c / 2B.
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)
    }
}
