//! Channel ↔ energy calibration and the energy-dependent pulse-width law.
//!
//! The detector divides its energy range into `M` uniform channels, so the
//! channel → energy map is affine:
//!
//! ```text
//! energy(c) = energy_min + c · (energy_max − energy_min) / M
//! ```
//!
//! Emission pulses are Gaussian with a full width at half maximum that grows
//! with energy:
//!
//! ```text
//! FWHM(E) = sqrt(fwhm_c² · E + fwhm_n²)
//! ```
//!
//! where `fwhm_c` captures the statistical uncertainty in charge-carrier
//! formation (units eV^(1/2)) and `fwhm_n` the electronic noise floor (eV).
//! The Gaussian standard deviation follows from the usual identity
//! `FWHM = 2·sqrt(2·ln 2)·σ`.
//!
//! ## Example
//!
//! ```
//! let cal = maxrf::EnergyCalibration::default();
//! assert_eq!(cal.channel_to_energy(2048.0).unwrap(), 20_000.0);
//! // Pulses widen with energy.
//! assert!(cal.fwhm_at_energy(10_000.0).unwrap() > cal.fwhm_at_energy(1_000.0).unwrap());
//! ```

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// `2·sqrt(2·ln 2)`, the FWHM ↔ σ conversion factor for a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;

/// Default charge-carrier coefficient, chosen so that the default
/// configuration yields FWHM = 145 eV at the 5899 eV reference energy with an
/// 80 eV electronic-noise floor: `fwhm_c = sqrt((145² − 80²) / 5899)`.
pub const DEFAULT_FWHM_C: f64 = 1.574_558_277_243_280_7;

/// Default electronic-noise floor in eV.
pub const DEFAULT_FWHM_N: f64 = 80.0;

/// Affine channel ↔ energy calibration plus the pulse-width law parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCalibration {
    /// Energy at channel 0 (eV).
    pub energy_min: f64,
    /// Energy at channel `channels` (eV).
    pub energy_max: f64,
    /// Number of energy channels `M`.
    pub channels: usize,
    /// Charge-carrier uncertainty coefficient (eV^(1/2)).
    pub fwhm_c: f64,
    /// Electronic noise floor (eV); FWHM at zero energy.
    pub fwhm_n: f64,
}

impl Default for EnergyCalibration {
    fn default() -> Self {
        Self {
            energy_min: 0.0,
            energy_max: 40_000.0,
            channels: 4096,
            fwhm_c: DEFAULT_FWHM_C,
            fwhm_n: DEFAULT_FWHM_N,
        }
    }
}

impl EnergyCalibration {
    /// Build a calibration, validating its invariants.
    pub fn new(
        energy_min: f64,
        energy_max: f64,
        channels: usize,
        fwhm_c: f64,
        fwhm_n: f64,
    ) -> Result<Self> {
        if !(energy_max > energy_min) {
            return Err(Error::Config(format!(
                "energy_max ({energy_max}) must exceed energy_min ({energy_min})"
            )));
        }
        if channels < 2 {
            return Err(Error::Config(format!(
                "need at least 2 channels, got {channels}"
            )));
        }
        if !(fwhm_c >= 0.0) {
            return Err(Error::Config(format!("fwhm_c must be ≥ 0, got {fwhm_c}")));
        }
        if !(fwhm_n > 0.0) {
            return Err(Error::Config(format!("fwhm_n must be > 0, got {fwhm_n}")));
        }
        Ok(Self {
            energy_min,
            energy_max,
            channels,
            fwhm_c,
            fwhm_n,
        })
    }

    /// Default pulse-width parameters with custom range and channel count.
    pub fn with_range(energy_min: f64, energy_max: f64, channels: usize) -> Result<Self> {
        Self::new(energy_min, energy_max, channels, DEFAULT_FWHM_C, DEFAULT_FWHM_N)
    }

    /// Width of one channel in eV.
    pub fn slope(&self) -> f64 {
        (self.energy_max - self.energy_min) / self.channels as f64
    }

    /// Energy (eV) at a real-valued channel index in `[0, M]`.
    pub fn channel_to_energy(&self, channel: f64) -> Result<f64> {
        if !(0.0..=self.channels as f64).contains(&channel) {
            return Err(Error::Range(format!(
                "channel {channel} outside [0, {}]",
                self.channels
            )));
        }
        Ok(self.energy_min + channel * self.slope())
    }

    /// Channel index (real-valued) of an energy in `[energy_min, energy_max]`.
    pub fn energy_to_channel(&self, energy: f64) -> Result<f64> {
        if !(self.energy_min..=self.energy_max).contains(&energy) {
            return Err(Error::Range(format!(
                "energy {energy} outside [{}, {}]",
                self.energy_min, self.energy_max
            )));
        }
        Ok((energy - self.energy_min) / self.slope())
    }

    /// Pulse FWHM in eV at energy `E`: `sqrt(fwhm_c²·E + fwhm_n²)`.
    pub fn fwhm_at_energy(&self, energy: f64) -> Result<f64> {
        if !(energy >= 0.0) {
            return Err(Error::Domain(format!("energy must be ≥ 0, got {energy}")));
        }
        Ok((self.fwhm_c * self.fwhm_c * energy + self.fwhm_n * self.fwhm_n).sqrt())
    }

    /// Gaussian σ in eV at energy `E`.
    pub fn sigma_ev_at_energy(&self, energy: f64) -> Result<f64> {
        Ok(self.fwhm_at_energy(energy)? / FWHM_PER_SIGMA)
    }

    /// Gaussian σ in channel units for a pulse centred at channel `t`.
    pub fn sigma_at_channel(&self, t: f64) -> Result<f64> {
        let energy = self.channel_to_energy(t)?;
        Ok(self.sigma_ev_at_energy(energy)? / self.slope())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn channel_to_energy_endpoints_and_midpoint() {
        let cal = EnergyCalibration::default();
        assert_eq!(cal.channel_to_energy(0.0).unwrap(), 0.0);
        assert_eq!(cal.channel_to_energy(4096.0).unwrap(), 40_000.0);
        assert_eq!(cal.channel_to_energy(2048.0).unwrap(), 20_000.0);
    }

    #[test]
    fn channel_out_of_range_is_an_error() {
        let cal = EnergyCalibration::default();
        assert!(cal.channel_to_energy(-1.0).is_err());
        assert!(cal.channel_to_energy(4097.0).is_err());
        assert!(cal.energy_to_channel(40_001.0).is_err());
    }

    #[test]
    fn energy_channel_round_trip() {
        let cal = EnergyCalibration::default();
        for c in [0.0, 1.0, 17.25, 1000.5, 4095.0, 4096.0] {
            let e = cal.channel_to_energy(c).unwrap();
            let back = cal.energy_to_channel(e).unwrap();
            assert_relative_eq!(back, c, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn fwhm_collapses_to_noise_floor_without_charge_term() {
        let cal = EnergyCalibration::new(0.0, 40_000.0, 4096, 0.0, 80.0).unwrap();
        assert_eq!(cal.fwhm_at_energy(0.0).unwrap(), 80.0);
        assert_eq!(cal.fwhm_at_energy(12_345.0).unwrap(), 80.0);
    }

    #[test]
    fn fwhm_is_monotone_in_energy() {
        let cal = EnergyCalibration::default();
        let mut prev = cal.fwhm_at_energy(0.0).unwrap();
        assert_relative_eq!(prev, 80.0);
        for e in (1..=40).map(|k| k as f64 * 1000.0) {
            let f = cal.fwhm_at_energy(e).unwrap();
            assert!(f >= prev, "FWHM must not decrease: {f} < {prev} at {e} eV");
            prev = f;
        }
    }

    #[test]
    fn default_fwhm_matches_reference_point() {
        // The defaults are constructed so FWHM(5899 eV) = 145 eV exactly.
        let cal = EnergyCalibration::default();
        assert_relative_eq!(cal.fwhm_at_energy(5899.0).unwrap(), 145.0, max_relative = 1e-12);
    }

    #[test]
    fn negative_energy_is_a_domain_error() {
        let cal = EnergyCalibration::default();
        assert!(cal.fwhm_at_energy(-1.0).is_err());
    }

    #[test]
    fn sigma_definitional_identity() {
        // With slope exactly 1 eV/channel and FWHM = 2·sqrt(2 ln 2)·s eV, the
        // channel-space σ equals s.
        let s = 3.0;
        let fwhm = FWHM_PER_SIGMA * s;
        let cal = EnergyCalibration::new(0.0, 1024.0, 1024, 0.0, fwhm).unwrap();
        assert_relative_eq!(cal.sigma_at_channel(100.0).unwrap(), s, max_relative = 1e-12);
    }

    #[test]
    fn doubling_slope_halves_sigma_in_channels() {
        // Same energy range, half the channels → double the slope. Evaluated
        // at the same physical energy, σ in channel units halves.
        let fine = EnergyCalibration::with_range(0.0, 40_000.0, 4096).unwrap();
        let coarse = EnergyCalibration::with_range(0.0, 40_000.0, 2048).unwrap();
        let s_fine = fine.sigma_at_channel(1000.0).unwrap();
        let s_coarse = coarse.sigma_at_channel(500.0).unwrap();
        assert_relative_eq!(s_coarse, s_fine / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn sigma_at_channel_1000_frozen_value() {
        // Independent high-precision evaluation of the closed form at the
        // default calibration: E = 9765.625 eV, FWHM = sqrt(fwhm_c²·E + 80²),
        // σ = FWHM / (2·sqrt(2 ln 2)) / slope.
        let cal = EnergyCalibration::default();
        assert_relative_eq!(
            cal.sigma_at_channel(1000.0).unwrap(),
            7.608_216_934_802_505,
            max_relative = 1e-12
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(EnergyCalibration::new(0.0, 0.0, 4096, 1.0, 80.0).is_err());
        assert!(EnergyCalibration::new(0.0, 40_000.0, 1, 1.0, 80.0).is_err());
        assert!(EnergyCalibration::new(0.0, 40_000.0, 4096, -1.0, 80.0).is_err());
        assert!(EnergyCalibration::new(0.0, 40_000.0, 4096, 1.0, 0.0).is_err());
    }
}
