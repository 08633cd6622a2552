//! Datacube container and its two summary spectra.
//!
//! A datacube holds `M` photon counts per pixel over an `H×W` raster. Counts
//! are stored pixel-major: the value for channel `n` at pixel `(h, w)` lives
//! at index `((h·W) + w)·M + n`, so each pixel's spectrum is contiguous.
//!
//! Element detection runs on two summary spectra rather than on individual
//! pixels:
//!
//! ```text
//! average:  ȳ[n] = (1 / (W·H)) · Σ_{h,w} y_{h,w}[n]
//! maximum:  ŷ[n] = max_{h,w} y_{h,w}[n]
//! ```
//!
//! The average spectrum has the better signal-to-noise ratio; the maximum
//! spectrum preserves elements confined to small regions, whose lines the
//! averaging would wash out.

use crate::calibration::EnergyCalibration;
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Number of pixels per parallel reduction chunk. Fixed so that summary
/// statistics are combined in the same order regardless of thread count.
pub(crate) const PIXEL_CHUNK: usize = 256;

/// An `M×H×W` stack of non-negative photon counts plus its calibration.
#[derive(Debug, Clone)]
pub struct Datacube {
    counts: Vec<f32>,
    height: usize,
    width: usize,
    calibration: EnergyCalibration,
}

impl Datacube {
    /// Wrap raw pixel-major counts. `counts.len()` must equal `H·W·M` and all
    /// values must be finite and non-negative.
    pub fn new(
        counts: Vec<f32>,
        height: usize,
        width: usize,
        calibration: EnergyCalibration,
    ) -> Result<Self> {
        let m = calibration.channels;
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "cube must have at least one pixel, got {height}×{width}"
            )));
        }
        let expect = height * width * m;
        if counts.len() != expect {
            return Err(Error::Dimension(format!(
                "counts length {} does not match H·W·M = {height}·{width}·{m} = {expect}",
                counts.len()
            )));
        }
        if let Some(bad) = counts.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Dimension(format!(
                "counts must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self {
            counts,
            height,
            width,
            calibration,
        })
    }

    /// Number of rows `H`.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of columns `W`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of energy channels `M`.
    pub fn channels(&self) -> usize {
        self.calibration.channels
    }

    /// Number of pixels `I = H·W`.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// The calibration this cube was acquired with.
    pub fn calibration(&self) -> &EnergyCalibration {
        &self.calibration
    }

    /// Raw pixel-major counts.
    pub fn counts(&self) -> &[f32] {
        &self.counts
    }

    /// The contiguous spectrum of pixel `i = h·W + w`.
    pub fn pixel_spectrum(&self, i: usize) -> &[f32] {
        let m = self.channels();
        &self.counts[i * m..(i + 1) * m]
    }

    /// Per-channel mean over all pixels.
    pub fn average_spectrum(&self) -> Spectrum {
        let m = self.channels();
        let npix = self.pixels();
        let chunks: Vec<Vec<f64>> = (0..npix.div_ceil(PIXEL_CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * PIXEL_CHUNK;
                let hi = (lo + PIXEL_CHUNK).min(npix);
                let mut acc = vec![0.0f64; m];
                for i in lo..hi {
                    for (a, v) in acc.iter_mut().zip(self.pixel_spectrum(i)) {
                        *a += *v as f64;
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0f64; m];
        for chunk in chunks {
            for (t, v) in total.iter_mut().zip(chunk) {
                *t += v;
            }
        }
        let scale = 1.0 / npix as f64;
        Spectrum {
            values: total.into_iter().map(|v| v * scale).collect(),
            calibration: self.calibration,
        }
    }

    /// Per-channel maximum over all pixels.
    pub fn max_spectrum(&self) -> Spectrum {
        let m = self.channels();
        let npix = self.pixels();
        let chunks: Vec<Vec<f64>> = (0..npix.div_ceil(PIXEL_CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * PIXEL_CHUNK;
                let hi = (lo + PIXEL_CHUNK).min(npix);
                let mut acc = vec![0.0f64; m];
                for i in lo..hi {
                    for (a, v) in acc.iter_mut().zip(self.pixel_spectrum(i)) {
                        *a = a.max(*v as f64);
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0f64; m];
        for chunk in chunks {
            for (t, v) in total.iter_mut().zip(chunk) {
                *t = t.max(v);
            }
        }
        Spectrum {
            values: total,
            calibration: self.calibration,
        }
    }
}

/// A length-`M` non-negative spectrum tied to its calibration.
#[derive(Debug, Clone)]
pub struct Spectrum {
    values: Vec<f64>,
    calibration: EnergyCalibration,
}

impl Spectrum {
    /// Wrap raw per-channel values; length must match the calibration.
    pub fn new(values: Vec<f64>, calibration: EnergyCalibration) -> Result<Self> {
        if values.len() != calibration.channels {
            return Err(Error::Dimension(format!(
                "spectrum length {} does not match channel count {}",
                values.len(),
                calibration.channels
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Dimension(format!(
                "spectrum values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self {
            values,
            calibration,
        })
    }

    /// Per-channel values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of channels.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when the spectrum has no channels (never for a valid calibration).
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The calibration this spectrum was measured under.
    pub fn calibration(&self) -> &EnergyCalibration {
        &self.calibration
    }
}
