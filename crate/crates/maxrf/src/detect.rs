//! Pulse detection in summary spectra.
//!
//! A summary spectrum is modeled per window as a sum of Gaussian pulses plus
//! noise,
//!
//! ```text
//! y[n] = Σ_k a_k · φ[n − t_k] + ε[n] ,   φ[m] = exp(−m²/(2σ²))
//! ```
//!
//! with σ treated as constant across the window (it varies slowly with
//! energy). The spectrum is split into overlapping windows; in each window
//! the discrete Fourier coefficients are divided by the transform of the
//! Gaussian, which turns the model into a sum of cisoids
//!
//! ```text
//! Y[f] / Φ[f] = Σ_k a_k · e^{−i2π t_k f / L}
//! ```
//!
//! whose locations follow from the matrix-pencil method and whose
//! amplitudes from a least-squares fit against Gaussian atoms. The division
//! is regularized by truncating to the low-frequency band where `Φ` exceeds
//! 1e−3 of its peak, further shortened adaptively where the coefficients
//! sink into the out-of-band noise level. Each window only reports pulses
//! inside its non-overlapping core, and estimates from neighboring windows
//! within one channel of each other are merged.
//!
//! The constant-σ window model is only an initialization: merged estimates
//! are polished by Gauss-Newton least squares against the full spectrum,
//! with each pulse carrying the calibrated width at its own center — the
//! same per-line model the solver dictionary uses. The polish never makes
//! an estimate worse: a cluster keeps its windowed values whenever
//! refinement fails to reduce the residual.

use crate::cube::Spectrum;
use crate::error::{Error, Result};
use crate::pencil;
use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

type C64 = Complex<f64>;

/// Keep Fourier coefficients only where the Gaussian transform is at least
/// this fraction of its zero-frequency value; beyond that the division
/// amplifies noise instead of sharpening pulses.
const BAND_FLOOR: f64 = 1e-3;

/// Hard cap on the deconvolution band (highest retained frequency). Bounds
/// the pencil problem size for very narrow pulses; two pulses one FWHM
/// apart need roughly half a cycle of phase separation across the band.
const MAX_BAND: usize = 64;

/// In-band coefficients are trusted only down to this multiple of the
/// out-of-band (pure noise) magnitude.
const BAND_NOISE_MULT: f64 = 3.0;

/// Scales the median absolute deviation to a Gaussian standard deviation.
const MAD_SCALE: f64 = 1.4826;

/// Poles further than this from the unit circle are discarded as artifacts.
const POLE_CIRCLE_TOL: f64 = 0.2;

/// Same-window location estimates closer than this are collapsed before the
/// amplitude fit, which would otherwise see nearly collinear atoms.
const PRE_FIT_MERGE_RADIUS: f64 = 0.5;

/// Cross-window duplicates within this many channels merge to one pulse.
const MERGE_RADIUS: f64 = 1.0;

/// Pulses further apart than this many σ do not couple; they refine in
/// separate clusters.
const REFINE_LINK_SIGMAS: f64 = 6.0;

/// Gauss-Newton iteration cap for the refinement of one cluster.
const REFINE_ITERS: usize = 25;

/// A Gauss-Newton location step is clamped to this many channels; the
/// windowed initialization is already within a channel of the truth.
const REFINE_MAX_STEP: f64 = 0.75;

/// Refinement stops when no location moves by more than this (channels) and
/// no amplitude by more than this relative to the cluster's largest.
const REFINE_TOL: f64 = 1e-9;

/// A rejected Gauss-Newton step is halved at most this many times before
/// the iteration stops where it stands.
const REFINE_BACKTRACKS: usize = 10;

/// Clusters needing more parameters than this keep their windowed
/// estimates; such pile-ups are beyond the pulse-train model anyway.
const REFINE_MAX_PARAMS: usize = 40;

/// Which summary spectrum a pulse was detected in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PulseSource {
    /// Per-channel mean over pixels: best signal-to-noise ratio.
    Average,
    /// Per-channel maximum over pixels: preserves localized trace elements.
    Maximum,
}

/// Tuning for windowed detection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Window length in channels (≥ 8).
    pub window_len: usize,
    /// Fraction of each window shared with its successor, in [0, 1).
    pub overlap: f64,
    /// Cap on the pencil model order per window.
    pub max_lines_per_window: usize,
    /// Relative singular-value cutoff for the model order, in (0, 1).
    pub sv_threshold: f64,
    /// Minimum retained pulse amplitude in counts.
    pub amp_floor: f64,
    /// Pulses below this multiple of the window noise scale are dropped.
    pub noise_mult: f64,
    /// Location-uncertainty scale in channels at amplitude = noise.
    pub tau_ref: f64,
    /// Lower clamp on the location uncertainty, channels.
    pub tau_min: f64,
    /// Upper clamp on the location uncertainty, channels.
    pub tau_max: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len: 128,
            overlap: 0.5,
            max_lines_per_window: 8,
            sv_threshold: 0.05,
            amp_floor: 0.5,
            noise_mult: 4.0,
            tau_ref: 3.0,
            tau_min: 1.0,
            tau_max: 8.0,
        }
    }
}

impl WindowConfig {
    /// Check the config invariants.
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 8 {
            return Err(Error::Config(format!(
                "window_len must be at least 8 channels, got {}",
                self.window_len
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "overlap must lie in [0, 1), got {}",
                self.overlap
            )));
        }
        if self.max_lines_per_window == 0 {
            return Err(Error::Config(
                "max_lines_per_window must be at least 1".into(),
            ));
        }
        if !(self.sv_threshold > 0.0 && self.sv_threshold < 1.0) {
            return Err(Error::Config(format!(
                "sv_threshold must lie in (0, 1), got {}",
                self.sv_threshold
            )));
        }
        if !(self.amp_floor >= 0.0) {
            return Err(Error::Config(format!(
                "amp_floor must be non-negative, got {}",
                self.amp_floor
            )));
        }
        if !(self.noise_mult >= 0.0) {
            return Err(Error::Config(format!(
                "noise_mult must be non-negative, got {}",
                self.noise_mult
            )));
        }
        if !(self.tau_ref > 0.0 && self.tau_min > 0.0 && self.tau_max >= self.tau_min) {
            return Err(Error::Config(format!(
                "uncertainty clamps need tau_ref > 0 and 0 < tau_min ≤ tau_max, got {} / {} / {}",
                self.tau_ref, self.tau_min, self.tau_max
            )));
        }
        Ok(())
    }
}

/// One detection window: half-open channel range plus its exclusive core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    /// Index of this window within the spectrum.
    pub id: usize,
    /// First channel covered.
    pub start: usize,
    /// One past the last channel covered.
    pub end: usize,
    /// Start of the region this window alone reports, channels.
    pub core_start: f64,
    /// End (exclusive) of that region, channels.
    pub core_end: f64,
}

/// Noise scale of one window, estimated by the median absolute deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Noise standard-deviation estimate in counts.
    pub scale: f64,
}

impl NoiseModel {
    /// Robust noise estimate: 1.4826 × median(|y − median(y)|). Insensitive
    /// to the sparse pulses riding on the baseline.
    pub fn from_window(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self { scale: 0.0 };
        }
        let mut work: Vec<f64> = samples.to_vec();
        let med = median_in_place(&mut work);
        for v in work.iter_mut() {
            *v = (*v - med).abs();
        }
        let mad = median_in_place(&mut work);
        Self {
            scale: MAD_SCALE * mad,
        }
    }
}

/// One detected pulse in a summary spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedPulse {
    /// Fractional channel of the pulse center, in [0, M).
    pub location: f64,
    /// Fitted pulse peak amplitude in counts (> 0).
    pub amplitude: f64,
    /// Which summary spectrum it came from.
    pub source: PulseSource,
    /// Window that reported it.
    pub window_id: usize,
    /// Location uncertainty τ in channels (> 0).
    pub uncertainty: f64,
}

/// Per-window result: locations/amplitudes plus an optional diagnostic when
/// the window could not be analyzed cleanly.
#[derive(Debug, Clone, Default)]
pub struct WindowDetection {
    /// (location, amplitude) pairs in window-local channels, ascending.
    pub pulses: Vec<(f64, f64)>,
    /// Present when the window degraded instead of producing estimates.
    pub diagnostic: Option<String>,
}

/// A degraded window within a whole-spectrum run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowDiagnostic {
    /// Window the condition occurred in.
    pub window_id: usize,
    /// Human-readable description.
    pub message: String,
}

/// Whole-spectrum detection result.
#[derive(Debug, Clone, Default)]
pub struct Detection {
    /// Merged pulses, ascending by location.
    pub pulses: Vec<DetectedPulse>,
    /// Windows that degraded; never fatal for the other windows.
    pub diagnostics: Vec<WindowDiagnostic>,
}

/// Split a spectrum into overlapping windows whose cores tile `[0, M)`.
///
/// Consecutive windows overlap by `floor(overlap·window_len)` channels. The
/// final window is anchored at `M − window_len` even when that breaks the
/// regular stride, so the union of ranges is exactly `[0, M)`. Each
/// window's core reaches halfway to its neighbors' centers; the first and
/// last cores extend to the spectrum edges.
pub fn split_windows(spec: &Spectrum, cfg: &WindowConfig) -> Result<Vec<Window>> {
    cfg.validate()?;
    let m = spec.len();
    let len = cfg.window_len;
    if len > m {
        return Err(Error::Config(format!(
            "window_len {len} exceeds the spectrum length {m}"
        )));
    }
    let overlap_ch = (cfg.overlap * len as f64).floor() as usize;
    let stride = len - overlap_ch;
    let mut starts: Vec<usize> = (0..=m - len).step_by(stride).collect();
    if *starts.last().expect("at least one window") != m - len {
        starts.push(m - len);
    }
    let centers: Vec<f64> = starts.iter().map(|s| *s as f64 + len as f64 / 2.0).collect();
    let last = starts.len() - 1;
    Ok(starts
        .iter()
        .enumerate()
        .map(|(i, s)| Window {
            id: i,
            start: *s,
            end: *s + len,
            core_start: if i == 0 {
                0.0
            } else {
                (centers[i - 1] + centers[i]) / 2.0
            },
            core_end: if i == last {
                m as f64
            } else {
                (centers[i] + centers[i + 1]) / 2.0
            },
        })
        .collect())
}

/// Detect pulses in one window, reporting locations in window-local
/// channels. The core is taken symmetric: `overlap·len/2` channels at each
/// edge belong to the neighbors.
pub fn detect_lines_window(
    samples: &[f64],
    sigma: f64,
    cfg: &WindowConfig,
    noise: &NoiseModel,
) -> Result<WindowDetection> {
    cfg.validate()?;
    let l = samples.len() as f64;
    let margin = (cfg.overlap * l).floor() / 2.0;
    detect_in_core(samples, sigma, cfg, noise, margin, l - margin)
}

/// Detect pulses in one window, keeping only locations inside
/// `[core_lo, core_hi)` (window-local channels).
fn detect_in_core(
    samples: &[f64],
    sigma: f64,
    cfg: &WindowConfig,
    noise: &NoiseModel,
    core_lo: f64,
    core_hi: f64,
) -> Result<WindowDetection> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "pulse width must be positive, got σ = {sigma}"
        )));
    }
    let l = samples.len();
    if l < 8 {
        return Err(Error::Dimension(format!(
            "window must hold at least 8 samples, got {l}"
        )));
    }
    if samples.iter().all(|v| *v == 0.0) {
        return Ok(WindowDetection::default());
    }

    // Fourier coefficients of the window and of the wrapped Gaussian atom.
    let spec_f = dft_forward(samples);
    let atom: Vec<f64> = (0..l)
        .map(|n| {
            let d = n.min(l - n) as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let phi = dft_forward(&atom);
    let phi0 = phi[0].re;
    let half = l / 2;

    // Band where the Gaussian transform still carries weight.
    let mut band = 0usize;
    for f in 1..=(half - 1).min(MAX_BAND) {
        if phi[f].re >= BAND_FLOOR * phi0 {
            band = f;
        } else {
            break;
        }
    }
    if band < 3 {
        return Ok(WindowDetection {
            pulses: Vec::new(),
            diagnostic: Some(format!(
                "usable deconvolution band has only {} coefficients for σ = {sigma:.2}",
                band + 1
            )),
        });
    }

    // Adaptive truncation: walk the band down until coefficients rise above
    // the out-of-band noise magnitude.
    let mut tail: Vec<f64> = (band + 1..=half).map(|f| spec_f[f].norm()).collect();
    let noise_dft = median_in_place(&mut tail);
    let trust = BAND_NOISE_MULT * noise_dft;
    let mut f_used = 0usize;
    for f in (0..=band).rev() {
        if spec_f[f].norm() >= trust {
            f_used = f;
            break;
        }
    }
    if f_used < 3 {
        // Nothing stands above the noise: an empty window, not an error.
        return Ok(WindowDetection::default());
    }

    // Deconvolve and estimate pole locations.
    let deconvolved: Vec<C64> = (0..=f_used).map(|f| spec_f[f] / phi[f].re).collect();
    let poles = pencil::estimate_poles(&deconvolved, cfg.max_lines_per_window, cfg.sv_threshold);
    let mut locations: Vec<f64> = poles
        .iter()
        .filter(|z| (z.norm() - 1.0).abs() <= POLE_CIRCLE_TOL)
        .map(|z| (-z.arg() / TAU * l as f64).rem_euclid(l as f64))
        .collect();
    if locations.is_empty() {
        return Ok(WindowDetection {
            pulses: Vec::new(),
            diagnostic: Some(
                "signal present but the pencil produced no stable poles".into(),
            ),
        });
    }
    locations.sort_by(f64::total_cmp);
    let locations = collapse_close(&locations, PRE_FIT_MERGE_RADIUS);

    // Amplitudes by least squares against (non-wrapped) Gaussian atoms over
    // the full window, so pulses in neighboring cores are still modeled.
    let design = DMatrix::from_fn(l, locations.len(), |n, k| {
        let d = n as f64 - locations[k];
        (-d * d / (2.0 * sigma * sigma)).exp()
    });
    let rhs = DVector::from_iterator(l, samples.iter().copied());
    let amps = match design.svd(true, true).solve(&rhs, 1e-10) {
        Ok(a) => a,
        Err(detail) => {
            return Ok(WindowDetection {
                pulses: Vec::new(),
                diagnostic: Some(format!("amplitude fit failed: {detail}")),
            })
        }
    };

    let floor = cfg.amp_floor.max(cfg.noise_mult * noise.scale);
    let mut pulses: Vec<(f64, f64)> = locations
        .iter()
        .zip(amps.iter())
        .filter(|(t, a)| {
            **t >= core_lo && **t < core_hi && a.is_finite() && **a > 0.0 && **a >= floor
        })
        .map(|(t, a)| (*t, *a))
        .collect();
    pulses.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(WindowDetection {
        pulses,
        diagnostic: None,
    })
}

/// Detect pulses across the whole spectrum: every window independently, a
/// deterministic merge of near-duplicate estimates, then the Gauss-Newton
/// polish with per-pulse calibrated widths.
pub fn detect_all(spec: &Spectrum, cfg: &WindowConfig, source: PulseSource) -> Result<Detection> {
    cfg.validate()?;
    let windows = split_windows(spec, cfg)?;
    let cal = *spec.calibration();
    let per_window: Vec<(Window, f64, Result<WindowDetection>)> = windows
        .into_par_iter()
        .map(|w| {
            let samples = &spec.values()[w.start..w.end];
            let noise = NoiseModel::from_window(samples);
            let center = (w.start + w.end) as f64 / 2.0;
            let det = cal.sigma_at_channel(center).and_then(|sigma| {
                detect_in_core(
                    samples,
                    sigma,
                    cfg,
                    &noise,
                    w.core_start - w.start as f64,
                    w.core_end - w.start as f64,
                )
            });
            (w, noise.scale, det)
        })
        .collect();

    let mut pulses = Vec::new();
    let mut diagnostics = Vec::new();
    for (w, noise_scale, det) in per_window {
        match det {
            Ok(d) => {
                if let Some(message) = d.diagnostic {
                    diagnostics.push(WindowDiagnostic {
                        window_id: w.id,
                        message,
                    });
                }
                for (t, a) in d.pulses {
                    pulses.push(DetectedPulse {
                        location: w.start as f64 + t,
                        amplitude: a,
                        source,
                        window_id: w.id,
                        uncertainty: uncertainty_factor(a, noise_scale, cfg)?,
                    });
                }
            }
            Err(e) => diagnostics.push(WindowDiagnostic {
                window_id: w.id,
                message: format!("window failed: {e}"),
            }),
        }
    }
    Ok(Detection {
        pulses: refine_pulses(merge_pulses(pulses), spec),
        diagnostics,
    })
}

/// Merge pulses within one channel of each other, keeping the
/// larger-amplitude estimate. Deterministic: sorted by location with
/// amplitude and window id as tie-breaks, then a single greedy pass.
pub fn merge_pulses(mut pulses: Vec<DetectedPulse>) -> Vec<DetectedPulse> {
    pulses.sort_by(|a, b| {
        a.location
            .total_cmp(&b.location)
            .then(b.amplitude.total_cmp(&a.amplitude))
            .then(a.window_id.cmp(&b.window_id))
    });
    let mut merged: Vec<DetectedPulse> = Vec::with_capacity(pulses.len());
    for p in pulses {
        match merged.last_mut() {
            Some(last) if p.location - last.location <= MERGE_RADIUS => {
                if p.amplitude > last.amplitude {
                    *last = p;
                }
            }
            _ => merged.push(p),
        }
    }
    merged
}

/// Polish merged pulse estimates against the full spectrum.
///
/// Gauss-Newton least squares on the locations and amplitudes of each
/// cluster of mutually overlapping pulses,
///
/// ```text
/// minimize  Σ_n ( y[n] − Σ_k a_k · exp(−(n − t_k)²/(2 σ(t_k)²)) )² ,
/// ```
///
/// where σ(t) is the calibrated width at the pulse's own center instead of
/// the constant width its detection window assumed. Pulses separated by
/// more than `REFINE_LINK_SIGMAS`·σ refine independently on their own local
/// support. A cluster keeps its windowed estimates whenever refinement
/// leaves the feasible region (finite, positive amplitudes, locations in
/// range) or fails to reduce the residual, so polishing never degrades a
/// detection. Sources, window ids, and uncertainties are passed through.
pub fn refine_pulses(pulses: Vec<DetectedPulse>, spec: &Spectrum) -> Vec<DetectedPulse> {
    let cal = *spec.calibration();
    let values = spec.values();
    let m = values.len();
    let mut refined: Vec<DetectedPulse> = Vec::with_capacity(pulses.len());

    let sigma_of = |t: f64| -> Option<f64> {
        let clamped = t.clamp(0.0, m as f64);
        cal.sigma_at_channel(clamped).ok().filter(|s| *s > 0.0)
    };

    // Pulses arrive sorted by location; link neighbors whose gap couples
    // their atoms into one cluster.
    let mut clusters: Vec<Vec<DetectedPulse>> = Vec::new();
    for p in pulses {
        let linked = match (clusters.last(), sigma_of(p.location)) {
            (Some(cluster), Some(sigma)) => {
                let last = cluster.last().expect("clusters are never empty");
                let reach = REFINE_LINK_SIGMAS
                    * sigma.max(sigma_of(last.location).unwrap_or(sigma));
                p.location - last.location <= reach
            }
            _ => false,
        };
        if linked {
            clusters.last_mut().expect("just matched").push(p);
        } else {
            clusters.push(vec![p]);
        }
    }

    for cluster in clusters {
        refined.extend(refine_cluster(cluster, values, &sigma_of));
    }
    refined.sort_by(|a, b| a.location.total_cmp(&b.location));
    refined
}

/// Refine one cluster, returning either the polished pulses or the
/// originals when any guard trips.
fn refine_cluster(
    cluster: Vec<DetectedPulse>,
    values: &[f64],
    sigma_of: &dyn Fn(f64) -> Option<f64>,
) -> Vec<DetectedPulse> {
    let k = cluster.len();
    if 2 * k > REFINE_MAX_PARAMS {
        return cluster;
    }
    let sigmas: Vec<f64> = match cluster
        .iter()
        .map(|p| sigma_of(p.location))
        .collect::<Option<Vec<f64>>>()
    {
        Some(s) => s,
        None => return cluster,
    };
    let sigma_max = sigmas.iter().cloned().fold(0.0f64, f64::max);
    let pad = REFINE_LINK_SIGMAS * sigma_max;
    let lo = ((cluster[0].location - pad).floor().max(0.0)) as usize;
    let hi = ((cluster[k - 1].location + pad).ceil() as usize).min(values.len());
    if hi - lo < 2 * k + 1 {
        return cluster;
    }
    let y = &values[lo..hi];
    let n_samples = y.len();
    let amp_scale = cluster
        .iter()
        .map(|p| p.amplitude)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let mut locations: Vec<f64> = cluster.iter().map(|p| p.location - lo as f64).collect();
    let mut amplitudes: Vec<f64> = cluster.iter().map(|p| p.amplitude).collect();
    let mut sigmas = sigmas;

    let residual_norm_sq = |locs: &[f64], amps: &[f64], sigs: &[f64]| -> f64 {
        (0..n_samples)
            .map(|n| {
                let model: f64 = (0..k)
                    .map(|j| {
                        let d = (n as f64 - locs[j]) / sigs[j];
                        amps[j] * (-0.5 * d * d).exp()
                    })
                    .sum();
                (y[n] - model).powi(2)
            })
            .sum()
    };
    let initial_residual = residual_norm_sq(&locations, &amplitudes, &sigmas);
    let mut current_residual = initial_residual;

    'iterations: for _ in 0..REFINE_ITERS {
        // Jacobian of the model: columns 2j (location) and 2j+1 (amplitude).
        let jac = DMatrix::from_fn(n_samples, 2 * k, |n, col| {
            let j = col / 2;
            let d = (n as f64 - locations[j]) / sigmas[j];
            let atom = (-0.5 * d * d).exp();
            if col % 2 == 0 {
                amplitudes[j] * atom * d / sigmas[j]
            } else {
                atom
            }
        });
        let residual = DVector::from_fn(n_samples, |n, _| {
            let model: f64 = (0..k)
                .map(|j| {
                    let d = (n as f64 - locations[j]) / sigmas[j];
                    amplitudes[j] * (-0.5 * d * d).exp()
                })
                .sum();
            y[n] - model
        });
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * residual;
        let step = match jtj.lu().solve(&jtr) {
            Some(s) => s,
            None => break,
        };

        // Damped update: halve a step that leaves the feasible region or
        // fails to reduce the residual, so progress is monotone and the
        // iteration can stop where it stands instead of discarding work.
        let mut scale = 1.0f64;
        for _ in 0..=REFINE_BACKTRACKS {
            let mut cand_loc = locations.clone();
            let mut cand_amp = amplitudes.clone();
            let mut feasible = true;
            let mut moved = false;
            for j in 0..k {
                let dt = (scale * step[2 * j]).clamp(-REFINE_MAX_STEP, REFINE_MAX_STEP);
                let da = scale * step[2 * j + 1];
                cand_loc[j] += dt;
                cand_amp[j] += da;
                if !(cand_loc[j].is_finite() && cand_amp[j].is_finite())
                    || cand_loc[j] < 0.0
                    || cand_loc[j] > n_samples as f64
                    || cand_amp[j] <= 0.0
                {
                    feasible = false;
                    break;
                }
                moved |= dt.abs() > REFINE_TOL || da.abs() > REFINE_TOL * amp_scale;
            }
            if feasible {
                if !moved {
                    break 'iterations;
                }
                let cand_sig: Option<Vec<f64>> = cand_loc
                    .iter()
                    .map(|t| sigma_of(t + lo as f64))
                    .collect();
                if let Some(cand_sig) = cand_sig {
                    let cand_residual = residual_norm_sq(&cand_loc, &cand_amp, &cand_sig);
                    if cand_residual <= current_residual {
                        locations = cand_loc;
                        amplitudes = cand_amp;
                        sigmas = cand_sig;
                        current_residual = cand_residual;
                        continue 'iterations;
                    }
                }
            }
            scale *= 0.5;
        }
        // No acceptable step at any damping: converged as far as it goes.
        break;
    }

    if current_residual > initial_residual {
        return cluster;
    }
    cluster
        .into_iter()
        .enumerate()
        .map(|(j, p)| DetectedPulse {
            location: locations[j] + lo as f64,
            amplitude: amplitudes[j],
            ..p
        })
        .collect()
}

/// Location uncertainty in channels for a pulse of amplitude `a` over noise
/// of the given scale:
///
/// ```text
/// τ = clamp(τ_ref · sqrt(noise_scale / a), τ_min, τ_max)
/// ```
///
/// Strictly decreasing in the amplitude between the clamps: strong pulses
/// pin their location tightly.
pub fn uncertainty_factor(amplitude: f64, noise_scale: f64, cfg: &WindowConfig) -> Result<f64> {
    if !(amplitude > 0.0) {
        return Err(Error::Domain(format!(
            "uncertainty is defined only for positive amplitudes, got {amplitude}"
        )));
    }
    if noise_scale <= 0.0 {
        return Ok(cfg.tau_min);
    }
    Ok((cfg.tau_ref * (noise_scale / amplitude).sqrt()).clamp(cfg.tau_min, cfg.tau_max))
}

/// Forward DFT (e^{−i2πfn/L} convention) of real samples.
fn dft_forward(samples: &[f64]) -> Vec<C64> {
    let mut buf: Vec<C64> = samples.iter().map(|v| C64::new(*v, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(samples.len())
        .process(&mut buf);
    buf
}

/// Median of a scratch slice (averages the middle pair for even lengths).
fn median_in_place(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice is undefined");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Collapse sorted locations closer than `radius`, averaging each cluster.
fn collapse_close(sorted: &[f64], radius: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut cluster: Vec<f64> = Vec::new();
    for &t in sorted {
        if let Some(&last) = cluster.last() {
            if t - last > radius {
                out.push(cluster.iter().sum::<f64>() / cluster.len() as f64);
                cluster.clear();
            }
        }
        cluster.push(t);
    }
    if !cluster.is_empty() {
        out.push(cluster.iter().sum::<f64>() / cluster.len() as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::EnergyCalibration;
    use approx::assert_relative_eq;

    fn spectrum_of(values: Vec<f64>) -> Spectrum {
        let cal = EnergyCalibration::with_range(0.0, 40_000.0, values.len()).unwrap();
        Spectrum::new(values, cal).unwrap()
    }

    /// Sum of Gaussians with per-pulse σ, non-periodic.
    fn render_pulses(m: usize, pulses: &[(f64, f64, f64)]) -> Vec<f64> {
        (0..m)
            .map(|n| {
                pulses
                    .iter()
                    .map(|(t, a, s)| {
                        let d = n as f64 - t;
                        a * (-d * d / (2.0 * s * s)).exp()
                    })
                    .sum()
            })
            .collect()
    }

    fn wide_cfg(window_len: usize) -> WindowConfig {
        WindowConfig {
            window_len,
            ..WindowConfig::default()
        }
    }

    #[test]
    fn split_is_fifteen_windows_at_defaults() {
        let spec = spectrum_of(vec![0.0; 1024]);
        let windows = split_windows(&spec, &WindowConfig::default()).unwrap();
        assert_eq!(windows.len(), 15, "1024 channels / len 128 / overlap 0.5");
        for pair in windows.windows(2) {
            assert_eq!(pair[1].start - pair[0].start, 64, "stride must be 64");
        }
    }

    #[test]
    fn split_union_covers_spectrum_and_cores_tile() {
        // Independent interval-cover check over a boolean array.
        for (m, overlap) in [(1024usize, 0.5f64), (1000, 0.5), (1024, 0.0), (300, 0.25)] {
            let spec = spectrum_of(vec![0.0; m]);
            let cfg = WindowConfig {
                overlap,
                ..WindowConfig::default()
            };
            let windows = split_windows(&spec, &cfg).unwrap();
            let mut covered = vec![false; m];
            for w in &windows {
                for c in w.start..w.end {
                    covered[c] = true;
                }
            }
            assert!(
                covered.iter().all(|c| *c),
                "windows must cover [0, {m}) at overlap {overlap}"
            );
            // Cores partition [0, m): every channel midpoint in exactly one core.
            for c in 0..m {
                let x = c as f64 + 0.5;
                let owners = windows
                    .iter()
                    .filter(|w| x >= w.core_start && x < w.core_end)
                    .count();
                assert_eq!(owners, 1, "channel {c} must belong to exactly one core");
            }
        }
    }

    #[test]
    fn split_disjoint_when_overlap_zero() {
        let spec = spectrum_of(vec![0.0; 1024]);
        let cfg = WindowConfig {
            overlap: 0.0,
            ..WindowConfig::default()
        };
        let windows = split_windows(&spec, &cfg).unwrap();
        assert_eq!(windows.len(), 8);
        for pair in windows.windows(2) {
            assert_eq!(pair[0].end, pair[1].start, "windows must be contiguous");
        }
    }

    #[test]
    fn split_rejects_window_longer_than_spectrum() {
        let spec = spectrum_of(vec![0.0; 64]);
        let err = split_windows(&spec, &WindowConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn single_noiseless_gaussian_recovered_precisely() {
        let samples = render_pulses(1024, &[(500.0, 100.0, 4.0)]);
        let det = detect_lines_window(
            &samples,
            4.0,
            &wide_cfg(1024),
            &NoiseModel { scale: 0.0 },
        )
        .unwrap();
        assert_eq!(det.pulses.len(), 1, "one pulse in, one pulse out");
        let (t, a) = det.pulses[0];
        assert!((t - 500.0).abs() < 0.1, "location error too large: {t}");
        assert!((a - 100.0).abs() / 100.0 < 0.01, "amplitude error too large: {a}");
    }

    #[test]
    fn all_zero_window_yields_nothing() {
        let det = detect_lines_window(
            &vec![0.0; 128],
            2.0,
            &WindowConfig::default(),
            &NoiseModel { scale: 0.0 },
        )
        .unwrap();
        assert!(det.pulses.is_empty());
        assert!(det.diagnostic.is_none());
    }

    #[test]
    fn two_pulses_one_fwhm_apart_both_found() {
        // FWHM = 2.3548·σ; amplitudes 100 and 20 per the overlap scenario.
        let sigma = 4.0;
        let fwhm = crate::calibration::FWHM_PER_SIGMA * sigma;
        let truth = [(300.0, 100.0, sigma), (300.0 + fwhm, 20.0, sigma)];
        let samples = render_pulses(1024, &truth);
        let det = detect_lines_window(
            &samples,
            sigma,
            &wide_cfg(1024),
            &NoiseModel { scale: 0.0 },
        )
        .unwrap();
        assert_eq!(det.pulses.len(), 2, "both overlapping pulses must be found");
        for ((t, _a), (tt, _aa, _s)) in det.pulses.iter().zip(&truth) {
            assert!((t - tt).abs() < 0.5, "location {t} strays from {tt}");
        }
    }

    #[test]
    fn negative_sigma_is_a_domain_error() {
        let err = detect_lines_window(
            &vec![1.0; 128],
            -1.0,
            &WindowConfig::default(),
            &NoiseModel { scale: 0.0 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn five_well_separated_pulses_found_across_windows() {
        let m = 1024;
        let cal = EnergyCalibration::with_range(0.0, 40_000.0, m).unwrap();
        let truth: [(f64, f64); 5] = [
            (100.0, 80.0),
            (260.5, 50.0),
            (480.0, 120.0),
            (700.25, 30.0),
            (930.0, 60.0),
        ];
        let pulses: Vec<(f64, f64, f64)> = truth
            .iter()
            .map(|(t, a)| (*t, *a, cal.sigma_at_channel(*t).unwrap()))
            .collect();
        let spec = Spectrum::new(render_pulses(m, &pulses), cal).unwrap();
        let det = detect_all(&spec, &WindowConfig::default(), PulseSource::Average).unwrap();
        assert_eq!(det.pulses.len(), 5, "expected exactly five detections");
        for (p, (t, a)) in det.pulses.iter().zip(&truth) {
            assert!(
                (p.location - t).abs() < 0.5,
                "location {} strays from {t}",
                p.location
            );
            assert!(
                (p.amplitude - a).abs() / a < 0.05,
                "amplitude {} strays from {a}",
                p.amplitude
            );
            assert!(p.uncertainty > 0.0);
        }
    }

    #[test]
    fn detection_is_scale_invariant_apart_from_amplitudes() {
        let m = 1024;
        let cal = EnergyCalibration::with_range(0.0, 40_000.0, m).unwrap();
        let pulses: Vec<(f64, f64, f64)> = [(200.0, 40.0), (600.0, 90.0)]
            .iter()
            .map(|(t, a)| (*t, *a, cal.sigma_at_channel(*t).unwrap()))
            .collect();
        let base = render_pulses(m, &pulses);
        let scaled: Vec<f64> = base.iter().map(|v| v * 10.0).collect();
        let cfg = WindowConfig::default();
        let d1 = detect_all(&Spectrum::new(base, cal).unwrap(), &cfg, PulseSource::Average)
            .unwrap();
        let d2 = detect_all(
            &Spectrum::new(scaled, cal).unwrap(),
            &cfg,
            PulseSource::Average,
        )
        .unwrap();
        assert_eq!(d1.pulses.len(), d2.pulses.len());
        for (p1, p2) in d1.pulses.iter().zip(&d2.pulses) {
            assert_relative_eq!(p1.location, p2.location, epsilon = 1e-6);
            assert_relative_eq!(p2.amplitude, 10.0 * p1.amplitude, max_relative = 1e-6);
            assert_relative_eq!(p1.uncertainty, p2.uncertainty, epsilon = 1e-6);
        }
    }

    #[test]
    fn merge_keeps_larger_amplitude_within_one_channel() {
        let mk = |loc: f64, amp: f64, id: usize| DetectedPulse {
            location: loc,
            amplitude: amp,
            source: PulseSource::Average,
            window_id: id,
            uncertainty: 1.0,
        };
        let merged = merge_pulses(vec![mk(96.02, 40.0, 1), mk(95.95, 38.0, 0)]);
        assert_eq!(merged.len(), 1, "duplicates within one channel must merge");
        assert_relative_eq!(merged[0].amplitude, 40.0);
        let kept = merge_pulses(vec![mk(95.0, 38.0, 0), mk(96.5, 40.0, 1)]);
        assert_eq!(kept.len(), 2, "pulses farther than one channel stay apart");
    }

    #[test]
    fn uncertainty_factor_formula_and_clamps() {
        let cfg = WindowConfig::default();
        assert_relative_eq!(uncertainty_factor(9.0, 1.0, &cfg).unwrap(), 1.0);
        assert_relative_eq!(uncertainty_factor(1.0, 1.0, &cfg).unwrap(), 3.0);
        // Huge amplitude clamps to τ_min, vanishing amplitude to τ_max.
        assert_relative_eq!(uncertainty_factor(1e12, 1.0, &cfg).unwrap(), cfg.tau_min);
        assert_relative_eq!(uncertainty_factor(1e-6, 1.0, &cfg).unwrap(), cfg.tau_max);
        // Monotone non-increasing in amplitude.
        let mut prev = f64::INFINITY;
        for a in [0.5, 1.0, 2.0, 4.0, 9.0, 100.0] {
            let tau = uncertainty_factor(a, 1.0, &cfg).unwrap();
            assert!(tau <= prev, "τ must not grow with amplitude");
            prev = tau;
        }
        assert!(uncertainty_factor(0.0, 1.0, &cfg).is_err());
        assert!(uncertainty_factor(-1.0, 1.0, &cfg).is_err());
        // Noiseless windows pin τ at its floor.
        assert_relative_eq!(uncertainty_factor(5.0, 0.0, &cfg).unwrap(), cfg.tau_min);
    }

    #[test]
    fn noise_model_matches_hand_computed_mad() {
        // median = 2.5; |deviations| = [2.5, 1.5, 0.5, 0.5, 1.5, 97.5];
        // median of those = 1.5.
        let noise = NoiseModel::from_window(&[0.0, 1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_relative_eq!(noise.scale, MAD_SCALE * 1.5, epsilon = 1e-12);
        // Outlier-dominated windows still report the bulk scale: the pulse
        // sample barely moves the estimate.
        let calm = NoiseModel::from_window(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_relative_eq!(calm.scale, MAD_SCALE * 1.5, epsilon = 1e-12);
    }

    #[test]
    fn no_pulse_outside_range_or_nonpositive() {
        let m = 1024;
        let cal = EnergyCalibration::with_range(0.0, 40_000.0, m).unwrap();
        // Pulses near both spectrum edges plus interior.
        let pulses: Vec<(f64, f64, f64)> = [(6.0, 50.0), (512.0, 70.0), (1018.0, 40.0)]
            .iter()
            .map(|(t, a)| (*t, *a, cal.sigma_at_channel(*t).unwrap()))
            .collect();
        let spec = Spectrum::new(render_pulses(m, &pulses), cal).unwrap();
        let det = detect_all(&spec, &WindowConfig::default(), PulseSource::Maximum).unwrap();
        assert!(!det.pulses.is_empty());
        for p in &det.pulses {
            assert!(p.location >= 0.0 && p.location < m as f64);
            assert!(p.amplitude > 0.0);
            assert!(p.uncertainty > 0.0);
            assert_eq!(p.source, PulseSource::Maximum);
        }
    }

    fn rough_pulse(location: f64, amplitude: f64) -> DetectedPulse {
        DetectedPulse {
            location,
            amplitude,
            source: PulseSource::Average,
            window_id: 0,
            uncertainty: 1.0,
        }
    }

    #[test]
    fn refine_sharpens_overlapping_pair_with_varying_widths() {
        let m = 512;
        let cal = EnergyCalibration::with_range(0.0, 20_000.0, m).unwrap();
        // Two pulses one FWHM apart at low channels, each with its own
        // calibrated width — the varying-σ case the window model blurs.
        let t0 = 40.0;
        let fwhm = cal.sigma_at_channel(t0).unwrap() * crate::calibration::FWHM_PER_SIGMA;
        let t1 = t0 + fwhm;
        let truth: Vec<(f64, f64, f64)> = [(t0, 80.0), (t1, 50.0)]
            .iter()
            .map(|(t, a)| (*t, *a, cal.sigma_at_channel(*t).unwrap()))
            .collect();
        let spec = Spectrum::new(render_pulses(m, &truth), cal).unwrap();

        // Deliberately rough starting estimates, off by ~0.4 ch and ~15%.
        let rough = vec![rough_pulse(t0 + 0.4, 68.0), rough_pulse(t1 - 0.4, 58.0)];
        let polished = refine_pulses(rough, &spec);
        assert_eq!(polished.len(), 2, "polish must not add or drop pulses");
        for (p, (t, a, _)) in polished.iter().zip(&truth) {
            assert!(
                (p.location - t).abs() < 0.01,
                "location {} should land on {t} after polish",
                p.location
            );
            assert!(
                (p.amplitude - a).abs() / a < 0.01,
                "amplitude {} should land on {a} after polish",
                p.amplitude
            );
        }
    }

    #[test]
    fn refine_leaves_exact_estimates_in_place() {
        let m = 512;
        let cal = EnergyCalibration::with_range(0.0, 20_000.0, m).unwrap();
        let truth: Vec<(f64, f64, f64)> = [(100.0, 60.0), (300.0, 90.0)]
            .iter()
            .map(|(t, a)| (*t, *a, cal.sigma_at_channel(*t).unwrap()))
            .collect();
        let spec = Spectrum::new(render_pulses(m, &truth), cal).unwrap();
        let exact: Vec<DetectedPulse> = truth
            .iter()
            .map(|(t, a, _)| rough_pulse(*t, *a))
            .collect();
        let polished = refine_pulses(exact, &spec);
        for (p, (t, a, _)) in polished.iter().zip(&truth) {
            assert_relative_eq!(p.location, *t, epsilon = 1e-6);
            assert_relative_eq!(p.amplitude, *a, max_relative = 1e-6);
        }
    }

    #[test]
    fn refine_keeps_estimates_when_it_cannot_improve() {
        // A spectrum that is no Gaussian at all: the guard must hand back
        // the original estimates instead of something worse.
        let m = 256;
        let values: Vec<f64> = (0..m).map(|n| if n % 7 == 0 { 5.0 } else { 0.1 }).collect();
        let spec = spectrum_of(values);
        let original = vec![rough_pulse(128.0, 5.0)];
        let polished = refine_pulses(original.clone(), &spec);
        assert_eq!(polished.len(), 1);
        let (p, o) = (&polished[0], &original[0]);
        // Either the fit genuinely improved the residual or nothing moved;
        // both are fine. What must never happen is a wild excursion.
        assert!(
            (p.location - o.location).abs() <= REFINE_ITERS as f64 * REFINE_MAX_STEP,
            "location drifted implausibly: {}",
            p.location
        );
        assert!(p.amplitude > 0.0, "amplitude must stay positive");
    }
}
