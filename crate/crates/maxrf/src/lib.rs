//! Deconvolution of macro X-ray fluorescence (MA-XRF) datacubes into
//! per-element-line distribution maps.
//!
//! A scan produces a cube `Y` of photon counts over `M` energy channels and
//! `H×W` pixels. This crate factorizes it as
//!
//! ```text
//! Y ≈ S·A
//! ```
//!
//! where `S` is a dictionary of Gaussian pulse shapes, one column per
//! candidate emission line, and each row of `A` reshapes into that line's
//! spatial distribution map. The pipeline:
//!
//! 1. summarize the cube into average and maximum spectra ([`cube`]);
//! 2. detect spectral pulses in overlapping windows by Fourier-domain
//!    deconvolution plus the matrix-pencil method ([`detect`], [`pencil`]);
//! 3. assign pulses to tabulated emission lines and score per-element
//!    confidence ([`elements`], [`assign`]);
//! 4. build the Gaussian dictionary for the detected lines ([`dict`]);
//! 5. recover `A` with a constrained solver — ADMM with an FFT-based exact
//!    linear step, or an accelerated proximal-gradient scheme ([`solver`]);
//! 6. synthesize ground-truth scenes for validation ([`synth`]).

pub mod assign;
pub mod calibration;
pub mod cube;
pub mod detect;
pub mod dict;
pub mod elements;
pub mod error;
pub mod pencil;
pub mod solver;
pub mod synth;

pub use assign::{DetectedElementSet, ElementConfidence, LineConfidence};
pub use calibration::EnergyCalibration;
pub use cube::{Datacube, Spectrum};
pub use detect::{DetectedPulse, PulseSource, WindowConfig};
pub use dict::{LineMeta, PulseDictionary};
pub use elements::{Element, ElementLine, ElementLineTable, Family, LineKind};
pub use error::{Error, Result};
pub use solver::{AmplitudeMaps, SolveTrace, Solver, SolverConfig};
pub use synth::{ScenePreset, SyntheticScene};
