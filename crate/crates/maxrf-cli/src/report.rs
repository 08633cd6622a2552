//! Detection and run reports serialized as JSON.

use serde::{Deserialize, Serialize};

use maxrf::{DetectedElementSet, LineConfidence, SolveTrace, SolverConfig};

/// Confidence picture of one theoretical line across both summary spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineReport {
    /// Line name: Ka, Kb, Ll, La, Lb, Lg, or Ma.
    pub line: String,
    /// Tabulated emission energy in eV.
    pub energy_ev: f64,
    /// Line confidence in the average spectrum.
    pub lcs_average: f64,
    /// Line confidence in the maximum spectrum.
    pub lcs_maximum: f64,
    /// Fractional channel of the matched pulse, from the better source.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_channel: Option<f64>,
    /// Amplitude of the matched pulse in counts, from the better source.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_amplitude: Option<f64>,
}

/// Confidence picture of one detected element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementReport {
    /// Chemical symbol.
    pub element: String,
    /// Atomic number.
    pub z: u8,
    /// Element confidence in the average spectrum.
    pub ecs_average: f64,
    /// Element confidence in the maximum spectrum.
    pub ecs_maximum: f64,
    /// Per-line detail, ascending by energy.
    pub lines: Vec<LineReport>,
}

/// Output of the detect stage: every element with positive confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub elements: Vec<ElementReport>,
    /// Degraded-window notes from both summary spectra.
    pub diagnostics: Vec<String>,
}

impl DetectionReport {
    /// Flattens a detected element set into the report shape.
    pub fn from_set(set: &DetectedElementSet) -> Self {
        let elements = set
            .elements
            .iter()
            .map(|element| {
                let avg_lines: Vec<&LineConfidence> = set
                    .average
                    .lines
                    .iter()
                    .filter(|lc| lc.line.element == *element)
                    .collect();
                let max_lines: Vec<&LineConfidence> = set
                    .maximum
                    .lines
                    .iter()
                    .filter(|lc| lc.line.element == *element)
                    .collect();
                let lines = avg_lines
                    .iter()
                    .zip(&max_lines)
                    .map(|(a, m)| {
                        // Location/amplitude come from the higher-confidence source.
                        let better = if m.lcs > a.lcs { m } else { a };
                        LineReport {
                            line: a.line.line.as_str().to_string(),
                            energy_ev: a.line.energy_ev,
                            lcs_average: a.lcs,
                            lcs_maximum: m.lcs,
                            matched_channel: better.matched_pulse.map(|p| p.location),
                            matched_amplitude: better.matched_pulse.map(|p| p.amplitude),
                        }
                    })
                    .collect();
                ElementReport {
                    element: element.symbol.to_string(),
                    z: element.z,
                    ecs_average: set.average.ecs(*element),
                    ecs_maximum: set.maximum.ecs(*element),
                    lines,
                }
            })
            .collect();
        let diagnostics = set
            .average
            .diagnostics
            .iter()
            .map(|d| format!("average spectrum, window {}: {}", d.window_id, d.message))
            .chain(
                set.maximum
                    .diagnostics
                    .iter()
                    .map(|d| format!("maximum spectrum, window {}: {}", d.window_id, d.message)),
            )
            .collect();
        Self {
            elements,
            diagnostics,
        }
    }
}

/// Complete record of one deconvolution run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Preset name when the cube was simulated in the same run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Cube dimensions: height, width, channels.
    pub cube: [usize; 3],
    pub detection: DetectionReport,
    /// Which solver ran: "fista" or "admm".
    pub solver: String,
    /// The exact configuration the solver ran with.
    pub config: SolverConfig,
    /// Iterations actually executed (early stop may cut the budget short).
    pub iterations: usize,
    /// Model MSE after the last iteration, when recorded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_mse: Option<f64>,
    /// Total solver wall time in milliseconds.
    pub total_wall_ms: f64,
}

impl RunReport {
    /// Assembles the report from the run's pieces.
    pub fn new(
        preset: Option<String>,
        cube_dims: [usize; 3],
        detection: DetectionReport,
        solver: &str,
        config: &SolverConfig,
        trace: &SolveTrace,
    ) -> Self {
        Self {
            preset,
            cube: cube_dims,
            detection,
            solver: solver.to_string(),
            config: config.clone(),
            iterations: trace.iterations(),
            final_mse: trace.final_mse(),
            total_wall_ms: trace.total_wall_ms(),
        }
    }
}
