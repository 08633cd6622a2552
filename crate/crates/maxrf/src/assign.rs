//! Assignment of detected pulses to tabulated element lines.
//!
//! Each detected pulse `(t_k, τ_k)` is scored against each theoretical line
//! location `T_{p,q}` (element `p`, line `q`) with a hinge kernel,
//!
//! ```text
//! v_{k,p,q} = max(1 − |t_k − T_{p,q}| / τ_k, 0)
//! ```
//!
//! then two exclusivity constraints are applied as single zeroing passes:
//! (a) each line keeps only its closest pulse (the maximum over `k`), and
//! (b) each pulse keeps, per element, only its best-matching line (the
//! maximum over `q`). The surviving scores aggregate upward:
//!
//! ```text
//! line confidence    ṽ_{p,q} = Σ_k v_{k,p,q}
//! family confidence  FCS = max(LCS of the α line, mean LCS of the family)
//! element confidence ECS = max(FCS_K, FCS_L, FCS_M), forced to 0 when no
//!                          K- or L-family line matched
//! ```
//!
//! Elements are declared present when their ECS is positive in either the
//! average or the maximum summary spectrum; the union feeds the dictionary.

use crate::calibration::EnergyCalibration;
use crate::cube::Datacube;
use crate::detect::{detect_all, DetectedPulse, PulseSource, WindowConfig, WindowDiagnostic};
use crate::elements::{Element, ElementLine, ElementLineTable, Family};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Raw line-confidence kernel: 1 at an exact match, falling linearly to 0
/// at distance τ.
pub fn lcs_raw(location: f64, tau: f64, line_channel: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!(
            "uncertainty must be positive, got τ = {tau}"
        )));
    }
    Ok((1.0 - (location - line_channel).abs() / tau).max(0.0))
}

/// Scores of one source's pulses against the in-range line table, after the
/// exclusivity constraints.
#[derive(Debug, Clone)]
pub struct Assignment {
    /// `v[k][j]`: pulse `k` against line `j`, post-constraints.
    pub v: Vec<Vec<f64>>,
    /// The pulses scored (row order of `v`).
    pub pulses: Vec<DetectedPulse>,
    /// In-range lines (column order of `v`), ascending by energy.
    pub lines: Vec<ElementLine>,
}

impl Assignment {
    /// Per-line confidence ṽ and its matched pulse, in line order.
    pub fn line_confidences(&self) -> Vec<LineConfidence> {
        self.lines
            .iter()
            .enumerate()
            .map(|(j, line)| {
                let mut lcs = 0.0;
                let mut matched = None;
                for (k, row) in self.v.iter().enumerate() {
                    if row[j] > 0.0 {
                        lcs += row[j];
                        matched = Some(self.pulses[k]);
                    }
                }
                LineConfidence {
                    line: *line,
                    lcs,
                    matched_pulse: matched,
                }
            })
            .collect()
    }
}

/// Confidence of one element line after assignment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineConfidence {
    /// The theoretical line this score belongs to.
    pub line: ElementLine,
    /// ṽ ∈ [0, 1]; 0 when no pulse matched.
    pub lcs: f64,
    /// The pulse that produced the score, present iff lcs > 0.
    pub matched_pulse: Option<DetectedPulse>,
}

/// Per-family and overall confidence of one element.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ElementConfidence {
    /// The element scored.
    pub element: Element,
    /// K-family confidence (0 when the family has no in-range lines).
    pub fcs_k: f64,
    /// L-family confidence.
    pub fcs_l: f64,
    /// M-family confidence.
    pub fcs_m: f64,
    /// max(fcs_k, fcs_l, fcs_m), zeroed when no K/L line matched.
    pub ecs: f64,
}

/// One source spectrum's complete confidence picture.
#[derive(Debug, Clone)]
pub struct SourceConfidence {
    /// Which summary spectrum was analyzed.
    pub source: PulseSource,
    /// Per-line confidences in table order.
    pub lines: Vec<LineConfidence>,
    /// Per-element confidences, ascending by atomic number.
    pub elements: Vec<ElementConfidence>,
    /// Detection diagnostics from degraded windows.
    pub diagnostics: Vec<WindowDiagnostic>,
}

impl SourceConfidence {
    /// ECS of one element in this source (0 when untabulated).
    pub fn ecs(&self, element: Element) -> f64 {
        self.elements
            .iter()
            .find(|e| e.element == element)
            .map_or(0.0, |e| e.ecs)
    }
}

/// Elements considered present in a cube: the union over both summary
/// spectra of elements with positive ECS.
#[derive(Debug, Clone)]
pub struct DetectedElementSet {
    /// Detected elements, ascending by atomic number.
    pub elements: Vec<Element>,
    /// Full scoring of the average spectrum.
    pub average: SourceConfidence,
    /// Full scoring of the maximum spectrum.
    pub maximum: SourceConfidence,
}

impl DetectedElementSet {
    /// True when the element with this symbol was detected.
    pub fn contains(&self, symbol: &str) -> bool {
        self.elements.iter().any(|e| e.symbol == symbol)
    }
}

/// Score pulses against every in-range line and apply both exclusivity
/// constraints, (a) then (b), each as one zeroing pass. Ties break toward
/// the lower pulse index and the lower-energy line.
pub fn assign_pulses(
    pulses: &[DetectedPulse],
    table: &ElementLineTable,
    cal: &EnergyCalibration,
) -> Result<Assignment> {
    let lines = table.in_range(cal).lines().to_vec();
    let channels: Vec<f64> = lines
        .iter()
        .map(|l| cal.energy_to_channel(l.energy_ev))
        .collect::<Result<_>>()?;
    let mut v = vec![vec![0.0f64; lines.len()]; pulses.len()];
    for (k, p) in pulses.iter().enumerate() {
        for (j, t) in channels.iter().enumerate() {
            v[k][j] = lcs_raw(p.location, p.uncertainty, *t)?;
        }
    }

    // Constraint (a): each line keeps only its best pulse. Scanning k in
    // ascending order with a strict comparison keeps the lower index on ties.
    for j in 0..lines.len() {
        let mut best: Option<usize> = None;
        let mut best_v = 0.0;
        for (k, row) in v.iter().enumerate() {
            if row[j] > best_v {
                best_v = row[j];
                best = Some(k);
            }
        }
        for (k, row) in v.iter_mut().enumerate() {
            if best != Some(k) {
                row[j] = 0.0;
            }
        }
    }

    // Constraint (b): each pulse keeps at most one line per element. Lines
    // are in ascending energy order, so a strict comparison keeps the
    // lower-energy line on ties.
    let mut element_cols: Vec<(Element, Vec<usize>)> = Vec::new();
    for (j, line) in lines.iter().enumerate() {
        match element_cols.iter_mut().find(|(e, _)| *e == line.element) {
            Some((_, cols)) => cols.push(j),
            None => element_cols.push((line.element, vec![j])),
        }
    }
    for row in v.iter_mut() {
        for (_, cols) in &element_cols {
            let mut best: Option<usize> = None;
            let mut best_v = 0.0;
            for &j in cols {
                if row[j] > best_v {
                    best_v = row[j];
                    best = Some(j);
                }
            }
            for &j in cols {
                if best != Some(j) {
                    row[j] = 0.0;
                }
            }
        }
    }

    Ok(Assignment {
        v,
        pulses: pulses.to_vec(),
        lines,
    })
}

/// Family confidence: the α line's score or the family mean, whichever is
/// larger. `None` α (not tabulated or out of range) counts as 0; an empty
/// family scores 0.
pub fn family_confidence(line_lcs: &[f64], alpha_lcs: Option<f64>) -> f64 {
    if line_lcs.is_empty() {
        return 0.0;
    }
    let mean = line_lcs.iter().sum::<f64>() / line_lcs.len() as f64;
    alpha_lcs.unwrap_or(0.0).max(mean)
}

/// Element confidence from the three family scores. An element with no
/// matched K- or L-family line is considered absent regardless of its
/// M-family score.
pub fn element_confidence(fcs_k: f64, fcs_l: f64, fcs_m: f64, k_or_l_matched: bool) -> f64 {
    if !k_or_l_matched {
        return 0.0;
    }
    fcs_k.max(fcs_l).max(fcs_m)
}

/// Aggregate one source's line confidences into per-element confidences.
fn score_elements(lines: &[LineConfidence], table_elements: &[Element]) -> Vec<ElementConfidence> {
    table_elements
        .iter()
        .map(|element| {
            let mut fcs = [0.0f64; 3];
            let mut k_or_l_matched = false;
            for (slot, family) in [(0, Family::K), (1, Family::L), (2, Family::M)] {
                let fam: Vec<&LineConfidence> = lines
                    .iter()
                    .filter(|lc| lc.line.element == *element && lc.line.family() == family)
                    .collect();
                let scores: Vec<f64> = fam.iter().map(|lc| lc.lcs).collect();
                let alpha = fam
                    .iter()
                    .find(|lc| lc.line.is_alpha())
                    .map(|lc| lc.lcs);
                fcs[slot] = family_confidence(&scores, alpha);
                if family != Family::M && scores.iter().any(|s| *s > 0.0) {
                    k_or_l_matched = true;
                }
            }
            ElementConfidence {
                element: *element,
                fcs_k: fcs[0],
                fcs_l: fcs[1],
                fcs_m: fcs[2],
                ecs: element_confidence(fcs[0], fcs[1], fcs[2], k_or_l_matched),
            }
        })
        .collect()
}

/// Detect pulses in one summary spectrum and score every element.
fn score_source(
    spec: &crate::cube::Spectrum,
    table: &ElementLineTable,
    cfg: &WindowConfig,
    source: PulseSource,
) -> Result<SourceConfidence> {
    let detection = detect_all(spec, cfg, source)?;
    let assignment = assign_pulses(&detection.pulses, table, spec.calibration())?;
    let lines = assignment.line_confidences();
    let in_range = table.in_range(spec.calibration());
    let elements = score_elements(&lines, &in_range.elements());
    Ok(SourceConfidence {
        source,
        lines,
        elements,
        diagnostics: detection.diagnostics,
    })
}

/// Run detection on both summary spectra of a cube and emit the union of
/// elements with positive confidence in either.
pub fn detect_elements(
    cube: &Datacube,
    table: &ElementLineTable,
    cfg: &WindowConfig,
) -> Result<DetectedElementSet> {
    let average = score_source(
        &cube.average_spectrum(),
        table,
        cfg,
        PulseSource::Average,
    )?;
    let maximum = score_source(&cube.max_spectrum(), table, cfg, PulseSource::Maximum)?;
    let mut elements: Vec<Element> = average
        .elements
        .iter()
        .chain(maximum.elements.iter())
        .filter(|e| e.ecs > 0.0)
        .map(|e| e.element)
        .collect();
    elements.sort();
    elements.dedup();
    Ok(DetectedElementSet {
        elements,
        average,
        maximum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::LineKind;
    use approx::assert_relative_eq;

    fn pulse_at(location: f64, amplitude: f64, tau: f64) -> DetectedPulse {
        DetectedPulse {
            location,
            amplitude,
            source: PulseSource::Average,
            window_id: 0,
            uncertainty: tau,
        }
    }

    #[test]
    fn lcs_kernel_values() {
        assert_relative_eq!(lcs_raw(100.0, 2.0, 100.0).unwrap(), 1.0);
        assert_relative_eq!(lcs_raw(102.0, 2.0, 100.0).unwrap(), 0.0);
        assert_relative_eq!(lcs_raw(101.0, 2.0, 100.0).unwrap(), 0.5);
        assert_relative_eq!(lcs_raw(90.0, 2.0, 100.0).unwrap(), 0.0, epsilon = 0.0);
        assert!(lcs_raw(100.0, 0.0, 100.0).is_err());
        assert!(lcs_raw(100.0, -1.0, 100.0).is_err());
    }

    #[test]
    fn closest_pulse_wins_each_line() {
        // Two pulses near Fe Kα (channel 163.83 at 1024 channels over 40 keV),
        // at distances τ/4 and τ/2: only the closer one keeps its score.
        let cal = EnergyCalibration::with_range(0.0, 40_000.0, 1024).unwrap();
        let table = ElementLineTable::embedded().for_symbols(&["Fe"]);
        let t_ka = cal.energy_to_channel(6_399.51).unwrap();
        let tau = 4.0;
        let pulses = [
            pulse_at(t_ka + tau / 2.0, 50.0, tau),
            pulse_at(t_ka + tau / 4.0, 50.0, tau),
        ];
        let a = assign_pulses(&pulses, &table, &cal).unwrap();
        let ka_col = a
            .lines
            .iter()
            .position(|l| l.line == LineKind::Ka)
            .unwrap();
        assert_relative_eq!(a.v[0][ka_col], 0.0);
        assert_relative_eq!(a.v[1][ka_col], 0.75);
    }

    #[test]
    fn one_pulse_keeps_only_its_best_line_per_element() {
        // A pulse between Cu Kα and Kβ, scoring 0.8 against Kα and 0.6
        // against Kβ: constraint (b) zeroes the weaker match.
        let cal = EnergyCalibration::with_range(0.0, 40_000.0, 1024).unwrap();
        let table = ElementLineTable::embedded().for_symbols(&["Cu"]);
        let t_ka = cal.energy_to_channel(8_041.13).unwrap();
        let t_kb = cal.energy_to_channel(8_905.29).unwrap();
        let gap = t_kb - t_ka;
        let tau = gap / 0.6;
        let pulses = [pulse_at(t_ka + 0.2 * tau, 50.0, tau)];
        let a = assign_pulses(&pulses, &table, &cal).unwrap();
        let ka_col = a.lines.iter().position(|l| l.line == LineKind::Ka).unwrap();
        let kb_col = a.lines.iter().position(|l| l.line == LineKind::Kb).unwrap();
        assert_relative_eq!(a.v[0][ka_col], 0.8, epsilon = 1e-12);
        assert_relative_eq!(a.v[0][kb_col], 0.0);
    }

    #[test]
    fn no_pulses_means_all_zero_scores() {
        let cal = EnergyCalibration::default();
        let table = ElementLineTable::embedded();
        let a = assign_pulses(&[], &table, &cal).unwrap();
        assert!(a.v.is_empty());
        assert!(a.line_confidences().iter().all(|lc| lc.lcs == 0.0));
        assert!(a
            .line_confidences()
            .iter()
            .all(|lc| lc.matched_pulse.is_none()));
    }

    #[test]
    fn constraint_matrix_property_holds_on_a_crowded_instance() {
        // Many pulses with wide uncertainties so raw scores overlap heavily.
        let cal = EnergyCalibration::default();
        let table = ElementLineTable::embedded();
        let pulses: Vec<DetectedPulse> = (0..40)
            .map(|i| pulse_at(200.0 + 37.0 * i as f64 % 3000.0, 10.0, 8.0))
            .collect();
        let a = assign_pulses(&pulses, &table, &cal).unwrap();
        // (a): each line column has at most one non-zero.
        for j in 0..a.lines.len() {
            let nonzero = a.v.iter().filter(|row| row[j] > 0.0).count();
            assert!(nonzero <= 1, "line {j} kept {nonzero} pulses");
        }
        // (b): each (pulse, element) fiber has at most one non-zero.
        for (k, row) in a.v.iter().enumerate() {
            for element in table.elements() {
                let nonzero = a
                    .lines
                    .iter()
                    .enumerate()
                    .filter(|(j, l)| l.element == element && row[*j] > 0.0)
                    .count();
                assert!(nonzero <= 1, "pulse {k} matched {nonzero} lines of {element}");
            }
        }
        // All surviving scores stay within [0, 1].
        for lc in a.line_confidences() {
            assert!((0.0..=1.0).contains(&lc.lcs));
            assert_eq!(lc.matched_pulse.is_some(), lc.lcs > 0.0);
        }
    }

    #[test]
    fn family_confidence_rule() {
        assert_relative_eq!(family_confidence(&[0.9, 0.0, 0.0], Some(0.9)), 0.9);
        assert_relative_eq!(family_confidence(&[1.0, 1.0], Some(1.0)), 1.0);
        assert_relative_eq!(family_confidence(&[0.0, 0.6, 0.6], Some(0.0)), 0.4);
        assert_relative_eq!(family_confidence(&[], None), 0.0);
        // α line absent from range: only the mean contributes.
        assert_relative_eq!(family_confidence(&[0.8, 0.2], None), 0.5);
    }

    #[test]
    fn element_confidence_requires_k_or_l() {
        assert_relative_eq!(element_confidence(0.0, 0.0, 0.95, false), 0.0);
        assert_relative_eq!(element_confidence(0.7, 0.4, 0.9, true), 0.9);
        assert_relative_eq!(element_confidence(0.0, 0.0, 0.0, false), 0.0);
    }

    /// Render a uniform cube where every pixel carries the given lines.
    fn uniform_cube(
        m: usize,
        h: usize,
        w: usize,
        lines: &[(f64, f64)],
        lit_pixels: Option<&[usize]>,
    ) -> Datacube {
        let cal = EnergyCalibration::with_range(0.0, 40_000.0, m).unwrap();
        let spectrum: Vec<f32> = (0..m)
            .map(|n| {
                lines
                    .iter()
                    .map(|(energy, amp)| {
                        let t = cal.energy_to_channel(*energy).unwrap();
                        let sigma = cal.sigma_at_channel(t).unwrap();
                        let d = n as f64 - t;
                        amp * (-d * d / (2.0 * sigma * sigma)).exp()
                    })
                    .sum::<f64>() as f32
            })
            .collect();
        let mut counts = vec![0.0f32; h * w * m];
        for i in 0..h * w {
            let lit = lit_pixels.map_or(true, |px| px.contains(&i));
            if lit {
                counts[i * m..(i + 1) * m].copy_from_slice(&spectrum);
            }
        }
        Datacube::new(counts, h, w, cal).unwrap()
    }

    #[test]
    fn iron_and_lead_cube_detects_exactly_those() {
        // Fe K lines plus the full Pb L/M family, high amplitudes, 4096
        // channels (at 1024 channels Pb Lα and As Kα collide within τ).
        let lines = [
            (6_399.51, 100.0),
            (7_057.98, 20.0),
            (9_184.50, 10.0),
            (10_551.50, 100.0),
            (12_613.70, 80.0),
            (14_764.40, 40.0),
            (2_345.50, 30.0),
        ];
        let cube = uniform_cube(4096, 4, 4, &lines, None);
        let set = detect_elements(
            &cube,
            &ElementLineTable::embedded(),
            &WindowConfig::default(),
        )
        .unwrap();
        let symbols: Vec<&str> = set.elements.iter().map(|e| e.symbol).collect();
        assert_eq!(symbols, vec!["Fe", "Pb"], "exact detected set expected");
    }

    #[test]
    fn localized_element_appears_only_via_maximum_spectrum() {
        // Fe confined to 10 pixels of a 64×64 cube at amplitude 100: the
        // average spectrum dilutes it to ~0.24 counts, under the amplitude
        // floor, but the maximum spectrum sees the full pulse.
        let lit: Vec<usize> = (0..10).map(|i| 65 * i + 7).collect();
        let cube = uniform_cube(
            1024,
            64,
            64,
            &[(6_399.51, 100.0), (7_057.98, 20.0)],
            Some(&lit),
        );
        let set = detect_elements(
            &cube,
            &ElementLineTable::embedded(),
            &WindowConfig::default(),
        )
        .unwrap();
        assert!(set.contains("Fe"), "Fe must be found through the maximum spectrum");
        let fe = set.elements.iter().find(|e| e.symbol == "Fe").unwrap();
        assert_relative_eq!(set.average.ecs(*fe), 0.0);
        assert!(set.maximum.ecs(*fe) > 0.9);
    }

    #[test]
    fn empty_cube_detects_nothing() {
        let cube = uniform_cube(1024, 4, 4, &[], None);
        let set = detect_elements(
            &cube,
            &ElementLineTable::embedded(),
            &WindowConfig::default(),
        )
        .unwrap();
        assert!(set.elements.is_empty());
    }
}
