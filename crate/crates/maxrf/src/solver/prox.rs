//! Proximal operators used by both factorization solvers.
//!
//! Three operators appear in the iteration schemes:
//!
//! ```text
//! soft threshold   prox_l1(z, λ)   = z − λ   if z >  λ
//!                                    0        if |z| ≤ λ
//!                                    z + λ   if z < −λ
//!
//! non-negativity   prox_nonneg(z)  = max(z, 0)
//!
//! physical caps    per pixel and element:
//!                    non-α K-family amplitude ≤ ½ · (Kα amplitude)
//!                    non-α L-family amplitude ≤     (Lα amplitude)
//!                    α lines and M-family lines are never modified
//! ```
//!
//! The physical caps encode that, in an emission spectrum, the α line of a
//! family dominates its siblings: Kα is normally at least twice Kβ, and Lα is
//! normally the largest L line.  A family whose α line is absent from the
//! dictionary (for example out of calibration range) is left uncapped, since
//! the cap source does not exist.

use crate::dict::LineMeta;
use crate::elements::Family;

/// Soft-thresholding operator for the l1 term with threshold `lambda` >= 0.
pub fn prox_l1(z: f64, lambda: f64) -> f64 {
    debug_assert!(
        lambda >= 0.0,
        "soft-threshold lambda must be non-negative, got {lambda}"
    );
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Projection onto the non-negative half line.
pub fn prox_nonneg(z: f64) -> f64 {
    if z > 0.0 { z } else { 0.0 }
}

/// How one dictionary column is capped by the physical constraint.
///
/// The payload is the column index of the α line that provides the cap value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapRule {
    /// α line, M-family line, or family without an α line in the dictionary.
    Uncapped,
    /// Non-α K-family line: capped at half the Kα amplitude of this column.
    HalfOf(usize),
    /// Non-α L-family line: capped at the Lα amplitude of this column.
    AtMost(usize),
}

/// Precomputes the cap rule for every dictionary column.
pub fn cap_rules(meta: &[LineMeta]) -> Vec<CapRule> {
    meta.iter()
        .map(|line| {
            if line.is_alpha {
                return CapRule::Uncapped;
            }
            let alpha_column = |family: Family| {
                meta.iter().position(|candidate| {
                    candidate.element == line.element
                        && candidate.family == family
                        && candidate.is_alpha
                })
            };
            match line.family {
                Family::K => alpha_column(Family::K)
                    .map(CapRule::HalfOf)
                    .unwrap_or(CapRule::Uncapped),
                Family::L => alpha_column(Family::L)
                    .map(CapRule::AtMost)
                    .unwrap_or(CapRule::Uncapped),
                Family::M => CapRule::Uncapped,
            }
        })
        .collect()
}

/// Applies the physical caps to the K amplitudes of a single pixel in place.
pub fn prox_physical(amplitudes: &mut [f64], meta: &[LineMeta]) {
    assert_eq!(
        amplitudes.len(),
        meta.len(),
        "one amplitude per dictionary column expected"
    );
    prox_physical_with_rules(amplitudes, &cap_rules(meta));
}

/// Cap application with precomputed rules, for use inside solver hot loops.
///
/// α columns are never modified, so reading the cap source while capping other
/// columns is order-independent and the operator is idempotent.
pub fn prox_physical_with_rules(amplitudes: &mut [f64], rules: &[CapRule]) {
    assert_eq!(
        amplitudes.len(),
        rules.len(),
        "one cap rule per amplitude expected"
    );
    for k in 0..amplitudes.len() {
        match rules[k] {
            CapRule::Uncapped => {}
            CapRule::HalfOf(alpha) => {
                let cap = 0.5 * amplitudes[alpha];
                if amplitudes[k] > cap {
                    amplitudes[k] = cap;
                }
            }
            CapRule::AtMost(alpha) => {
                let cap = amplitudes[alpha];
                if amplitudes[k] > cap {
                    amplitudes[k] = cap;
                }
            }
        }
    }
}

/// Applies the caps across a map-major stack (`data[k·pixels + i]`) in place.
pub(crate) fn prox_physical_stack(data: &mut [f64], pixels: usize, rules: &[CapRule]) {
    assert_eq!(
        data.len(),
        pixels * rules.len(),
        "stack length must equal maps x pixels"
    );
    for (k, rule) in rules.iter().enumerate() {
        let (alpha, scale) = match *rule {
            CapRule::Uncapped => continue,
            CapRule::HalfOf(alpha) => (alpha, 0.5),
            CapRule::AtMost(alpha) => (alpha, 1.0),
        };
        for i in 0..pixels {
            let cap = scale * data[alpha * pixels + i];
            let value = &mut data[k * pixels + i];
            if *value > cap {
                *value = cap;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::EnergyCalibration;
    use crate::dict::build_for_elements;
    use crate::elements::ElementLineTable;

    fn meta_for(symbols: &[&str]) -> Vec<LineMeta> {
        let table = ElementLineTable::embedded();
        let cal = EnergyCalibration::default();
        let elements: Vec<_> = symbols
            .iter()
            .map(|s| table.element(s).expect("element present in table"))
            .collect();
        build_for_elements(&elements, &table, &cal)
            .expect("dictionary builds for test elements")
            .meta()
            .to_vec()
    }

    fn column(meta: &[LineMeta], symbol: &str, line: &str) -> usize {
        meta.iter()
            .position(|m| m.element.symbol == symbol && m.line.as_str() == line)
            .expect("requested line present in dictionary")
    }

    #[test]
    fn soft_threshold_branches() {
        assert_eq!(prox_l1(5.0, 2.0), 3.0, "above threshold shrinks by lambda");
        assert_eq!(prox_l1(-1.0, 2.0), 0.0, "dead zone maps to zero");
        assert_eq!(prox_l1(-5.0, 2.0), -3.0, "below -lambda grows by lambda");
        assert_eq!(prox_l1(2.0, 2.0), 0.0, "boundary belongs to the dead zone");
        assert_eq!(prox_l1(7.5, 0.0), 7.5, "zero lambda is the identity");
    }

    #[test]
    fn nonneg_projection() {
        assert_eq!(prox_nonneg(5.0), 5.0);
        assert_eq!(prox_nonneg(-3.0), 0.0);
        assert_eq!(prox_nonneg(0.0), 0.0);
    }

    #[test]
    fn k_family_capped_at_half_alpha() {
        let meta = meta_for(&["Cu"]);
        let ka = column(&meta, "Cu", "Ka");
        let kb = column(&meta, "Cu", "Kb");
        let mut amps = vec![0.0; meta.len()];
        amps[ka] = 12.0;
        amps[kb] = 10.0;
        prox_physical(&mut amps, &meta);
        assert_eq!(amps[kb], 6.0, "K-beta capped at half of K-alpha");
        assert_eq!(amps[ka], 12.0, "alpha line itself is unchanged");
    }

    #[test]
    fn l_family_capped_at_alpha() {
        let meta = meta_for(&["Pb"]);
        let la = column(&meta, "Pb", "La");
        let lb = column(&meta, "Pb", "Lb");
        let mut amps = vec![0.0; meta.len()];
        amps[la] = 7.0;
        amps[lb] = 5.0;
        prox_physical(&mut amps, &meta);
        assert_eq!(amps[lb], 5.0, "L-beta below the L-alpha cap stays put");

        amps[lb] = 9.0;
        prox_physical(&mut amps, &meta);
        assert_eq!(amps[lb], 7.0, "L-beta above the cap clamps to L-alpha");
    }

    #[test]
    fn m_lines_and_missing_alpha_families_stay_uncapped() {
        let meta = meta_for(&["Pb"]);
        let rules = cap_rules(&meta);
        let ma = column(&meta, "Pb", "Ma");
        assert_eq!(rules[ma], CapRule::Uncapped, "M lines are never capped");

        // A calibration range holding only Cu K-beta leaves the K family
        // without its alpha cap source.
        let table = ElementLineTable::embedded();
        let cal = EnergyCalibration::with_range(8_500.0, 9_200.0, 512).unwrap();
        let cu = table.element("Cu").unwrap();
        let dict = build_for_elements(&[cu], &table, &cal).unwrap();
        assert_eq!(dict.num_lines(), 1, "only Cu K-beta lies in 8.5-9.2 keV");
        let rules = cap_rules(dict.meta());
        assert_eq!(
            rules[0],
            CapRule::Uncapped,
            "family without its alpha line in the dictionary is uncapped"
        );
    }

    #[test]
    fn caps_are_idempotent_and_never_increase() {
        let meta = meta_for(&["Cu", "Pb"]);
        let mut amps: Vec<f64> = (0..meta.len()).map(|k| 1.0 + 3.0 * k as f64).collect();
        let before = amps.clone();
        prox_physical(&mut amps, &meta);
        for (after, orig) in amps.iter().zip(&before) {
            assert!(after <= orig, "capping never increases an amplitude");
        }
        let once = amps.clone();
        prox_physical(&mut amps, &meta);
        assert_eq!(amps, once, "applying the caps twice equals applying once");
    }

    #[test]
    fn stack_caps_match_per_pixel_caps() {
        let meta = meta_for(&["Cu", "Pb"]);
        let rules = cap_rules(&meta);
        let k = meta.len();
        let pixels = 7;
        let mut stack: Vec<f64> = (0..k * pixels)
            .map(|j| ((j * 37 + 11) % 23) as f64 * 0.5)
            .collect();
        let mut reference = stack.clone();
        prox_physical_stack(&mut stack, pixels, &rules);
        for i in 0..pixels {
            let mut pixel: Vec<f64> = (0..k).map(|kk| reference[kk * pixels + i]).collect();
            prox_physical_with_rules(&mut pixel, &rules);
            for kk in 0..k {
                reference[kk * pixels + i] = pixel[kk];
            }
        }
        assert_eq!(stack, reference, "stack capping equals per-pixel capping");
    }
}
