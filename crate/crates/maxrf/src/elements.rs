//! Chemical elements and their characteristic X-ray emission lines.
//!
//! The embedded table covers the elements commonly reported in macro X-ray
//! fluorescence scans of paintings: light matrix elements (Mg–Ca), the first
//! transition row (Ti–Zn), heavier K emitters (As–Ba, with L lines where they
//! fall in range), and the high-Z pigment metals (W–Bi) via their L and M
//! lines. Energies are tabulated emission values in eV; where a line is an
//! unresolved doublet the intensity-weighted mean is used (for Kα,
//! (2·Kα1 + Kα2)/3).
//!
//! Lines are grouped into families by the shell the vacancy sits in:
//!
//! ```text
//! K family: Kα, Kβ        (α line: Kα)
//! L family: Ll, Lα, Lβ, Lγ (α line: Lα)
//! M family: Mα             (α line: Mα)
//! ```
//!
//! Within a family the α line is the most intense; the physical-consistency
//! constraint used by the solvers caps sibling lines relative to it.

use crate::calibration::EnergyCalibration;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Shell family a line belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    K,
    L,
    M,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::K => write!(f, "K"),
            Family::L => write!(f, "L"),
            Family::M => write!(f, "M"),
        }
    }
}

/// A specific emission line within a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LineKind {
    Ka,
    Kb,
    Ll,
    La,
    Lb,
    Lg,
    Ma,
}

impl LineKind {
    /// Family this line belongs to.
    pub fn family(self) -> Family {
        match self {
            LineKind::Ka | LineKind::Kb => Family::K,
            LineKind::Ll | LineKind::La | LineKind::Lb | LineKind::Lg => Family::L,
            LineKind::Ma => Family::M,
        }
    }

    /// True for the principal (most intense) line of its family.
    pub fn is_alpha(self) -> bool {
        matches!(self, LineKind::Ka | LineKind::La | LineKind::Ma)
    }

    /// ASCII name used in filenames and reports.
    pub fn as_str(self) -> &'static str {
        match self {
            LineKind::Ka => "Ka",
            LineKind::Kb => "Kb",
            LineKind::Ll => "Ll",
            LineKind::La => "La",
            LineKind::Lb => "Lb",
            LineKind::Lg => "Lg",
            LineKind::Ma => "Ma",
        }
    }
}

impl fmt::Display for LineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One element's identity: atomic number and symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element {
    /// Atomic number Z.
    pub z: u8,
    /// Chemical symbol, e.g. "Fe".
    pub symbol: &'static str,
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol)
    }
}

// Elements serialize as their symbol and deserialize by looking the symbol
// up in the embedded table, which owns the static strings.
impl Serialize for Element {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.symbol)
    }
}

impl<'de> Deserialize<'de> for Element {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let symbol = String::deserialize(deserializer)?;
        TABLE
            .iter()
            .find(|(_, s, _)| **s == *symbol)
            .map(|(z, s, _)| Element { z: *z, symbol: s })
            .ok_or_else(|| {
                serde::de::Error::custom(format!("unknown element symbol '{symbol}'"))
            })
    }
}

/// One characteristic emission line of one element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementLine {
    /// The emitting element.
    pub element: Element,
    /// Which line this is.
    pub line: LineKind,
    /// Tabulated emission energy in eV.
    pub energy_ev: f64,
}

impl ElementLine {
    /// Shell family of the line.
    pub fn family(&self) -> Family {
        self.line.family()
    }

    /// True for the principal line of its family.
    pub fn is_alpha(&self) -> bool {
        self.line.is_alpha()
    }
}

/// Table row for one element: (Z, symbol, lines as (kind, energy eV)).
type Row = (u8, &'static str, &'static [(LineKind, f64)]);

use LineKind::{Ka, Kb, La, Lb, Lg, Ll, Ma};

/// Embedded emission energies in eV. Kα entries are intensity-weighted
/// doublet means, (2·Kα1 + Kα2)/3; Kβ is Kβ1; L and M entries are the
/// principal component of each line (Lα1, Lβ1, Lγ1, Ll, Mα1).
const TABLE: &[Row] = &[
    (12, "Mg", &[(Ka, 1_253.60), (Kb, 1_302.20)]),
    (13, "Al", &[(Ka, 1_486.56), (Kb, 1_557.45)]),
    (14, "Si", &[(Ka, 1_739.78), (Kb, 1_835.94)]),
    (15, "P", &[(Ka, 2_013.37), (Kb, 2_139.10)]),
    (16, "S", &[(Ka, 2_307.44), (Kb, 2_464.04)]),
    (17, "Cl", &[(Ka, 2_621.85), (Kb, 2_815.60)]),
    (19, "K", &[(Ka, 3_312.90), (Kb, 3_589.60)]),
    (20, "Ca", &[(Ka, 3_690.48), (Kb, 4_012.70)]),
    (22, "Ti", &[(Ka, 4_508.85), (Kb, 4_931.81)]),
    (23, "V", &[(Ka, 4_949.68), (Kb, 5_427.29)]),
    (24, "Cr", &[(Ka, 5_411.65), (Kb, 5_946.71)]),
    (25, "Mn", &[(Ka, 5_895.05), (Kb, 6_490.45)]),
    (26, "Fe", &[(Ka, 6_399.51), (Kb, 7_057.98)]),
    (27, "Co", &[(Ka, 6_925.31), (Kb, 7_649.43)]),
    (28, "Ni", &[(Ka, 7_472.40), (Kb, 8_264.66)]),
    (29, "Cu", &[(Ka, 8_041.13), (Kb, 8_905.29)]),
    (30, "Zn", &[(Ka, 8_631.17), (Kb, 9_572.00)]),
    (33, "As", &[(Ka, 10_531.81), (Kb, 11_726.20)]),
    (34, "Se", &[(Ka, 11_208.73), (Kb, 12_495.90)]),
    (35, "Br", &[(Ka, 11_908.67), (Kb, 13_291.40)]),
    (
        38,
        "Sr",
        &[
            (Ka, 14_142.63),
            (Kb, 15_835.70),
            (Ll, 1_582.30),
            (La, 1_806.56),
            (Lb, 1_871.72),
            (Lg, 2_196.40),
        ],
    ),
    (
        40,
        "Zr",
        &[
            (Ka, 15_747.03),
            (Kb, 17_667.80),
            (Ll, 1_792.00),
            (La, 2_042.36),
            (Lb, 2_124.40),
            (Lg, 2_503.40),
        ],
    ),
    (
        42,
        "Mo",
        &[
            (Ka, 17_444.33),
            (Kb, 19_608.30),
            (Ll, 1_952.90),
            (La, 2_293.16),
            (Lb, 2_394.81),
            (Lg, 2_831.00),
        ],
    ),
    (
        45,
        "Rh",
        &[
            (Ka, 20_168.63),
            (Kb, 22_723.60),
            (Ll, 2_376.50),
            (La, 2_696.74),
            (Lb, 2_834.41),
            (Lg, 3_364.00),
        ],
    ),
    (
        47,
        "Ag",
        &[
            (Ka, 22_105.38),
            (Kb, 24_942.40),
            (Ll, 2_633.70),
            (La, 2_984.31),
            (Lb, 3_150.94),
            (Lg, 3_749.76),
        ],
    ),
    (
        48,
        "Cd",
        &[
            (Ka, 23_110.43),
            (Kb, 26_095.50),
            (Ll, 2_767.40),
            (La, 3_133.73),
            (Lb, 3_316.57),
            (Lg, 3_951.60),
        ],
    ),
    (
        50,
        "Sn",
        &[
            (Ka, 25_195.53),
            (Kb, 28_486.00),
            (Ll, 3_045.00),
            (La, 3_443.98),
            (Lb, 3_662.80),
            (Lg, 4_376.10),
        ],
    ),
    (
        51,
        "Sb",
        &[
            (Ka, 26_276.33),
            (Kb, 29_725.60),
            (Ll, 3_188.60),
            (La, 3_604.72),
            (Lb, 3_843.57),
            (Lg, 4_600.50),
        ],
    ),
    (
        56,
        "Ba",
        &[
            (Ka, 32_068.10),
            (Kb, 36_378.20),
            (Ll, 3_954.10),
            (La, 4_466.26),
            (Lb, 4_827.53),
            (Lg, 5_810.70),
        ],
    ),
    (
        74,
        "W",
        &[
            (Ll, 7_387.80),
            (La, 8_397.60),
            (Lb, 9_672.35),
            (Lg, 11_285.90),
            (Ma, 1_775.40),
        ],
    ),
    (
        79,
        "Au",
        &[
            (Ll, 8_493.90),
            (La, 9_713.30),
            (Lb, 11_442.30),
            (Lg, 13_381.70),
            (Ma, 2_122.90),
        ],
    ),
    (
        80,
        "Hg",
        &[
            (Ll, 8_721.00),
            (La, 9_988.80),
            (Lb, 11_822.60),
            (Lg, 13_830.10),
            (Ma, 2_195.30),
        ],
    ),
    (
        82,
        "Pb",
        &[
            (Ll, 9_184.50),
            (La, 10_551.50),
            (Lb, 12_613.70),
            (Lg, 14_764.40),
            (Ma, 2_345.50),
        ],
    ),
    (
        83,
        "Bi",
        &[
            (Ll, 9_420.40),
            (La, 10_838.80),
            (Lb, 13_023.50),
            (Lg, 15_247.70),
            (Ma, 2_422.60),
        ],
    ),
];

/// The full table of candidate emission lines, sorted by energy.
#[derive(Debug, Clone)]
pub struct ElementLineTable {
    lines: Vec<ElementLine>,
}

impl ElementLineTable {
    /// The embedded table of all known lines, sorted ascending by energy.
    pub fn embedded() -> Self {
        let mut lines = Vec::new();
        for (z, symbol, rows) in TABLE {
            for (kind, energy) in *rows {
                lines.push(ElementLine {
                    element: Element { z: *z, symbol },
                    line: *kind,
                    energy_ev: *energy,
                });
            }
        }
        lines.sort_by(|a, b| a.energy_ev.total_cmp(&b.energy_ev));
        Self { lines }
    }

    /// A table holding only lines whose energy falls inside the calibrated
    /// range, sorted ascending by energy.
    pub fn in_range(&self, cal: &EnergyCalibration) -> Self {
        Self {
            lines: self
                .lines
                .iter()
                .filter(|l| l.energy_ev >= cal.energy_min && l.energy_ev <= cal.energy_max)
                .copied()
                .collect(),
        }
    }

    /// A table restricted to the given element symbols (case-sensitive),
    /// preserving energy order. Unknown symbols are simply absent from the
    /// result; callers that care should check [`Self::element`] first.
    pub fn for_symbols(&self, symbols: &[&str]) -> Self {
        Self {
            lines: self
                .lines
                .iter()
                .filter(|l| symbols.contains(&l.element.symbol))
                .copied()
                .collect(),
        }
    }

    /// All lines, ascending by energy.
    pub fn lines(&self) -> &[ElementLine] {
        &self.lines
    }

    /// Number of lines.
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    /// True when the table holds no lines.
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Distinct elements present, ascending by atomic number.
    pub fn elements(&self) -> Vec<Element> {
        let mut els: Vec<Element> = self.lines.iter().map(|l| l.element).collect();
        els.sort();
        els.dedup();
        els
    }

    /// Look up an element by symbol.
    pub fn element(&self, symbol: &str) -> Option<Element> {
        self.lines
            .iter()
            .map(|l| l.element)
            .find(|e| e.symbol == symbol)
    }

    /// All lines of one element, ascending by energy.
    pub fn lines_of(&self, element: Element) -> Vec<ElementLine> {
        self.lines
            .iter()
            .filter(|l| l.element == element)
            .copied()
            .collect()
    }

    /// Lines of one family of one element, ascending by energy.
    pub fn family_lines(&self, element: Element, family: Family) -> Vec<ElementLine> {
        self.lines
            .iter()
            .filter(|l| l.element == element && l.family() == family)
            .copied()
            .collect()
    }

    /// A specific line of an element, if tabulated.
    pub fn line(&self, element: Element, kind: LineKind) -> Option<ElementLine> {
        self.lines
            .iter()
            .find(|l| l.element == element && l.line == kind)
            .copied()
    }
}
