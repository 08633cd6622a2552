//! Ground-truth scene generation from the forward model Y = S·A.
//!
//! Each preset describes a handful of elements, their line peak amplitudes
//! (in counts), and a spatial mask per element.  The truth maps are the masks
//! scaled per line, the clean cube is the exact forward synthesis with the
//! Gaussian pulse dictionary, and the optional Poisson stage replaces every
//! count with a draw whose mean is the clean value:
//!
//! ```text
//! A_true[k] = peak_k · mask_element(k)      (Kβ = 0.2·Kα by construction,
//!                                            L lines ≤ Lα by construction)
//! Y_clean   = S · A_true
//! Y         = Poisson(Y_clean)              (per-pixel seeded, optional)
//! ```
//!
//! Three presets cover the verification scenarios: `shapes` (four K-line
//! elements on disks and stripes, noiseless), `cu_zn_overlap` (a strong Cu
//! background, a bismuth-white disk whose Lℓ line lands 3.9 channels below
//! Zn Kβ, and faint Zn underdrawing strokes whose Kβ peaks at two counts,
//! Poisson), and `trace_element` (a ten-pixel Pb blob over an Fe background
//! at full 4096-channel resolution, noiseless).
//!
//! Poisson draws use one generator per pixel, seeded from the preset seed and
//! the pixel index, so rendering is reproducible bit-for-bit regardless of
//! how the pixel loop is parallelized.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::calibration::EnergyCalibration;
use crate::cube::{Datacube, PIXEL_CHUNK};
use crate::dict::{build_for_elements, PulseDictionary};
use crate::elements::{Element, ElementLineTable, LineKind};
use crate::error::{Error, Result};
use crate::solver::AmplitudeMaps;

/// Counting-noise model applied to the clean synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// Keep the exact forward model.
    None,
    /// Replace every count with a Poisson draw of that mean.
    Poisson,
}

impl std::str::FromStr for Noise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("none") {
            Ok(Noise::None)
        } else if s.eq_ignore_ascii_case("poisson") {
            Ok(Noise::Poisson)
        } else {
            Err(Error::Config(format!(
                "unknown noise model '{s}', expected 'none' or 'poisson'"
            )))
        }
    }
}

/// Spatial support of one element, evaluated on the H×W grid in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    /// Filled disk of `radius` pixels centered at (cy, cx).
    Disk { cy: usize, cx: usize, radius: usize },
    /// Vertical stripes: columns with `x mod period < duty` are filled.
    Stripes { period: usize, duty: usize },
    /// Axis-aligned filled rectangle.
    Block { y0: usize, x0: usize, h: usize, w: usize },
    /// Smooth strictly positive field peaking at the image center.
    SmoothBackground,
    /// Thin sinusoidal curves two pixels thick, like underdrawing strokes.
    Strokes { count: usize },
}

impl Mask {
    /// Checks that the mask stays within an H×W grid.
    fn validate(&self, height: usize, width: usize) -> Result<()> {
        let ok = match *self {
            Mask::Disk { cy, cx, radius } => {
                cy < height && cx < width && radius >= 1 && radius <= height.max(width)
            }
            Mask::Stripes { period, duty } => period >= 1 && duty >= 1 && duty <= period,
            Mask::Block { y0, x0, h, w } => {
                h >= 1 && w >= 1 && y0 + h <= height && x0 + w <= width
            }
            Mask::SmoothBackground => true,
            Mask::Strokes { count } => count >= 1 && count < height,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "mask {self:?} does not fit a {height}x{width} grid"
            )))
        }
    }

    /// Renders the mask as an H×W row-major field in [0, 1].
    fn render(&self, height: usize, width: usize) -> Vec<f64> {
        let mut field = vec![0.0f64; height * width];
        match *self {
            Mask::Disk { cy, cx, radius } => {
                let r2 = (radius * radius) as f64;
                for y in 0..height {
                    for x in 0..width {
                        let dy = y as f64 - cy as f64;
                        let dx = x as f64 - cx as f64;
                        if dy * dy + dx * dx <= r2 {
                            field[y * width + x] = 1.0;
                        }
                    }
                }
            }
            Mask::Stripes { period, duty } => {
                for y in 0..height {
                    for x in 0..width {
                        if x % period < duty {
                            field[y * width + x] = 1.0;
                        }
                    }
                }
            }
            Mask::Block { y0, x0, h, w } => {
                for y in y0..y0 + h {
                    for x in x0..x0 + w {
                        field[y * width + x] = 1.0;
                    }
                }
            }
            Mask::SmoothBackground => {
                for y in 0..height {
                    for x in 0..width {
                        let sy = if height > 1 {
                            (std::f64::consts::PI * y as f64 / (height - 1) as f64).sin()
                        } else {
                            1.0
                        };
                        let sx = if width > 1 {
                            (std::f64::consts::PI * x as f64 / (width - 1) as f64).sin()
                        } else {
                            1.0
                        };
                        field[y * width + x] = 0.7 + 0.3 * sy * sx;
                    }
                }
            }
            Mask::Strokes { count } => {
                let amplitude = height as f64 / 10.0;
                for s in 0..count {
                    let center = height as f64 * (s + 1) as f64 / (count + 1) as f64;
                    let cycles = 1.0 + (s % 3) as f64;
                    let phase = 1.7 * s as f64;
                    for x in 0..width {
                        let angle =
                            2.0 * std::f64::consts::PI * cycles * x as f64 / width as f64 + phase;
                        let y = (center + amplitude * angle.sin()).round() as i64;
                        for dy in 0..2i64 {
                            let yy = y + dy;
                            if yy >= 0 && (yy as usize) < height {
                                field[yy as usize * width + x] = 1.0;
                            }
                        }
                    }
                }
            }
        }
        field
    }
}

/// One emission line of a recipe element with its peak amplitude in counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineRecipe {
    pub line: LineKind,
    pub peak: f64,
}

/// One element of a scene: its lines and the spatial mask they share.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementRecipe {
    pub symbol: String,
    pub lines: Vec<LineRecipe>,
    pub mask: Mask,
}

/// A complete synthetic scene description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePreset {
    /// Preset name, echoed in reports.
    pub name: String,
    /// Scene height in pixels.
    pub height: usize,
    /// Scene width in pixels.
    pub width: usize,
    /// Energy channels per pixel.
    pub channels: usize,
    /// One entry per element in the scene.
    pub recipe: Vec<ElementRecipe>,
    /// Counting-noise model applied after the clean synthesis.
    pub noise: Noise,
    /// Root seed for the per-pixel generators.
    pub seed: u64,
}

impl ScenePreset {
    /// Four K-line elements on disks and stripes; noiseless.
    pub fn shapes() -> Self {
        Self {
            name: "shapes".into(),
            height: 64,
            width: 64,
            channels: 1024,
            recipe: vec![
                ElementRecipe {
                    symbol: "Mn".into(),
                    lines: vec![
                        LineRecipe { line: LineKind::Ka, peak: 100.0 },
                        LineRecipe { line: LineKind::Kb, peak: 20.0 },
                    ],
                    mask: Mask::Disk { cy: 20, cx: 20, radius: 10 },
                },
                ElementRecipe {
                    symbol: "Fe".into(),
                    lines: vec![
                        LineRecipe { line: LineKind::Ka, peak: 80.0 },
                        LineRecipe { line: LineKind::Kb, peak: 16.0 },
                    ],
                    mask: Mask::Disk { cy: 20, cx: 44, radius: 10 },
                },
                ElementRecipe {
                    symbol: "Cu".into(),
                    lines: vec![
                        LineRecipe { line: LineKind::Ka, peak: 100.0 },
                        LineRecipe { line: LineKind::Kb, peak: 20.0 },
                    ],
                    mask: Mask::Stripes { period: 16, duty: 8 },
                },
                ElementRecipe {
                    symbol: "Zn".into(),
                    lines: vec![
                        LineRecipe { line: LineKind::Ka, peak: 60.0 },
                        LineRecipe { line: LineKind::Kb, peak: 12.0 },
                    ],
                    mask: Mask::Disk { cy: 44, cx: 32, radius: 12 },
                },
            ],
            noise: Noise::None,
            seed: 0,
        }
    }

    /// Strong smooth Cu background, a bismuth-white highlight disk, and
    /// faint Zn underdrawing strokes whose Kβ peaks at two counts; Poisson
    /// counting noise.  At 1024 channels Bi Lℓ (9420 eV) sits 3.9 channels
    /// below Zn Kβ (9572 eV), so the weak stroke signal must be separated
    /// from a thirty-times-stronger overlapping neighbour.  Bi Mα is left
    /// out of the recipe: its energy is indistinguishable from Mo Lβ at this
    /// channel width, which would make an exact detected set unattainable.
    pub fn cu_zn_overlap() -> Self {
        Self {
            name: "cu_zn_overlap".into(),
            height: 64,
            width: 64,
            channels: 1024,
            recipe: vec![
                ElementRecipe {
                    symbol: "Cu".into(),
                    lines: vec![
                        LineRecipe { line: LineKind::Ka, peak: 100.0 },
                        LineRecipe { line: LineKind::Kb, peak: 20.0 },
                    ],
                    mask: Mask::SmoothBackground,
                },
                ElementRecipe {
                    symbol: "Zn".into(),
                    lines: vec![
                        LineRecipe { line: LineKind::Ka, peak: 10.0 },
                        LineRecipe { line: LineKind::Kb, peak: 2.0 },
                    ],
                    mask: Mask::Strokes { count: 4 },
                },
                ElementRecipe {
                    symbol: "Bi".into(),
                    lines: vec![
                        LineRecipe { line: LineKind::Ll, peak: 60.0 },
                        LineRecipe { line: LineKind::La, peak: 100.0 },
                        LineRecipe { line: LineKind::Lb, peak: 60.0 },
                        LineRecipe { line: LineKind::Lg, peak: 20.0 },
                    ],
                    mask: Mask::Disk { cy: 20, cx: 44, radius: 16 },
                },
            ],
            noise: Noise::Poisson,
            seed: 7,
        }
    }

    /// Ten-pixel Pb blob over an Fe background at full channel resolution.
    pub fn trace_element() -> Self {
        Self {
            name: "trace_element".into(),
            height: 64,
            width: 64,
            channels: 4096,
            recipe: vec![
                ElementRecipe {
                    symbol: "Fe".into(),
                    lines: vec![
                        LineRecipe { line: LineKind::Ka, peak: 50.0 },
                        LineRecipe { line: LineKind::Kb, peak: 10.0 },
                    ],
                    mask: Mask::SmoothBackground,
                },
                ElementRecipe {
                    symbol: "Pb".into(),
                    lines: vec![
                        LineRecipe { line: LineKind::Ll, peak: 10.0 },
                        LineRecipe { line: LineKind::La, peak: 100.0 },
                        LineRecipe { line: LineKind::Lb, peak: 80.0 },
                        LineRecipe { line: LineKind::Lg, peak: 40.0 },
                        LineRecipe { line: LineKind::Ma, peak: 30.0 },
                    ],
                    mask: Mask::Block { y0: 31, x0: 30, h: 2, w: 5 },
                },
            ],
            noise: Noise::None,
            seed: 0,
        }
    }

    /// Looks a preset up by its name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "shapes" => Ok(Self::shapes()),
            "cu_zn_overlap" => Ok(Self::cu_zn_overlap()),
            "trace_element" => Ok(Self::trace_element()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}', expected one of shapes, cu_zn_overlap, \
                 trace_element"
            ))),
        }
    }

    /// The energy calibration implied by the channel count (0–40 keV span).
    pub fn calibration(&self) -> Result<EnergyCalibration> {
        EnergyCalibration::with_range(0.0, 40_000.0, self.channels)
    }

    /// Checks dimensions, amplitudes, masks, and element identities.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels < 2 {
            return Err(Error::Config(format!(
                "scene needs spatial extent and at least 2 channels, got \
                 {}x{}x{}",
                self.height, self.width, self.channels
            )));
        }
        if self.recipe.is_empty() {
            return Err(Error::Config("scene recipe holds no elements".into()));
        }
        let table = ElementLineTable::embedded();
        for (idx, entry) in self.recipe.iter().enumerate() {
            let element = table.element(&entry.symbol).ok_or_else(|| {
                Error::Config(format!("unknown element '{}' in recipe", entry.symbol))
            })?;
            if self.recipe[..idx].iter().any(|e| e.symbol == entry.symbol) {
                return Err(Error::Config(format!(
                    "element '{}' appears twice in the recipe",
                    entry.symbol
                )));
            }
            if entry.lines.is_empty() {
                return Err(Error::Config(format!(
                    "element '{}' lists no lines",
                    entry.symbol
                )));
            }
            for lr in &entry.lines {
                if !lr.peak.is_finite() || lr.peak < 0.0 {
                    return Err(Error::Config(format!(
                        "peak amplitude of {} {} must be finite and non-negative, \
                         got {}",
                        entry.symbol,
                        lr.line.as_str(),
                        lr.peak
                    )));
                }
                if table.line(element, lr.line).is_none() {
                    return Err(Error::Config(format!(
                        "element '{}' has no {} line in the table",
                        entry.symbol,
                        lr.line.as_str()
                    )));
                }
            }
            entry.mask.validate(self.height, self.width)?;
        }
        Ok(())
    }
}

/// A rendered scene: the (possibly noisy) cube and its exact truth maps.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cube: Datacube,
    pub truth: AmplitudeMaps,
}

/// Stateless mix of the scene seed and a pixel index into a generator seed.
fn pixel_seed(seed: u64, pixel: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(pixel as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders a preset into a datacube plus its ground-truth amplitude maps.
pub fn render_cube(preset: &ScenePreset) -> Result<SyntheticScene> {
    preset.validate()?;
    let cal = preset.calibration()?;
    let table = ElementLineTable::embedded();
    let elements: Vec<Element> = preset
        .recipe
        .iter()
        .map(|entry| table.element(&entry.symbol).expect("validated above"))
        .collect();
    let dictionary = build_for_elements(&elements, &table, &cal)?;

    let (height, width) = (preset.height, preset.width);
    let pixels = height * width;
    let k = dictionary.num_lines();
    let m = preset.channels;

    // Truth maps: per dictionary column, the element mask scaled by the
    // recipe peak; lines in range but absent from the recipe stay zero.
    let mut truth = vec![0.0f64; k * pixels];
    for (col, meta) in dictionary.meta().iter().enumerate() {
        let entry = preset
            .recipe
            .iter()
            .find(|e| e.symbol == meta.element.symbol)
            .expect("dictionary only holds recipe elements");
        let Some(peak) = entry
            .lines
            .iter()
            .find(|lr| lr.line == meta.line)
            .map(|lr| lr.peak)
        else {
            continue;
        };
        if peak == 0.0 {
            continue;
        }
        let mask = entry.mask.render(height, width);
        for (slot, mv) in truth[col * pixels..(col + 1) * pixels].iter_mut().zip(&mask) {
            *slot = peak * mv;
        }
    }

    // Forward synthesis, pixel-parallel in fixed chunks; the optional Poisson
    // stage draws from a generator seeded by (scene seed, pixel index).
    let atoms = dictionary.atoms().as_slice();
    let noise = preset.noise;
    let seed = preset.seed;
    let truth_ref = &truth;
    let mut counts = vec![0.0f32; pixels * m];
    counts
        .par_chunks_mut(m * PIXEL_CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let base = c * PIXEL_CHUNK;
            let mut clean = vec![0.0f64; m];
            for (local, spectrum) in chunk.chunks_mut(m).enumerate() {
                let i = base + local;
                clean.fill(0.0);
                for kk in 0..k {
                    let amp = truth_ref[kk * pixels + i];
                    if amp == 0.0 {
                        continue;
                    }
                    let column = &atoms[kk * m..(kk + 1) * m];
                    for (cv, sv) in clean.iter_mut().zip(column) {
                        *cv += amp * sv;
                    }
                }
                match noise {
                    Noise::None => {
                        for (slot, cv) in spectrum.iter_mut().zip(&clean) {
                            *slot = *cv as f32;
                        }
                    }
                    Noise::Poisson => {
                        let mut rng = ChaCha8Rng::seed_from_u64(pixel_seed(seed, i));
                        for (slot, cv) in spectrum.iter_mut().zip(&clean) {
                            *slot = if *cv > 0.0 {
                                Poisson::new(*cv)
                                    .expect("positive finite Poisson mean")
                                    .sample(&mut rng) as f32
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        });

    let cube = Datacube::new(counts, height, width, cal)?;
    let truth = AmplitudeMaps::new(truth, height, width, dictionary.meta().to_vec())?;
    Ok(SyntheticScene { cube, truth })
}

/// The dictionary a preset's elements induce, for scoring reconstructions.
pub fn preset_dictionary(preset: &ScenePreset) -> Result<PulseDictionary> {
    preset.validate()?;
    let cal = preset.calibration()?;
    let table = ElementLineTable::embedded();
    let elements: Vec<Element> = preset
        .recipe
        .iter()
        .map(|entry| table.element(&entry.symbol).expect("validated above"))
        .collect();
    build_for_elements(&elements, &table, &cal)
}

/// Pearson correlation between two equally sized, non-constant maps.
pub fn map_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!(
            "correlation needs two equally sized non-empty maps, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0f64;
    let mut var_a = 0.0f64;
    let mut var_b = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let da = x - mean_a;
        let db = y - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::Undefined(
            "correlation of a constant map is undefined".into(),
        ));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}
