//! Constrained factorization of a datacube into per-line amplitude maps.
//!
//! Given the pulse dictionary S ∈ R^{M×K} and the datacube flattened to
//! Y ∈ R^{M×I} (I = H·W pixels), both solvers estimate the non-negative
//! amplitude matrix A ∈ R^{K×I} of the model Y = S·A by minimizing
//!
//! ```text
//! ½‖Y − SA‖²_F + λ‖Dx A‖₁ + λ‖Dy A‖₁ + I₊(A) + P(A)
//! ```
//!
//! where Dx/Dy are per-map spatial differences, I₊ is the non-negativity
//! indicator, and P is the physical constraint capping non-α line amplitudes
//! by their family's α line.  Two iteration schemes are provided:
//!
//! * [`admm_solve`] — inner-loop-free ADMM whose A-update is an exact FFT
//!   solve ([`CirculantSolver`]);
//! * [`fista_solve`] — accelerated proximal gradient on the stacked system
//!   with unknowns (A, Z1, Z2) and a single matrix-free operator apply per
//!   iteration.
//!
//! Row k of the solution reshapes to the H×W distribution map of dictionary
//! line k.  All per-iteration parallelism is elementwise or per-map, and
//! reductions run serially, so results are identical for any thread count.

pub mod admm;
pub mod circulant;
pub mod diff;
pub mod fista;
pub mod power;
pub mod prox;

pub use admm::admm_solve;
pub use circulant::{circulant_solve, CirculantSolver};
pub use fista::fista_solve;
pub use power::power_iteration_norm;
pub use prox::{cap_rules, prox_l1, prox_nonneg, prox_physical, CapRule};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::Datacube;
use crate::dict::{LineMeta, PulseDictionary};
use crate::error::{Error, Result};

/// Elementwise work is split into fixed-size chunks so partial results never
/// depend on the number of worker threads.
pub(crate) const ELEMENT_CHUNK: usize = 4096;

/// Weights, budget, and switches shared by both solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// TV weight λ, in counts units.
    pub lambda: f64,
    /// ADMM penalty weight on the Z1 = Dx·A split.
    pub rho1: f64,
    /// ADMM penalty weight on the Z2 = Dy·A split.
    pub rho2: f64,
    /// ADMM penalty weight on the Z3 = A split.
    pub rho3: f64,
    /// FISTA coupling weight on the data-fit block.
    pub rho: f64,
    /// Iteration budget.
    pub iters: usize,
    /// FISTA Lipschitz estimate (1/step); estimated by power iteration when unset.
    pub alpha: Option<f64>,
    /// Apply the α-line amplitude caps inside the iterations.
    pub physical_constraint: bool,
    /// Record the model MSE after every iteration.
    pub record_mse: bool,
    /// Optional early stop when the relative A-change drops below this value.
    pub rel_change_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            rho1: 1.0,
            rho2: 1.0,
            rho3: 1.0,
            rho: 1.0,
            iters: 50,
            alpha: None,
            physical_constraint: true,
            record_mse: true,
            rel_change_tol: None,
        }
    }
}

impl SolverConfig {
    /// Checks every invariant; both solvers call this before iterating.
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda", self.lambda),
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("rho3", self.rho3),
            ("rho", self.rho),
        ];
        for (name, value) in weights {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {value}"
                )));
            }
        }
        if self.iters == 0 {
            return Err(Error::Config("iteration budget must be at least 1".into()));
        }
        if let Some(alpha) = self.alpha {
            if !alpha.is_finite() || alpha <= 0.0 {
                return Err(Error::Config(format!(
                    "alpha must be finite and positive, got {alpha}"
                )));
            }
        }
        if let Some(tol) = self.rel_change_tol {
            if !tol.is_finite() || tol <= 0.0 {
                return Err(Error::Config(format!(
                    "relative-change tolerance must be finite and positive, got {tol}"
                )));
            }
        }
        Ok(())
    }
}

/// Which iteration scheme to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Inner-loop-free ADMM with the FFT A-update.
    Admm,
    /// Accelerated proximal gradient on the stacked system.
    Fista,
}

impl Solver {
    /// Runs the selected scheme.
    pub fn solve(
        self,
        cube: &Datacube,
        dictionary: &PulseDictionary,
        config: &SolverConfig,
    ) -> Result<(AmplitudeMaps, SolveTrace)> {
        match self {
            Solver::Admm => admm_solve(cube, dictionary, config),
            Solver::Fista => fista_solve(cube, dictionary, config),
        }
    }
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Solver::Admm => write!(f, "admm"),
            Solver::Fista => write!(f, "fista"),
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("admm") {
            Ok(Solver::Admm)
        } else if s.eq_ignore_ascii_case("fista") {
            Ok(Solver::Fista)
        } else {
            Err(Error::Config(format!(
                "unknown solver '{s}', expected 'admm' or 'fista'"
            )))
        }
    }
}

/// Per-iteration convergence record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveTrace {
    /// Model MSE after each iteration; empty when recording was disabled.
    pub mse: Vec<f64>,
    /// Wall time of each iteration in milliseconds.
    pub wall_ms: Vec<f64>,
}

impl SolveTrace {
    /// Number of iterations actually run.
    pub fn iterations(&self) -> usize {
        self.wall_ms.len()
    }

    /// MSE after the last iteration, when recorded.
    pub fn final_mse(&self) -> Option<f64> {
        self.mse.last().copied()
    }

    /// Total wall time across all iterations in milliseconds.
    pub fn total_wall_ms(&self) -> f64 {
        self.wall_ms.iter().sum()
    }

    /// Renders the trace as `iteration,mse,wall_ms` CSV text.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mse,wall_ms\n");
        for (idx, wall) in self.wall_ms.iter().enumerate() {
            let mse = self
                .mse
                .get(idx)
                .map(|v| v.to_string())
                .unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", idx + 1, mse, wall));
        }
        out
    }
}

/// Estimated amplitudes: one H×W map per dictionary line.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeMaps {
    /// Map-major values: `data[k·(H·W) + h·W + w]`.
    data: Vec<f64>,
    height: usize,
    width: usize,
    meta: Vec<LineMeta>,
}

impl AmplitudeMaps {
    /// Wraps a map-major value stack after checking the dimensions.
    pub fn new(
        data: Vec<f64>,
        height: usize,
        width: usize,
        meta: Vec<LineMeta>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || meta.is_empty() {
            return Err(Error::Dimension(format!(
                "amplitude maps need spatial extent and at least one line, got \
                 {height}x{width} with {} lines",
                meta.len()
            )));
        }
        let expect = meta.len() * height * width;
        if data.len() != expect {
            return Err(Error::Dimension(format!(
                "amplitude stack holds {} values but {} lines of {height}x{width} \
                 need {expect}",
                data.len(),
                meta.len()
            )));
        }
        Ok(Self {
            data,
            height,
            width,
            meta,
        })
    }

    /// Map height in pixels.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Map width in pixels.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixels per map.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Number of element-line maps.
    pub fn num_lines(&self) -> usize {
        self.meta.len()
    }

    /// Dictionary metadata for each map, in map order.
    pub fn meta(&self) -> &[LineMeta] {
        &self.meta
    }

    /// Whole map-major value stack.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The H×W map of line `k`, row-major.
    pub fn map(&self, k: usize) -> &[f64] {
        let pixels = self.pixels();
        &self.data[k * pixels..(k + 1) * pixels]
    }

    /// Single amplitude of line `k` at pixel (h, w).
    pub fn value(&self, k: usize, h: usize, w: usize) -> f64 {
        self.data[k * self.pixels() + h * self.width + w]
    }

    /// Index of the map whose line metadata satisfies the predicate.
    pub fn find_map<F>(&self, predicate: F) -> Option<usize>
    where
        F: Fn(&LineMeta) -> bool,
    {
        self.meta.iter().position(predicate)
    }
}

/// Mean squared error between the model S·A and the datacube Y.
pub fn mse(cube: &Datacube, dictionary: &PulseDictionary, maps: &AmplitudeMaps) -> Result<f64> {
    if dictionary.channels() != cube.channels() {
        return Err(Error::Dimension(format!(
            "dictionary spans {} channels but the cube has {}",
            dictionary.channels(),
            cube.channels()
        )));
    }
    if maps.num_lines() != dictionary.num_lines() {
        return Err(Error::Dimension(format!(
            "{} amplitude maps for a dictionary of {} lines",
            maps.num_lines(),
            dictionary.num_lines()
        )));
    }
    if maps.height() != cube.height() || maps.width() != cube.width() {
        return Err(Error::Dimension(format!(
            "maps are {}x{} but the cube is {}x{}",
            maps.height(),
            maps.width(),
            cube.height(),
            cube.width()
        )));
    }
    let m = cube.channels();
    let k = dictionary.num_lines();
    let pixels = cube.pixels();
    let atoms = dictionary.atoms().as_slice();
    let a = maps.data();

    // Fixed chunking: each chunk's partial sum is computed independently and
    // the totals are combined serially, so the result is thread-count stable.
    let chunk = crate::cube::PIXEL_CHUNK;
    let partials: Vec<f64> = (0..pixels.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(pixels);
            let mut model = vec![0.0f64; m];
            let mut acc = 0.0f64;
            for i in lo..hi {
                model.fill(0.0);
                for kk in 0..k {
                    let amp = a[kk * pixels + i];
                    if amp == 0.0 {
                        continue;
                    }
                    let column = &atoms[kk * m..(kk + 1) * m];
                    for (mv, sv) in model.iter_mut().zip(column) {
                        *mv += amp * sv;
                    }
                }
                let observed = cube.pixel_spectrum(i);
                for (mv, ov) in model.iter().zip(observed) {
                    let r = f64::from(*ov) - mv;
                    acc += r * r;
                }
            }
            acc
        })
        .collect();
    Ok(partials.iter().sum::<f64>() / (m * pixels) as f64)
}

/// Precomputed quantities shared by every iteration of either solver.
pub(crate) struct Problem {
    /// Number of dictionary lines K.
    pub maps: usize,
    /// Number of pixels I = H·W.
    pub pixels: usize,
    pub height: usize,
    pub width: usize,
    /// Number of spectral channels M.
    pub channels: usize,
    /// SᵀY, map-major K×I.
    pub st_y: Vec<f64>,
    /// SᵀS, row-major K×K.
    pub st_s: Vec<f64>,
    /// ‖Y‖²_F.
    pub y_norm_sq: f64,
    /// Squared spectral norm ‖S‖² (power iteration on SᵀS).
    pub s_norm_sq: f64,
    /// Physical-cap rule per dictionary column.
    pub caps: Vec<CapRule>,
}

impl Problem {
    pub fn new(cube: &Datacube, dictionary: &PulseDictionary) -> Result<Self> {
        if dictionary.channels() != cube.channels() {
            return Err(Error::Dimension(format!(
                "dictionary spans {} channels but the cube has {}",
                dictionary.channels(),
                cube.channels()
            )));
        }
        let m = cube.channels();
        let k = dictionary.num_lines();
        let pixels = cube.pixels();
        let atoms = dictionary.atoms().as_slice();

        // SᵀY, computed pixel-major first so each parallel chunk owns a
        // contiguous output range, then transposed to the map-major layout.
        let mut pixel_major = vec![0.0f64; pixels * k];
        pixel_major
            .par_chunks_mut(k * crate::cube::PIXEL_CHUNK)
            .enumerate()
            .for_each(|(c, rows)| {
                let base = c * crate::cube::PIXEL_CHUNK;
                for (local, row) in rows.chunks_mut(k).enumerate() {
                    let spectrum = cube.pixel_spectrum(base + local);
                    for (kk, value) in row.iter_mut().enumerate() {
                        let column = &atoms[kk * m..(kk + 1) * m];
                        let mut acc = 0.0f64;
                        for (sv, yv) in column.iter().zip(spectrum) {
                            acc += sv * f64::from(*yv);
                        }
                        *value = acc;
                    }
                }
            });
        let mut st_y = vec![0.0f64; k * pixels];
        for i in 0..pixels {
            for kk in 0..k {
                st_y[kk * pixels + i] = pixel_major[i * k + kk];
            }
        }

        // SᵀS is K×K and symmetric; a serial triple loop is plenty.
        let mut st_s = vec![0.0f64; k * k];
        for p in 0..k {
            let cp = &atoms[p * m..(p + 1) * m];
            for q in p..k {
                let cq = &atoms[q * m..(q + 1) * m];
                let v: f64 = cp.iter().zip(cq).map(|(a, b)| a * b).sum();
                st_s[p * k + q] = v;
                st_s[q * k + p] = v;
            }
        }

        let y_norm_sq = {
            let chunk = crate::cube::PIXEL_CHUNK;
            let counts = cube.counts();
            let per_pixel = m;
            let partials: Vec<f64> = (0..pixels.div_ceil(chunk))
                .into_par_iter()
                .map(|c| {
                    let lo = c * chunk * per_pixel;
                    let hi = ((c + 1) * chunk * per_pixel).min(counts.len());
                    counts[lo..hi]
                        .iter()
                        .map(|v| {
                            let x = f64::from(*v);
                            x * x
                        })
                        .sum()
                })
                .collect();
            partials.iter().sum()
        };

        let s_norm = power_iteration_norm(k, |x, out| {
            for (p, o) in out.iter_mut().enumerate() {
                let row = &st_s[p * k..(p + 1) * k];
                *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        });

        Ok(Self {
            maps: k,
            pixels,
            height: cube.height(),
            width: cube.width(),
            channels: m,
            st_y,
            st_s,
            y_norm_sq,
            s_norm_sq: s_norm * s_norm,
            caps: cap_rules(dictionary.meta()),
        })
    }

    /// out = SᵀS · a for a map-major K×I stack; parallel over output rows.
    pub fn sts_apply(&self, a: &[f64], out: &mut [f64]) {
        let (k, pixels) = (self.maps, self.pixels);
        assert_eq!(a.len(), k * pixels, "input stack must be K x I");
        assert_eq!(out.len(), k * pixels, "output stack must be K x I");
        out.par_chunks_mut(pixels).enumerate().for_each(|(p, row)| {
            row.fill(0.0);
            for q in 0..k {
                let weight = self.st_s[p * k + q];
                if weight == 0.0 {
                    continue;
                }
                let src = &a[q * pixels..(q + 1) * pixels];
                for (r, s) in row.iter_mut().zip(src) {
                    *r += weight * s;
                }
            }
        });
    }

    /// MSE of the model S·a against Y via the expanded quadratic
    /// ‖Y‖² − 2⟨a, SᵀY⟩ + ⟨a, SᵀS·a⟩, using a precomputed SᵀS·a.
    pub fn mse_identity(&self, a: &[f64], sts_a: &[f64]) -> f64 {
        let cross = serial_dot(a, &self.st_y);
        let quad = serial_dot(a, sts_a);
        let total = self.y_norm_sq - 2.0 * cross + quad;
        total.max(0.0) / (self.channels * self.pixels) as f64
    }
}

/// Writes `out[j] = f(j)` in parallel over fixed chunks.
///
/// Every element is computed independently, so the result is identical for
/// any thread count.
pub(crate) fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    out.par_chunks_mut(ELEMENT_CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let base = c * ELEMENT_CHUNK;
            for (j, slot) in chunk.iter_mut().enumerate() {
                *slot = f(base + j);
            }
        });
}

/// Updates `buf[j] = f(j, buf[j])` in parallel over fixed chunks.
pub(crate) fn update_indexed<F>(buf: &mut [f64], f: F)
where
    F: Fn(usize, f64) -> f64 + Sync,
{
    buf.par_chunks_mut(ELEMENT_CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let base = c * ELEMENT_CHUNK;
            for (j, slot) in chunk.iter_mut().enumerate() {
                *slot = f(base + j, *slot);
            }
        });
}

/// Serial dot product: the reduction order never depends on thread count.
pub(crate) fn serial_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len(), "dot product needs equal lengths");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Serial squared Euclidean norm.
pub(crate) fn serial_norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Relative Frobenius change ‖new − old‖ / max(‖old‖, ε) for early stopping.
pub(crate) fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    debug_assert_eq!(new.len(), old.len());
    let mut diff = 0.0f64;
    for (n, o) in new.iter().zip(old) {
        let d = n - o;
        diff += d * d;
    }
    let base = serial_norm_sq(old).sqrt();
    diff.sqrt() / base.max(f64::MIN_POSITIVE.sqrt())
}

/// True when every value in the stack is finite.
pub(crate) fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::EnergyCalibration;
    use crate::dict::build_for_elements;
    use crate::elements::ElementLineTable;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Small two-line Cu dictionary on a 256-channel range.
    fn small_dictionary() -> (EnergyCalibration, PulseDictionary) {
        let cal = EnergyCalibration::with_range(7_000.0, 10_000.0, 256).unwrap();
        let table = ElementLineTable::embedded();
        let cu = table.element("Cu").unwrap();
        let dict = build_for_elements(&[cu], &table, &cal).unwrap();
        (cal, dict)
    }

    /// Renders Y = S·A (+offset) into a datacube for oracle tests.
    fn render(
        dict: &PulseDictionary,
        cal: &EnergyCalibration,
        a: &[f64],
        h: usize,
        w: usize,
        extra: impl Fn(usize, usize) -> f64,
    ) -> Datacube {
        let m = cal.channels;
        let k = dict.num_lines();
        let pixels = h * w;
        let atoms = dict.atoms().as_slice();
        let mut counts = vec![0.0f32; pixels * m];
        for i in 0..pixels {
            for n in 0..m {
                let mut v = 0.0f64;
                for kk in 0..k {
                    v += atoms[kk * m + n] * a[kk * pixels + i];
                }
                counts[i * m + n] = (v + extra(i, n)) as f32;
            }
        }
        Datacube::new(counts, h, w, *cal).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = SolverConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.lambda, 0.1);
        assert_eq!((cfg.rho1, cfg.rho2, cfg.rho3, cfg.rho), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(cfg.iters, 50);
        assert!(cfg.alpha.is_none());
        assert!(cfg.physical_constraint);
        assert!(cfg.record_mse);
        assert!(cfg.rel_change_tol.is_none());
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = SolverConfig::default();
        cfg.lambda = -0.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = SolverConfig::default();
        cfg.iters = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = SolverConfig::default();
        cfg.alpha = Some(0.0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = SolverConfig::default();
        cfg.rho2 = f64::NAN;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn solver_names_round_trip() {
        assert_eq!("admm".parse::<Solver>().unwrap(), Solver::Admm);
        assert_eq!("FISTA".parse::<Solver>().unwrap(), Solver::Fista);
        assert!("sgd".parse::<Solver>().is_err());
        assert_eq!(Solver::Admm.to_string(), "admm");
        assert_eq!(Solver::Fista.to_string(), "fista");
    }

    #[test]
    fn trace_csv_layout() {
        let trace = SolveTrace {
            mse: vec![2.0, 1.0],
            wall_ms: vec![10.5, 11.0],
        };
        assert_eq!(trace.iterations(), 2);
        assert_eq!(trace.final_mse(), Some(1.0));
        assert_eq!(trace.total_wall_ms(), 21.5);
        assert_eq!(trace.to_csv(), "iteration,mse,wall_ms\n1,2,10.5\n2,1,11\n");

        let bare = SolveTrace {
            mse: vec![],
            wall_ms: vec![3.0],
        };
        assert_eq!(bare.to_csv(), "iteration,mse,wall_ms\n1,,3\n");
        assert_eq!(bare.final_mse(), None);
    }

    #[test]
    fn amplitude_maps_accessors() {
        let (_, dict) = small_dictionary();
        let meta = dict.meta().to_vec();
        let (h, w) = (2, 3);
        let data: Vec<f64> = (0..meta.len() * h * w).map(|v| v as f64).collect();
        let maps = AmplitudeMaps::new(data, h, w, meta).unwrap();
        assert_eq!(maps.num_lines(), 2);
        assert_eq!(maps.pixels(), 6);
        assert_eq!(maps.map(1)[0], 6.0);
        assert_eq!(maps.value(1, 1, 2), 11.0);
        assert!(maps
            .find_map(|m| m.line.as_str() == "Kb")
            .is_some());

        let bad = AmplitudeMaps::new(vec![0.0; 5], 2, 3, maps.meta().to_vec());
        assert!(matches!(bad, Err(Error::Dimension(_))));
    }

    #[test]
    fn mse_of_exact_model_is_zero() {
        let (cal, dict) = small_dictionary();
        let (h, w) = (3, 4);
        let a: Vec<f64> = (0..dict.num_lines() * h * w)
            .map(|v| (v % 7) as f64 * 0.5)
            .collect();
        let cube = render(&dict, &cal, &a, h, w, |_, _| 0.0);
        let maps = AmplitudeMaps::new(a, h, w, dict.meta().to_vec()).unwrap();
        let value = mse(&cube, &dict, &maps).unwrap();
        // Counts are stored as f32, so "zero" means f32 rounding only.
        assert!(value < 1e-9, "exact model must give (near) zero MSE, got {value}");
    }

    #[test]
    fn mse_of_offset_model_is_mean_squared_offset() {
        let (cal, dict) = small_dictionary();
        let (h, w) = (2, 2);
        let a = vec![1.0; dict.num_lines() * h * w];
        let cube = render(&dict, &cal, &a, h, w, |_, _| 0.25);
        let maps = AmplitudeMaps::new(a, h, w, dict.meta().to_vec()).unwrap();
        let value = mse(&cube, &dict, &maps).unwrap();
        assert!(
            (value - 0.0625).abs() < 1e-9,
            "constant residual 0.25 gives MSE 0.0625, got {value}"
        );
    }

    #[test]
    fn mse_matches_double_loop_oracle() {
        let (cal, dict) = small_dictionary();
        let (h, w) = (3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let a: Vec<f64> = (0..dict.num_lines() * h * w)
            .map(|_| rng.random_range(0.0..4.0))
            .collect();
        let cube = render(&dict, &cal, &a, h, w, |i, n| {
            ((i * 31 + n * 7) % 11) as f64 * 0.1
        });
        let guess: Vec<f64> = (0..a.len()).map(|_| rng.random_range(0.0..4.0)).collect();
        let maps = AmplitudeMaps::new(guess.clone(), h, w, dict.meta().to_vec()).unwrap();
        let fast = mse(&cube, &dict, &maps).unwrap();

        // Brute-force double loop over every channel of every pixel.
        let m = cal.channels;
        let atoms = dict.atoms().as_slice();
        let pixels = h * w;
        let mut acc = 0.0f64;
        for i in 0..pixels {
            let observed = cube.pixel_spectrum(i);
            for n in 0..m {
                let mut model = 0.0f64;
                for kk in 0..dict.num_lines() {
                    model += atoms[kk * m + n] * guess[kk * pixels + i];
                }
                let r = f64::from(observed[n]) - model;
                acc += r * r;
            }
        }
        let oracle = acc / (m * pixels) as f64;
        assert!(
            (fast - oracle).abs() < 1e-10,
            "chunked MSE {fast} differs from double-loop oracle {oracle}"
        );
    }

    #[test]
    fn mse_rejects_mismatched_shapes() {
        let (cal, dict) = small_dictionary();
        let a = vec![0.0; dict.num_lines() * 4];
        let maps = AmplitudeMaps::new(a, 2, 2, dict.meta().to_vec()).unwrap();
        let other_cal = EnergyCalibration::with_range(7_000.0, 10_000.0, 128).unwrap();
        let cube = Datacube::new(vec![0.0; 4 * 128], 2, 2, other_cal).unwrap();
        assert!(matches!(mse(&cube, &dict, &maps), Err(Error::Dimension(_))));

        let cube = Datacube::new(vec![0.0; 6 * 256], 2, 3, cal).unwrap();
        assert!(matches!(mse(&cube, &dict, &maps), Err(Error::Dimension(_))));
    }

    #[test]
    fn problem_identity_matches_direct_mse() {
        let (cal, dict) = small_dictionary();
        let (h, w) = (4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let truth: Vec<f64> = (0..dict.num_lines() * h * w)
            .map(|_| rng.random_range(0.0..3.0))
            .collect();
        let cube = render(&dict, &cal, &truth, h, w, |i, _| (i % 3) as f64 * 0.2);
        let prob = Problem::new(&cube, &dict).unwrap();

        let a: Vec<f64> = (0..truth.len()).map(|_| rng.random_range(0.0..3.0)).collect();
        let mut sts_a = vec![0.0; a.len()];
        prob.sts_apply(&a, &mut sts_a);
        let fast = prob.mse_identity(&a, &sts_a);

        let maps = AmplitudeMaps::new(a, h, w, dict.meta().to_vec()).unwrap();
        let direct = mse(&cube, &dict, &maps).unwrap();
        assert!(
            (fast - direct).abs() < 1e-9 * direct.max(1.0),
            "identity MSE {fast} differs from direct MSE {direct}"
        );
    }

    #[test]
    fn problem_spectral_norm_matches_dense_oracle() {
        let (cal, dict) = small_dictionary();
        let cube = Datacube::new(vec![0.0; 4 * cal.channels], 2, 2, cal).unwrap();
        let prob = Problem::new(&cube, &dict).unwrap();
        let oracle = dict.atoms().clone().svd(false, false).singular_values[0];
        // The two Cu columns barely overlap, so the Gram spectrum is nearly
        // degenerate and the fixed stopping rule leaves a small shortfall;
        // the Rayleigh quotient itself can never overshoot.
        assert!(
            prob.s_norm_sq <= oracle * oracle * (1.0 + 1e-9),
            "estimate {} exceeds dense SVD {}",
            prob.s_norm_sq,
            oracle * oracle
        );
        assert!(
            prob.s_norm_sq >= oracle * oracle * (1.0 - 1e-4),
            "power iteration {} vs dense SVD {}",
            prob.s_norm_sq,
            oracle * oracle
        );
    }

    #[test]
    fn problem_rejects_channel_mismatch() {
        let (_, dict) = small_dictionary();
        let other_cal = EnergyCalibration::with_range(7_000.0, 10_000.0, 128).unwrap();
        let cube = Datacube::new(vec![0.0; 128], 1, 1, other_cal).unwrap();
        assert!(matches!(Problem::new(&cube, &dict), Err(Error::Dimension(_))));
    }

    #[test]
    fn relative_change_reports_frobenius_ratio() {
        let old = vec![3.0, 4.0];
        let new = vec![3.0, 4.5];
        let change = relative_change(&new, &old);
        assert!((change - 0.1).abs() < 1e-12, "0.5/5.0 = 0.1, got {change}");
    }
}
