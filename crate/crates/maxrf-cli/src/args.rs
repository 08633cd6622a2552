//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// MA-XRF datacube deconvolution into per-element-line distribution maps.
#[derive(Debug, Parser)]
#[command(name = "maxrf", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene into a cube file plus ground-truth maps.
    Simulate(SimulateArgs),
    /// Detect elements in a cube and write a detection report.
    Detect(DetectArgs),
    /// Recover per-line amplitude maps from a cube.
    Deconvolve(DeconvolveArgs),
    /// Re-export stored amplitude maps in another format.
    Export(ExportArgs),
    /// Simulate (or load), detect, deconvolve, and export in one run.
    Pipeline(PipelineArgs),
}

/// On-disk payload element type of a cube file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    U16,
}

/// Per-line map output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    /// 16-bit binary PGM, normalized per map; min/max kept in the sidecar.
    Pgm16,
    /// Plain rows of comma-separated values, unnormalized.
    Csv,
    /// Raw little-endian f32 values, unnormalized; lossless re-export source.
    F32raw,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene preset: shapes, cu_zn_overlap, or trace_element.
    #[arg(long)]
    pub preset: String,
    /// Override the preset's noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the preset's noise model: none or poisson.
    #[arg(long)]
    pub noise: Option<String>,
    /// Override the preset's map height in pixels.
    #[arg(long)]
    pub height: Option<usize>,
    /// Override the preset's map width in pixels.
    #[arg(long)]
    pub width: Option<usize>,
    /// Override the preset's channel count.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Payload element type of the written cube.
    #[arg(long, value_enum, default_value_t = DtypeArg::F32)]
    pub dtype: DtypeArg,
    /// Output directory for cube.raw, its header, and the truth maps.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Cube payload file; its header is expected at <cube>.json.
    #[arg(long)]
    pub cube: PathBuf,
    /// Write the detection report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Solver selection and weights shared by deconvolve and pipeline.
#[derive(Debug, Args)]
pub struct SolverOpts {
    /// Iteration scheme: fista or admm.
    #[arg(long, default_value = "fista")]
    pub solver: String,
    /// Total-variation weight λ.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Iteration budget.
    #[arg(long)]
    pub iters: Option<usize>,
    /// ADMM penalty on the horizontal-difference split.
    #[arg(long)]
    pub rho1: Option<f64>,
    /// ADMM penalty on the vertical-difference split.
    #[arg(long)]
    pub rho2: Option<f64>,
    /// ADMM penalty on the non-negativity split.
    #[arg(long)]
    pub rho3: Option<f64>,
    /// FISTA inverse step size; estimated when omitted.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Skip the α-line amplitude caps.
    #[arg(long)]
    pub no_physical: bool,
    /// Write the per-iteration CSV trace to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DeconvolveArgs {
    /// Cube payload file; its header is expected at <cube>.json.
    #[arg(long)]
    pub cube: PathBuf,
    /// Output directory for the maps and the run report.
    #[arg(long, default_value = "maps")]
    pub out: PathBuf,
    /// Map output format.
    #[arg(long, value_enum, default_value_t = FormatArg::F32raw)]
    pub format: FormatArg,
    #[command(flatten)]
    pub solver: SolverOpts,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Directory holding an f32raw map export (maps_meta.json plus .f32 files).
    #[arg(long)]
    pub maps: PathBuf,
    /// Output directory for the re-export.
    #[arg(long)]
    pub out: PathBuf,
    /// Target format.
    #[arg(long, value_enum, default_value_t = FormatArg::Pgm16)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct PipelineArgs {
    /// Scene preset to simulate as input.
    #[arg(long, group = "source")]
    pub preset: Option<String>,
    /// Existing cube payload file to use as input.
    #[arg(long, group = "source")]
    pub cube: Option<PathBuf>,
    /// Override the preset's noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for every artifact of the run.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Additional map export format beside the lossless f32raw maps.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[command(flatten)]
    pub solver: SolverOpts,
}
