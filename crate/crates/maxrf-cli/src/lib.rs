//! CLI orchestration: argument handling, file formats, and the stage
//! pipeline (simulate → detect → deconvolve → export).
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 solver divergence.
//! Orchestration is single-threaded; the library's solvers and the scene
//! renderer parallelize internally, capped by the `FAD_THREADS` environment
//! variable when set.

pub mod args;
pub mod cube_file;
pub mod export;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::Parser;

use maxrf::dict::build_pulse_matrix;
use maxrf::synth::{render_cube, Noise, ScenePreset};
use maxrf::{
    assign::detect_elements, Datacube, DetectedElementSet, ElementLineTable, Solver,
    SolverConfig, WindowConfig,
};

use args::{Cli, Command, DeconvolveArgs, DetectArgs, ExportArgs, PipelineArgs, SimulateArgs};
use export::Format;
use report::{DetectionReport, RunReport};

/// Failures of a CLI run, bucketed by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag values → exit 1.
    Usage(String),
    /// Unreadable, malformed, or inconsistent data → exit 2.
    Data(String),
    /// A solver iterate left the finite range → exit 3.
    Diverged(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Diverged(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<maxrf::Error> for CliError {
    fn from(e: maxrf::Error) -> Self {
        match e {
            maxrf::Error::Config(_) => CliError::Usage(e.to_string()),
            maxrf::Error::Diverged { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl CliError {
    /// The process exit code this failure maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

/// Convenience alias for CLI results.
pub type Result<T> = std::result::Result<T, CliError>;

/// Parses arguments, applies the thread cap, runs the command, and maps
/// every outcome to an exit code.
pub fn main_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    apply_thread_cap();
    match run_command(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Caps the global worker pool when FAD_THREADS is set to a positive count.
fn apply_thread_cap() {
    if let Ok(raw) = std::env::var("FAD_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // Ignore the error from a pool that is already running; the
                // cap then simply stays at its first value.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("ignoring FAD_THREADS={raw}: expected a positive integer"),
        }
    }
}

/// Runs one parsed command.
pub fn run_command(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Deconvolve(a) => cmd_deconvolve(a),
        Command::Export(a) => cmd_export(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

/// Applies CLI overrides to a named preset.
fn resolve_preset(
    name: &str,
    seed: Option<u64>,
    noise: Option<&str>,
    height: Option<usize>,
    width: Option<usize>,
    channels: Option<usize>,
) -> Result<ScenePreset> {
    let mut preset = ScenePreset::by_name(name)?;
    if let Some(seed) = seed {
        preset.seed = seed;
    }
    if let Some(noise) = noise {
        preset.noise = noise.parse::<Noise>()?;
    }
    if let Some(h) = height {
        preset.height = h;
    }
    if let Some(w) = width {
        preset.width = w;
    }
    if let Some(m) = channels {
        preset.channels = m;
    }
    preset.validate()?;
    Ok(preset)
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let preset = resolve_preset(
        &a.preset,
        a.seed,
        a.noise.as_deref(),
        a.height,
        a.width,
        a.channels,
    )?;
    let scene = render_cube(&preset)?;
    let cube_path = a.out.join("cube.raw");
    let dtype = match a.dtype {
        args::DtypeArg::F32 => cube_file::Dtype::F32,
        args::DtypeArg::U16 => cube_file::Dtype::U16,
    };
    cube_file::write_cube(&scene.cube, &cube_path, dtype)?;
    let truth_dir = a.out.join("truth");
    export::export_maps(&scene.truth, &truth_dir, Format::F32raw)?;
    println!(
        "wrote {} ({}x{}x{}, {} noise) and {} truth maps to {}",
        cube_path.display(),
        preset.height,
        preset.width,
        preset.channels,
        match preset.noise {
            Noise::None => "no",
            Noise::Poisson => "poisson",
        },
        scene.truth.num_lines(),
        truth_dir.display(),
    );
    Ok(())
}

/// Shared detect stage: reads nothing, scores both summary spectra.
fn detect_stage(cube: &Datacube) -> Result<(DetectedElementSet, DetectionReport)> {
    let table = ElementLineTable::embedded();
    let set = detect_elements(cube, &table, &WindowConfig::default())?;
    let report = DetectionReport::from_set(&set);
    Ok((set, report))
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let cube = cube_file::read_cube(&a.cube)?;
    let (set, report) = detect_stage(&cube)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(format!("cannot serialize detection report: {e}")))?;
    match &a.out {
        Some(path) => {
            cube_file::write_atomic(path, json.as_bytes())?;
            println!(
                "detected {} elements ({}); report at {}",
                set.elements.len(),
                symbols(&set),
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn symbols(set: &DetectedElementSet) -> String {
    set.elements
        .iter()
        .map(|e| e.symbol)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Solver choice and configuration from the shared flags.
fn solver_setup(opts: &args::SolverOpts) -> Result<(Solver, SolverConfig)> {
    let solver: Solver = opts.solver.parse()?;
    let mut cfg = SolverConfig::default();
    if let Some(v) = opts.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = opts.iters {
        cfg.iters = v;
    }
    if let Some(v) = opts.rho1 {
        cfg.rho1 = v;
    }
    if let Some(v) = opts.rho2 {
        cfg.rho2 = v;
    }
    if let Some(v) = opts.rho3 {
        cfg.rho3 = v;
    }
    cfg.alpha = opts.alpha;
    cfg.physical_constraint = !opts.no_physical;
    cfg.validate()?;
    Ok((solver, cfg))
}

/// Shared deconvolve stage: detection, dictionary, solve, map export, report.
#[allow(clippy::too_many_arguments)]
fn deconvolve_stage(
    cube: &Datacube,
    opts: &args::SolverOpts,
    maps_dir: &Path,
    maps_format: Format,
    report_path: &Path,
    preset: Option<String>,
) -> Result<()> {
    let (solver, cfg) = solver_setup(opts)?;
    let (set, detection) = detect_stage(cube)?;
    if set.elements.is_empty() {
        return Err(CliError::Data(
            "no elements detected in the cube; nothing to deconvolve".into(),
        ));
    }
    let table = ElementLineTable::embedded();
    let dict = build_pulse_matrix(&set, &table, cube.calibration())?;
    let (maps, trace) = solver.solve(cube, &dict, &cfg)?;
    export::export_maps(&maps, maps_dir, maps_format)?;
    if let Some(trace_path) = &opts.trace {
        cube_file::write_atomic(trace_path, trace.to_csv().as_bytes())?;
    }
    let report = RunReport::new(
        preset,
        [cube.height(), cube.width(), cube.channels()],
        detection,
        &solver.to_string(),
        &cfg,
        &trace,
    );
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(format!("cannot serialize run report: {e}")))?;
    cube_file::write_atomic(report_path, json.as_bytes())?;
    println!(
        "detected {} elements ({}); {} solved {} lines in {} iterations \
         ({:.0} ms{}); maps in {}",
        set.elements.len(),
        symbols(&set),
        solver,
        maps.num_lines(),
        trace.iterations(),
        trace.total_wall_ms(),
        trace
            .final_mse()
            .map(|m| format!(", final MSE {m:.6}"))
            .unwrap_or_default(),
        maps_dir.display(),
    );
    Ok(())
}

fn cmd_deconvolve(a: DeconvolveArgs) -> Result<()> {
    let cube = cube_file::read_cube(&a.cube)?;
    deconvolve_stage(
        &cube,
        &a.solver,
        &a.out,
        a.format.into(),
        &a.out.join("run_report.json"),
        None,
    )
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let maps = export::read_maps(&a.maps)?;
    let written = export::export_maps(&maps, &a.out, a.format.into())?;
    println!(
        "exported {} maps to {}",
        written.len() - 1,
        a.out.display()
    );
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let (cube, preset_name): (Datacube, Option<String>) = match (&a.preset, &a.cube) {
        (Some(name), None) => {
            let preset = resolve_preset(name, a.seed, None, None, None, None)?;
            let scene = render_cube(&preset)?;
            let cube_path = a.out.join("cube.raw");
            cube_file::write_cube(&scene.cube, &cube_path, cube_file::Dtype::F32)?;
            export::export_maps(&scene.truth, &a.out.join("truth"), Format::F32raw)?;
            (scene.cube, Some(preset.name.clone()))
        }
        (None, Some(path)) => (cube_file::read_cube(path)?, None),
        // clap's argument group admits exactly one source.
        _ => unreachable!("argument group enforces exactly one of --preset/--cube"),
    };

    let (_, detection) = detect_stage(&cube)?;
    let detection_json = serde_json::to_string_pretty(&detection)
        .map_err(|e| CliError::Data(format!("cannot serialize detection report: {e}")))?;
    cube_file::write_atomic(&a.out.join("detection.json"), detection_json.as_bytes())?;

    let mut trace_opts = a.solver;
    let trace_path: PathBuf = match trace_opts.trace.take() {
        Some(p) => p,
        None => a.out.join("trace.csv"),
    };
    trace_opts.trace = Some(trace_path);

    deconvolve_stage(
        &cube,
        &trace_opts,
        &a.out.join("maps"),
        Format::F32raw,
        &a.out.join("run_report.json"),
        preset_name,
    )?;

    if let Some(extra) = a.format {
        let format: Format = extra.into();
        if format != Format::F32raw {
            let maps = export::read_maps(&a.out.join("maps"))?;
            export::export_maps(&maps, &a.out.join("view"), format)?;
        }
    }
    Ok(())
}
