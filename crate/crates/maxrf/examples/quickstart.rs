//! Minimal end-to-end run on a built-in synthetic scene: detect elements,
//! build the line dictionary, solve for the maps, and print a summary.

use maxrf::assign::detect_elements;
use maxrf::dict::build_pulse_matrix;
use maxrf::elements::ElementLineTable;
use maxrf::synth::render_cube;
use maxrf::{ScenePreset, Solver, SolverConfig, WindowConfig};

fn main() -> maxrf::Result<()> {
    // A 64×64×1024 noiseless scene with Mn, Fe, Cu, and Zn features.
    let scene = render_cube(&ScenePreset::by_name("shapes")?)?;

    let table = ElementLineTable::embedded();
    let detected = detect_elements(&scene.cube, &table, &WindowConfig::default())?;
    for e in &detected.elements {
        println!("{} (Z={})", e.symbol, e.z);
    }

    let dict = build_pulse_matrix(&detected, &table, scene.cube.calibration())?;
    let (maps, trace) = Solver::Fista.solve(&scene.cube, &dict, &SolverConfig::default())?;

    for (k, line) in maps.meta().iter().enumerate() {
        let peak = maps.map(k).iter().cloned().fold(0.0_f64, f64::max);
        println!("{} {}: peak amplitude {peak:.2}", line.element.symbol, line.line);
    }
    println!("final MSE {:.6}", trace.mse.last().unwrap());
    Ok(())
}
