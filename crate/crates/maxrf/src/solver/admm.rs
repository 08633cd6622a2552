//! Inner-loop-free ADMM for the constrained factorization.
//!
//! The splitting introduces Z1 = Dx·A, Z2 = Dy·A, Z3 = A with scaled duals
//! Z̃1, Z̃2, Z̃3 and penalty weights ρ1, ρ2, ρ3.  One iteration performs
//!
//! ```text
//! Z1 = prox_l1(Dx·A − Z̃1, λ)
//! Z2 = prox_l1(Dy·A − Z̃2, λ)
//! Ẑ3 = prox_nonneg(A − Z̃3)
//! Z3 = prox_physical(Ẑ3)
//! G  = SᵀY + ρ1·Dxᵀ(Z1 + Z̃1) + ρ2·Dyᵀ(Z2 + Z̃2) + ρ3·(Z3 + Z̃3)
//!        + (‖S‖²·I − SᵀS)·A
//! A  = (ρ1·DxᵀDx + ρ2·DyᵀDy + ρ3·I + ‖S‖²·I)⁻¹ · G      (FFT solve)
//! Z̃i = Z̃i − (constraint residual at the new A)
//! ```
//!
//! The majorizer ‖S‖²·I replaces SᵀS inside the inverse, which makes the
//! A-update a circulant system solvable exactly by 2-D FFTs — no inner
//! gradient descent loop.  The returned A is the ADMM primal, so a final
//! non-negativity projection (and the physical caps, when enabled) is applied
//! on output; mid-run the primal may dip negative while only Z3 is projected.

use std::time::Instant;

use crate::cube::Datacube;
use crate::dict::PulseDictionary;
use crate::error::{Error, Result};

use super::circulant::CirculantSolver;
use super::diff::{stack_diff, DiffOp};
use super::prox::{prox_l1, prox_physical_stack};
use super::{
    all_finite, fill_indexed, relative_change, update_indexed, AmplitudeMaps, Problem,
    SolveTrace, SolverConfig,
};

/// Runs Algorithm-style ILF-ADMM iterations and returns the maps and trace.
pub fn admm_solve(
    cube: &Datacube,
    dictionary: &PulseDictionary,
    config: &SolverConfig,
) -> Result<(AmplitudeMaps, SolveTrace)> {
    config.validate()?;
    let prob = Problem::new(cube, dictionary)?;
    let (height, width) = (prob.height, prob.width);
    let pixels = prob.pixels;
    let n = prob.maps * pixels;
    let fft = CirculantSolver::new(
        height,
        width,
        config.rho1,
        config.rho2,
        config.rho3,
        prob.s_norm_sq,
    )?;

    // Primal, auxiliary, and dual stacks all start at zero.
    let mut a = vec![0.0f64; n];
    let mut z1 = vec![0.0f64; n];
    let mut z2 = vec![0.0f64; n];
    let mut z3 = vec![0.0f64; n];
    let mut t1 = vec![0.0f64; n];
    let mut t2 = vec![0.0f64; n];
    let mut t3 = vec![0.0f64; n];

    // Scratch: spatial differences, the right-hand side, and SᵀS·A (which is
    // zero for A⁰ and is refreshed at the end of each iteration).
    let mut dxa = vec![0.0f64; n];
    let mut dya = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];
    let mut sum = vec![0.0f64; n];
    let mut adj = vec![0.0f64; n];
    let mut sts_a = vec![0.0f64; n];

    let mut previous = config.rel_change_tol.map(|_| vec![0.0f64; n]);
    let mut trace = SolveTrace::default();

    for m in 1..=config.iters {
        let started = Instant::now();

        // Auxiliary updates from the previous primal A and duals.
        stack_diff(DiffOp::GradX, &a, height, width, &mut dxa);
        stack_diff(DiffOp::GradY, &a, height, width, &mut dya);
        let lambda = config.lambda;
        fill_indexed(&mut z1, |j| prox_l1(dxa[j] - t1[j], lambda));
        fill_indexed(&mut z2, |j| prox_l1(dya[j] - t2[j], lambda));
        fill_indexed(&mut z3, |j| (a[j] - t3[j]).max(0.0));
        if config.physical_constraint {
            prox_physical_stack(&mut z3, pixels, &prob.caps);
        }

        // Right-hand side G of the A-update.
        {
            let st_y = &prob.st_y;
            let s2 = prob.s_norm_sq;
            let rho3 = config.rho3;
            fill_indexed(&mut g, |j| {
                st_y[j] + s2 * a[j] - sts_a[j] + rho3 * (z3[j] + t3[j])
            });
        }
        fill_indexed(&mut sum, |j| z1[j] + t1[j]);
        stack_diff(DiffOp::GradXAdjoint, &sum, height, width, &mut adj);
        {
            let rho1 = config.rho1;
            update_indexed(&mut g, |j, v| v + rho1 * adj[j]);
        }
        fill_indexed(&mut sum, |j| z2[j] + t2[j]);
        stack_diff(DiffOp::GradYAdjoint, &sum, height, width, &mut adj);
        {
            let rho2 = config.rho2;
            update_indexed(&mut g, |j, v| v + rho2 * adj[j]);
        }

        // Exact A-update in the Fourier basis.
        fft.solve_stack_into(&g, &mut a);
        if !all_finite(&a) {
            return Err(Error::Diverged {
                iteration: m,
                detail: "ADMM primal left the finite range".into(),
            });
        }

        // Dual ascent on the three split constraints, at the new A.
        stack_diff(DiffOp::GradX, &a, height, width, &mut dxa);
        stack_diff(DiffOp::GradY, &a, height, width, &mut dya);
        update_indexed(&mut t1, |j, v| v - dxa[j] + z1[j]);
        update_indexed(&mut t2, |j, v| v - dya[j] + z2[j]);
        update_indexed(&mut t3, |j, v| v - a[j] + z3[j]);

        // SᵀS·A serves this iteration's MSE and the next iteration's G.
        prob.sts_apply(&a, &mut sts_a);
        if config.record_mse {
            let value = prob.mse_identity(&a, &sts_a);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    iteration: m,
                    detail: format!("model MSE became {value}"),
                });
            }
            trace.mse.push(value);
        }
        trace.wall_ms.push(started.elapsed().as_secs_f64() * 1e3);

        if let (Some(tol), Some(prev)) = (config.rel_change_tol, previous.as_mut()) {
            if relative_change(&a, prev) < tol {
                break;
            }
            prev.copy_from_slice(&a);
        }
    }

    // The primal is returned, so project it onto the constraint set.
    update_indexed(&mut a, |_, v| v.max(0.0));
    if config.physical_constraint {
        prox_physical_stack(&mut a, pixels, &prob.caps);
    }
    let maps = AmplitudeMaps::new(a, height, width, dictionary.meta().to_vec())?;
    Ok((maps, trace))
}
