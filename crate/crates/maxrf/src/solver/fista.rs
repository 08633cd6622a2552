//! Accelerated proximal gradient (FISTA-style) for the stacked system.
//!
//! The TV splits Z1 = Dx·A and Z2 = Dy·A turn the factorization into one
//! least-squares block plus separable proximal terms:
//!
//! ```text
//!      ⎡ρY⎤        ⎡ρS   0   0⎤        ⎡A ⎤
//! Ÿ =  ⎢0 ⎥,  H =  ⎢Dx  −I   0⎥,  X =  ⎢Z1⎥
//!      ⎣0 ⎦        ⎣Dy   0  −I⎦        ⎣Z2⎦
//!
//! minimize ½‖Ÿ − H·X‖²_F + I₊(A) + P(A) + λ‖Z1‖₁ + λ‖Z2‖₁
//! ```
//!
//! One iteration performs the classic momentum recursion
//!
//! ```text
//! d_m = (1 + sqrt(1 + 4·d_{m−1}²)) / 2
//! U   = X^{m−1} + ((d_{m−1} − 1)/d_m)·(X^{m−1} − X^{m−2})
//! W   = U − (1/α)·Hᵀ(H·U − Ÿ)
//! A   = prox_physical(prox_nonneg(W1))
//! Z1  = prox_l1(W2, λ),   Z2 = prox_l1(W3, λ)
//! ```
//!
//! H is applied matrix-free: the data block of Hᵀ(H·U − Ÿ) reduces to
//! ρ²·(SᵀS·U_A − SᵀY) through the precomputed K×K Gram matrix, and the
//! difference blocks are the per-map spatial operators.  The step size 1/α
//! needs α ≥ ‖H‖²; when not supplied it is estimated by power iteration on
//! HᵀH with a 5% safety margin.

use std::time::Instant;

use crate::cube::Datacube;
use crate::dict::PulseDictionary;
use crate::error::{Error, Result};

use super::diff::{stack_diff, DiffOp};
use super::power::power_iteration_norm;
use super::prox::{prox_l1, prox_physical_stack};
use super::{
    all_finite, fill_indexed, relative_change, update_indexed, AmplitudeMaps, Problem,
    SolveTrace, SolverConfig,
};

/// Safety factor applied to the power-iteration estimate of ‖H‖².
const ALPHA_MARGIN: f64 = 1.05;

/// Momentum coefficient recursion d_m = (1 + sqrt(1 + 4·d²))/2.
pub(crate) fn next_momentum(d_prev: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * d_prev * d_prev).sqrt())
}

/// Final iterate of the stacked unknowns, for inspection by tests.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct FistaState {
    pub a: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

/// Runs accelerated proximal gradient iterations and returns the maps and trace.
pub fn fista_solve(
    cube: &Datacube,
    dictionary: &PulseDictionary,
    config: &SolverConfig,
) -> Result<(AmplitudeMaps, SolveTrace)> {
    config.validate()?;
    let prob = Problem::new(cube, dictionary)?;
    let (state, trace) = run(&prob, config)?;
    let maps = AmplitudeMaps::new(
        state.a,
        prob.height,
        prob.width,
        dictionary.meta().to_vec(),
    )?;
    Ok((maps, trace))
}

/// Estimates ‖H‖² by power iteration on x ↦ HᵀH·x over stacked vectors.
fn estimate_alpha(prob: &Problem, rho_sq: f64) -> f64 {
    let n = prob.maps * prob.pixels;
    let (height, width) = (prob.height, prob.width);
    let mut rx = vec![0.0f64; n];
    let mut ry = vec![0.0f64; n];
    let mut sa = vec![0.0f64; n];
    let mut adj_x = vec![0.0f64; n];
    let mut adj_y = vec![0.0f64; n];
    let norm = power_iteration_norm(3 * n, move |x, out| {
        let (xa, tail) = x.split_at(n);
        let (xz1, xz2) = tail.split_at(n);
        // rx = Dx·x_A − x_Z1,  ry = Dy·x_A − x_Z2
        stack_diff(DiffOp::GradX, xa, height, width, &mut rx);
        update_indexed(&mut rx, |j, v| v - xz1[j]);
        stack_diff(DiffOp::GradY, xa, height, width, &mut ry);
        update_indexed(&mut ry, |j, v| v - xz2[j]);
        prob.sts_apply(xa, &mut sa);
        stack_diff(DiffOp::GradXAdjoint, &rx, height, width, &mut adj_x);
        stack_diff(DiffOp::GradYAdjoint, &ry, height, width, &mut adj_y);
        let (oa, otail) = out.split_at_mut(n);
        let (oz1, oz2) = otail.split_at_mut(n);
        fill_indexed(oa, |j| rho_sq * sa[j] + adj_x[j] + adj_y[j]);
        fill_indexed(oz1, |j| -rx[j]);
        fill_indexed(oz2, |j| -ry[j]);
    });
    ALPHA_MARGIN * norm * norm
}

/// Core iteration loop, separated so tests can evaluate the full objective.
pub(crate) fn run(prob: &Problem, config: &SolverConfig) -> Result<(FistaState, SolveTrace)> {
    let n = prob.maps * prob.pixels;
    let total = 3 * n;
    let (height, width) = (prob.height, prob.width);
    let pixels = prob.pixels;
    let rho_sq = config.rho * config.rho;

    let alpha = match config.alpha {
        Some(alpha) => alpha,
        None => estimate_alpha(prob, rho_sq),
    };
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Config(format!(
            "step-size estimate alpha must be positive and finite, got {alpha}"
        )));
    }
    let inv_alpha = 1.0 / alpha;
    let lambda = config.lambda;

    let mut x_prev = vec![0.0f64; total];
    let mut x_curr = vec![0.0f64; total];
    let mut x_next = vec![0.0f64; total];
    let mut u = vec![0.0f64; total];
    let mut rx = vec![0.0f64; n];
    let mut ry = vec![0.0f64; n];
    let mut sa = vec![0.0f64; n];
    let mut adj_x = vec![0.0f64; n];
    let mut adj_y = vec![0.0f64; n];
    let mut sts_a = vec![0.0f64; n];
    let mut previous = config.rel_change_tol.map(|_| vec![0.0f64; n]);
    let mut d_prev = 0.0f64;
    let mut trace = SolveTrace::default();

    for m in 1..=config.iters {
        let started = Instant::now();
        let d = next_momentum(d_prev);
        let beta = (d_prev - 1.0) / d;
        fill_indexed(&mut u, |j| x_curr[j] + beta * (x_curr[j] - x_prev[j]));

        let (ua, utail) = u.split_at(n);
        let (uz1, uz2) = utail.split_at(n);
        // Residual blocks of H·U − Ÿ that involve the differences.
        stack_diff(DiffOp::GradX, ua, height, width, &mut rx);
        update_indexed(&mut rx, |j, v| v - uz1[j]);
        stack_diff(DiffOp::GradY, ua, height, width, &mut ry);
        update_indexed(&mut ry, |j, v| v - uz2[j]);
        prob.sts_apply(ua, &mut sa);
        stack_diff(DiffOp::GradXAdjoint, &rx, height, width, &mut adj_x);
        stack_diff(DiffOp::GradYAdjoint, &ry, height, width, &mut adj_y);

        {
            let (na, ntail) = x_next.split_at_mut(n);
            let (nz1, nz2) = ntail.split_at_mut(n);
            let st_y = &prob.st_y;
            fill_indexed(na, |j| {
                let grad = rho_sq * (sa[j] - st_y[j]) + adj_x[j] + adj_y[j];
                (ua[j] - inv_alpha * grad).max(0.0)
            });
            if config.physical_constraint {
                prox_physical_stack(na, pixels, &prob.caps);
            }
            // For the Z blocks the gradient is the negated residual, so the
            // step adds the residual back before thresholding.
            fill_indexed(nz1, |j| prox_l1(uz1[j] + inv_alpha * rx[j], lambda));
            fill_indexed(nz2, |j| prox_l1(uz2[j] + inv_alpha * ry[j], lambda));
        }

        if !all_finite(&x_next) {
            return Err(Error::Diverged {
                iteration: m,
                detail: "stacked iterate left the finite range (alpha too small?)".into(),
            });
        }
        if config.record_mse {
            let na = &x_next[..n];
            prob.sts_apply(na, &mut sts_a);
            let value = prob.mse_identity(na, &sts_a);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    iteration: m,
                    detail: format!("model MSE became {value}"),
                });
            }
            trace.mse.push(value);
        }
        trace.wall_ms.push(started.elapsed().as_secs_f64() * 1e3);

        let mut stop = false;
        if let (Some(tol), Some(prev)) = (config.rel_change_tol, previous.as_mut()) {
            if relative_change(&x_next[..n], prev) < tol {
                stop = true;
            } else {
                prev.copy_from_slice(&x_next[..n]);
            }
        }

        std::mem::swap(&mut x_prev, &mut x_curr);
        std::mem::swap(&mut x_curr, &mut x_next);
        d_prev = d;
        if stop {
            break;
        }
    }

    let a = x_curr[..n].to_vec();
    let z1 = x_curr[n..2 * n].to_vec();
    let z2 = x_curr[2 * n..].to_vec();
    Ok((FistaState { a, z1, z2 }, trace))
}
