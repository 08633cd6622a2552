//! Direct solve of the ADMM A-update by 2-D FFT diagonalization.
//!
//! The inner-loop-free ADMM replaces the data-fit Hessian SᵀS with the scalar
//! majorizer L = ‖S‖²·I, leaving the per-map linear system
//!
//! ```text
//! (ρ1·DxᵀDx + ρ2·DyᵀDy + ρ3·I + ‖S‖²·I) · A_k = G_k
//! ```
//!
//! With periodic differences every term is a circular convolution over the
//! H×W grid, so the operator is diagonal in the 2-D Fourier basis:
//!
//! ```text
//! A_k = IFFT2( FFT2(G_k) / (ρ1·|F(dx)|² + ρ2·|F(dy)|² + ρ3 + ‖S‖²) )
//! |F(dx)|²[fx] = 4·sin²(π·fx/W),   |F(dy)|²[fy] = 4·sin²(π·fy/H)
//! ```
//!
//! The denominator is real and strictly positive (‖S‖² > 0 for any non-empty
//! dictionary), so each map costs two FFT passes instead of an inner gradient
//! descent loop.

use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Planned FFTs and the spectral denominator for one map geometry.
pub struct CirculantSolver {
    height: usize,
    width: usize,
    denom: Vec<f64>,
    forward_w: Arc<dyn Fft<f64>>,
    forward_h: Arc<dyn Fft<f64>>,
    inverse_w: Arc<dyn Fft<f64>>,
    inverse_h: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl std::fmt::Debug for CirculantSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantSolver")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl CirculantSolver {
    /// Plans the transforms and precomputes the denominator spectrum.
    pub fn new(
        height: usize,
        width: usize,
        rho1: f64,
        rho2: f64,
        rho3: f64,
        s_norm_sq: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "circulant solve needs a non-empty map, got {height}x{width}"
            )));
        }
        let floor = rho3 + s_norm_sq;
        if !(floor > 0.0) {
            return Err(Error::Config(format!(
                "rho3 + squared dictionary norm must be positive to invert the \
                 A-update, got {floor}"
            )));
        }
        let mut denom = vec![0.0; height * width];
        for fy in 0..height {
            let sy = 2.0 * (std::f64::consts::PI * fy as f64 / height as f64).sin();
            for fx in 0..width {
                let sx = 2.0 * (std::f64::consts::PI * fx as f64 / width as f64).sin();
                denom[fy * width + fx] = rho1 * sx * sx + rho2 * sy * sy + floor;
            }
        }
        let mut planner = FftPlanner::new();
        let forward_w = planner.plan_fft_forward(width);
        let forward_h = planner.plan_fft_forward(height);
        let inverse_w = planner.plan_fft_inverse(width);
        let inverse_h = planner.plan_fft_inverse(height);
        let scratch_len = forward_w
            .get_inplace_scratch_len()
            .max(forward_h.get_inplace_scratch_len())
            .max(inverse_w.get_inplace_scratch_len())
            .max(inverse_h.get_inplace_scratch_len());
        Ok(Self {
            height,
            width,
            denom,
            forward_w,
            forward_h,
            inverse_w,
            inverse_h,
            scratch_len,
        })
    }

    /// Solves the per-map system for one H×W right-hand side.
    pub fn solve_map(&self, g: &[f64]) -> Vec<f64> {
        self.solve_map_complex(g).iter().map(|c| c.re).collect()
    }

    /// Solves every map of a K-map stack in parallel, writing into `out`.
    pub fn solve_stack_into(&self, g: &[f64], out: &mut [f64]) {
        let pixels = self.height * self.width;
        assert_eq!(
            g.len() % pixels,
            0,
            "stack length must be a multiple of the map size"
        );
        assert_eq!(out.len(), g.len(), "output stack must match the input stack");
        out.par_chunks_mut(pixels)
            .zip(g.par_chunks(pixels))
            .for_each(|(dst, map)| {
                let solved = self.solve_map_complex(map);
                for (d, c) in dst.iter_mut().zip(&solved) {
                    *d = c.re;
                }
            });
    }

    /// Full complex result before the real part is taken.
    ///
    /// The imaginary residue is rounding noise only; tests assert it stays
    /// below 1e-10 for real input.
    pub(crate) fn solve_map_complex(&self, g: &[f64]) -> Vec<Complex<f64>> {
        let (h, w) = (self.height, self.width);
        assert_eq!(g.len(), h * w, "right-hand side must be one H x W map");
        let mut work: Vec<Complex<f64>> =
            g.iter().map(|v| Complex::new(*v, 0.0)).collect();
        let mut column = vec![Complex::new(0.0, 0.0); h];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.scratch_len];

        self.pass_rows(&self.forward_w, &mut work, &mut scratch);
        self.pass_columns(&self.forward_h, &mut work, &mut column, &mut scratch);
        for (value, d) in work.iter_mut().zip(&self.denom) {
            *value /= *d;
        }
        self.pass_rows(&self.inverse_w, &mut work, &mut scratch);
        self.pass_columns(&self.inverse_h, &mut work, &mut column, &mut scratch);
        // rustfft leaves the round trip scaled by H*W.
        let scale = 1.0 / (h * w) as f64;
        for value in &mut work {
            *value *= scale;
        }
        work
    }

    fn pass_rows(
        &self,
        fft: &Arc<dyn Fft<f64>>,
        work: &mut [Complex<f64>],
        scratch: &mut [Complex<f64>],
    ) {
        // One call transforms every row: the buffer is chunked by FFT length.
        fft.process_with_scratch(work, scratch);
    }

    fn pass_columns(
        &self,
        fft: &Arc<dyn Fft<f64>>,
        work: &mut [Complex<f64>],
        column: &mut [Complex<f64>],
        scratch: &mut [Complex<f64>],
    ) {
        let (h, w) = (self.height, self.width);
        for x in 0..w {
            for y in 0..h {
                column[y] = work[y * w + x];
            }
            fft.process_with_scratch(column, scratch);
            for y in 0..h {
                work[y * w + x] = column[y];
            }
        }
    }
}

/// One-shot solve of a K-map stack; plans transforms internally.
pub fn circulant_solve(
    g: &[f64],
    maps: usize,
    height: usize,
    width: usize,
    rho1: f64,
    rho2: f64,
    rho3: f64,
    s_norm_sq: f64,
) -> Result<Vec<f64>> {
    if maps == 0 || g.len() != maps * height * width {
        return Err(Error::Dimension(format!(
            "stack of {maps} maps of {height}x{width} expected, got {} values",
            g.len()
        )));
    }
    let solver = CirculantSolver::new(height, width, rho1, rho2, rho3, s_norm_sq)?;
    let mut out = vec![0.0; g.len()];
    solver.solve_stack_into(g, &mut out);
    Ok(out)
}
