//! First-difference operators on H×W maps with periodic boundary.
//!
//! The total-variation terms act spatially on each element-line map.  Both
//! solvers need the forward differences and their exact adjoints:
//!
//! ```text
//! (Dx u)[h][w] = u[h][w] − u[h][(w−1) mod W]      difference along width
//! (Dy u)[h][w] = u[h][w] − u[(h−1) mod H][w]      difference along height
//!
//! (Dxᵀ v)[h][w] = v[h][w] − v[h][(w+1) mod W]
//! (Dyᵀ v)[h][w] = v[h][w] − v[(h+1) mod H][w]
//! ```
//!
//! The periodic (circular) boundary makes Dx and Dy circular convolutions, so
//! the ADMM A-update can be diagonalized by the 2-D FFT.  Maps are stored
//! row-major: index `h·W + w`.

use rayon::prelude::*;

/// Forward difference along the width, written into `out`.
pub(crate) fn grad_x_into(map: &[f64], height: usize, width: usize, out: &mut [f64]) {
    check_dims(map.len(), height, width);
    assert_eq!(out.len(), map.len(), "output buffer must match the map size");
    for h in 0..height {
        let row = h * width;
        out[row] = map[row] - map[row + width - 1];
        for w in 1..width {
            out[row + w] = map[row + w] - map[row + w - 1];
        }
    }
}

/// Forward difference along the height, written into `out`.
pub(crate) fn grad_y_into(map: &[f64], height: usize, width: usize, out: &mut [f64]) {
    check_dims(map.len(), height, width);
    assert_eq!(out.len(), map.len(), "output buffer must match the map size");
    for h in 0..height {
        let above = if h == 0 { height - 1 } else { h - 1 };
        let row = h * width;
        let prev = above * width;
        for w in 0..width {
            out[row + w] = map[row + w] - map[prev + w];
        }
    }
}

/// Adjoint of `grad_x`, written into `out`.
pub(crate) fn grad_x_adjoint_into(v: &[f64], height: usize, width: usize, out: &mut [f64]) {
    check_dims(v.len(), height, width);
    assert_eq!(out.len(), v.len(), "output buffer must match the map size");
    for h in 0..height {
        let row = h * width;
        for w in 0..width - 1 {
            out[row + w] = v[row + w] - v[row + w + 1];
        }
        out[row + width - 1] = v[row + width - 1] - v[row];
    }
}

/// Adjoint of `grad_y`, written into `out`.
pub(crate) fn grad_y_adjoint_into(v: &[f64], height: usize, width: usize, out: &mut [f64]) {
    check_dims(v.len(), height, width);
    assert_eq!(out.len(), v.len(), "output buffer must match the map size");
    for h in 0..height {
        let below = if h + 1 == height { 0 } else { h + 1 };
        let row = h * width;
        let next = below * width;
        for w in 0..width {
            out[row + w] = v[row + w] - v[next + w];
        }
    }
}

/// Forward difference along the width with periodic wrap.
pub fn grad_x(map: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; map.len()];
    grad_x_into(map, height, width, &mut out);
    out
}

/// Forward difference along the height with periodic wrap.
pub fn grad_y(map: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; map.len()];
    grad_y_into(map, height, width, &mut out);
    out
}

/// Exact transpose of `grad_x`.
pub fn grad_x_adjoint(v: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    grad_x_adjoint_into(v, height, width, &mut out);
    out
}

/// Exact transpose of `grad_y`.
pub fn grad_y_adjoint(v: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    grad_y_adjoint_into(v, height, width, &mut out);
    out
}

/// Which difference operator a stack pass applies.
#[derive(Debug, Clone, Copy)]
pub(crate) enum DiffOp {
    GradX,
    GradY,
    GradXAdjoint,
    GradYAdjoint,
}

/// Applies one difference operator to every map of a K-map stack in parallel.
///
/// Each map is processed independently, so the result is identical for any
/// thread count.
pub(crate) fn stack_diff(
    op: DiffOp,
    stack: &[f64],
    height: usize,
    width: usize,
    out: &mut [f64],
) {
    let pixels = height * width;
    assert!(pixels > 0, "maps must be non-empty");
    assert_eq!(stack.len() % pixels, 0, "stack length must be a multiple of the map size");
    assert_eq!(out.len(), stack.len(), "output stack must match the input stack");
    out.par_chunks_mut(pixels)
        .zip(stack.par_chunks(pixels))
        .for_each(|(dst, map)| match op {
            DiffOp::GradX => grad_x_into(map, height, width, dst),
            DiffOp::GradY => grad_y_into(map, height, width, dst),
            DiffOp::GradXAdjoint => grad_x_adjoint_into(map, height, width, dst),
            DiffOp::GradYAdjoint => grad_y_adjoint_into(map, height, width, dst),
        });
}

fn check_dims(len: usize, height: usize, width: usize) {
    assert!(height >= 1 && width >= 1, "maps must have H, W >= 1");
    assert_eq!(len, height * width, "map length must equal H x W");
}
