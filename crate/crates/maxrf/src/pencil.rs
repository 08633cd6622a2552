//! Matrix-pencil estimation of cisoid parameters.
//!
//! Given samples of a sum of complex exponentials
//!
//! ```text
//! x[f] = Σ_k R_k · z_k^f ,   f = 0 … F−1
//! ```
//!
//! the matrix-pencil method recovers the poles `z_k` without any grid
//! search. A Hankel matrix is formed from the samples,
//!
//! ```text
//! Y[i][j] = x[i + j] ,   (F−P) rows × (P+1) columns,  P = F/2
//! ```
//!
//! whose rank equals the number of cisoids. After an SVD the model order is
//! read off the singular-value spectrum, and the poles are the eigenvalues
//! of a K×K matrix built from the dominant right singular vectors with
//! their first/last rows dropped. The singular-value truncation makes the
//! estimate robust to additive noise.
//!
//! For samples taken from `x[f] = Σ_k R_k e^{−i2π t_k f / L}` the returned
//! poles are `z_k = e^{−i2π t_k / L}`, so the locations follow as
//! `t_k = (−arg z_k)·L/(2π) mod L`.

use nalgebra::{Complex, DMatrix};

type C64 = Complex<f64>;

/// Estimate the poles of a cisoid sum from its first `F` samples.
///
/// The model order is the number of singular values of the Hankel matrix
/// at least `sv_threshold` times the largest, capped at `max_order` and at
/// the pencil dimensions. Returns an empty vector when the samples carry no
/// signal or are too few (fewer than 4) to form a pencil.
pub fn estimate_poles(samples: &[C64], max_order: usize, sv_threshold: f64) -> Vec<C64> {
    let f = samples.len();
    if f < 4 || max_order == 0 {
        return Vec::new();
    }
    let p = f / 2;
    let rows = f - p;
    let hankel = DMatrix::from_fn(rows, p + 1, |i, j| samples[i + j]);
    let svd = hankel.svd(true, true);
    let sv = &svd.singular_values;
    let s1 = sv[0];
    if !(s1 > 0.0) {
        return Vec::new();
    }
    let order = sv
        .iter()
        .filter(|s| **s >= sv_threshold * s1)
        .count()
        .min(max_order)
        .min(rows - 1)
        .min(p);
    if order == 0 {
        return Vec::new();
    }
    let vt = svd
        .v_t
        .as_ref()
        .expect("SVD was computed with right singular vectors");
    // Right singular vectors are the conjugated rows of V^H; keep the
    // `order` dominant ones as columns.
    let v_k = DMatrix::from_fn(p + 1, order, |r, c| vt[(c, r)].conj());
    let v1 = v_k.rows(0, p).into_owned();
    let v2 = v_k.rows(1, p).into_owned();
    let pinv = match v1.pseudo_inverse(1e-12) {
        Ok(m) => m,
        Err(_) => return Vec::new(),
    };
    let pencil = pinv * v2;
    let eigs = match pencil.eigenvalues() {
        Some(e) => e,
        None => return Vec::new(),
    };
    // Working with right singular vectors (rather than the rows of V^H)
    // conjugates the spectrum; undo it so the poles match the sample model.
    eigs.iter().map(|z| z.conj()).collect()
}
