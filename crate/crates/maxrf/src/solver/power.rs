//! Spectral-norm estimation by power iteration on the normal operator.
//!
//! Both solvers need largest singular values that are impractical to obtain
//! by dense decomposition: ‖S‖ for the ADMM majorizer L = ‖S‖²·I, and ‖H‖ for
//! the FISTA step size 1/α.  Power iteration on the normal operator AᵀA only
//! needs the caller to apply x ↦ AᵀA·x:
//!
//! ```text
//! x₀ fixed pseudo-random unit vector
//! yₘ = (AᵀA)·xₘ₋₁,   λ̂ₘ = ⟨xₘ₋₁, yₘ⟩,   xₘ = yₘ / ‖yₘ‖
//! stop when |λ̂ₘ − λ̂ₘ₋₁| ≤ 1e−6·λ̂ₘ or after 100 iterations
//! return sqrt(λ̂)
//! ```
//!
//! The start vector comes from a fixed seed, so the estimate is deterministic
//! for a given operator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Iteration budget for the Rayleigh-quotient refinement.
const MAX_ITERS: usize = 100;
/// Relative change in the eigenvalue estimate that counts as converged.
const REL_TOL: f64 = 1e-6;
/// Seed for the deterministic start vector.
const START_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

/// Estimates the largest singular value of an operator A.
///
/// `apply_normal` must compute `out = AᵀA · x` for vectors of length `dim`.
/// Returns 0 for a zero operator or an empty domain.
pub fn power_iteration_norm<F>(dim: usize, mut apply_normal: F) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut x: Vec<f64> = (0..dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = l2_norm(&x);
    debug_assert!(norm > 0.0, "Gaussian start vector is non-zero");
    for v in &mut x {
        *v /= norm;
    }

    let mut y = vec![0.0; dim];
    let mut estimate = 0.0;
    for _ in 0..MAX_ITERS {
        apply_normal(&x, &mut y);
        let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let y_norm = l2_norm(&y);
        if y_norm == 0.0 {
            // The iterate was annihilated: treat the operator as zero.
            return 0.0;
        }
        for (xv, yv) in x.iter_mut().zip(&y) {
            *xv = yv / y_norm;
        }
        if rayleigh > 0.0 && (rayleigh - estimate).abs() <= REL_TOL * rayleigh {
            estimate = rayleigh;
            break;
        }
        estimate = rayleigh;
    }
    estimate.max(0.0).sqrt()
}

/// Euclidean norm computed serially so results do not depend on thread count.
fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
