use rand::Rng;

use super::{norm2, DenseMatrix};
use crate::error::{Error, Result};
use crate::rng;

/// Squarings used by the growth-rate estimator: it compares ‖A^{2m}‖ with
/// ‖Aᵐ‖ for m = 2²⁰.
const GROWTH_SQUARINGS: u32 = 20;

/// Spectral radius from the growth rate of matrix powers,
/// `ρ ≈ (‖A^{2m}‖_F / ‖A^m‖_F)^{1/m}` with `m = 2²⁰`.
///
/// Powers are formed by repeated squaring with renormalization, so nothing
/// overflows. Taking the ratio of two powers cancels the constant in
/// `‖Aᵐ‖ ≈ C ρᵐ`, which makes the estimate exact for normal matrices
/// (including rotations). For a dominant Jordan block of size `k + 1` the
/// relative error is about `k·ln2/m`, and for a non-normal complex pair
/// the oscillating constant leaves an error below `2 ln κ / m`.
pub fn spectral_radius(a: &DenseMatrix) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::precondition(format!(
            "spectral radius of a non-square {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let s0 = a.frobenius_norm();
    if s0 == 0.0 {
        return Ok(0.0);
    }
    // A^(2^k) = exp(log_scale) * m with ‖m‖_F = 1
    let mut m = a.scale(1.0 / s0);
    let mut log_scale = s0.ln();
    let mut prev_log = f64::NAN;
    for _ in 0..=GROWTH_SQUARINGS {
        let sq = m.matmul(&m);
        let nrm = sq.frobenius_norm();
        if nrm == 0.0 || !nrm.is_finite() {
            // nilpotent up to floating point underflow
            return Ok(0.0);
        }
        prev_log = log_scale;
        log_scale = 2.0 * log_scale + nrm.ln();
        m = sq.scale(1.0 / nrm);
    }
    let big_m = f64::from(1u32 << GROWTH_SQUARINGS);
    Ok(((log_scale - prev_log) / big_m).exp())
}

/// Power-iteration estimate of the spectral radius, used as a cross-check of
/// [`spectral_radius`].
///
/// Each restart averages the log growth `ln‖Av‖` over the second half of
/// `steps` normalized iterations; the average telescopes to
/// `ln‖A^N v‖/N`, which converges for complex dominant pairs too. The
/// largest estimate over the restarts is returned.
pub fn power_iteration_radius(
    a: &DenseMatrix,
    restarts: usize,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::precondition(
            "power iteration on a non-square matrix",
        ));
    }
    let n = a.rows();
    let mut best: f64 = 0.0;
    for restart in 0..restarts.max(1) {
        let mut rng = rng::stream(seed, &[restart as u64]);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let burn = steps / 2;
        let mut log_growth = 0.0;
        let mut counted = 0usize;
        let mut dead = false;
        for step in 0..steps.max(2) {
            let w = a.mul_vec(&v);
            let nw = norm2(&w);
            if nw == 0.0 {
                dead = true;
                break;
            }
            if step >= burn {
                log_growth += nw.ln();
                counted += 1;
            }
            v = w.into_iter().map(|x| x / nw).collect();
        }
        if !dead && counted > 0 {
            best = best.max((log_growth / counted as f64).exp());
        }
    }
    Ok(best)
}
