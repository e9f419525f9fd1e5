use super::IgsParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MinMax {
    Min,
    Max,
}

/// `min_i |x|^{aᵢ}` or `max_i |x|^{aᵢ}` over exponents `aᵢ ≥ 1`.
///
/// Only the extreme exponents matter: for `|x| ≤ 1` the smallest power uses
/// the largest exponent, and the other way round for `|x| > 1`.
pub fn min_max_power(x: f64, exponents: &[f64], mode: MinMax) -> Result<f64> {
    if exponents.is_empty() {
        return Err(Error::precondition(
            "min_max_power needs at least one exponent",
        ));
    }
    if let Some(bad) = exponents.iter().find(|e| !(**e >= 1.0)) {
        return Err(Error::precondition(format!(
            "exponents must be >= 1, got {bad}"
        )));
    }
    let lo = exponents.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let base = x.abs();
    let small_base = base <= 1.0;
    let e = match (mode, small_base) {
        (MinMax::Min, true) | (MinMax::Max, false) => hi,
        (MinMax::Min, false) | (MinMax::Max, true) => lo,
    };
    Ok(base.powf(e))
}

/// Exponential-in-`T` discrepancy estimate for `B`-bounded, `L`-Lipschitz
/// dynamics: `((L(1+2B))^T − 1)/(L(1+2B) − 1) · loss`.
pub fn gronwall_bound(l: f64, b: f64, horizon: usize, loss: f64) -> Result<f64> {
    let r = l * (1.0 + 2.0 * b);
    if !(r > 1.0) {
        return Err(Error::precondition(format!(
            "the estimate requires L(1+2B) > 1, got {r}"
        )));
    }
    if !(loss >= 0.0) {
        return Err(Error::precondition("loss must be non-negative"));
    }
    if loss == 0.0 {
        return Ok(0.0);
    }
    let growth = if horizon <= i32::MAX as usize {
        r.powi(horizon as i32)
    } else {
        r.powf(horizon as f64)
    };
    Ok((growth - 1.0) / (r - 1.0) * loss)
}

/// Discrepancy induced by inputs on an IGS system:
/// `4(γ∨1)^{1/(a∧a₀)} T^{1−1/(a∨a₁)} max{loss^{b₀/(a∨a₁)}, loss^{b₁/(a∧a₀)}}`.
pub fn disc_bound_inputs(psi: &IgsParams, horizon: usize, loss: f64) -> Result<f64> {
    psi.validate()?;
    if !(loss >= 0.0) {
        return Err(Error::precondition("loss must be non-negative"));
    }
    let (lo, hi) = (psi.low(), psi.high());
    let t = horizon as f64;
    Ok(4.0
        * psi.gamma.max(1.0).powf(1.0 / lo)
        * t.powf(1.0 - 1.0 / hi)
        * loss.powf(psi.b0 / hi).max(loss.powf(psi.b1 / lo)))
}

/// Discrepancy between the autonomous trajectories of two initial conditions
/// a distance `gap` apart: `(per_step, summed)` where `per_step` bounds every
/// `‖Δ_t‖` and `summed` bounds `Σ_{t<T} ‖Δ_t‖`.
pub fn disc_bound_ics(psi: &IgsParams, horizon: usize, gap: f64) -> Result<(f64, f64)> {
    psi.validate()?;
    if !(gap >= 0.0) {
        return Err(Error::precondition(
            "initial-condition gap must be non-negative",
        ));
    }
    let (lo, hi) = (psi.low(), psi.high());
    let per_step =
        psi.zeta.max(1.0).powf(1.0 / lo) * gap.powf(psi.a / lo).max(gap.powf(psi.a / hi));
    let summed = 2.0 * (horizon as f64).powf(1.0 - 1.0 / hi) * per_step;
    Ok((per_step, summed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn psi(a1: f64, zeta: f64, gamma: f64) -> IgsParams {
        IgsParams::new(1.0, 1.0, a1, 1.0, 1.0, zeta, gamma)
    }

    #[test]
    fn min_max_examples() {
        assert_eq!(
            min_max_power(1.0, &[1.0, 2.5, 7.0], MinMax::Min).unwrap(),
            1.0
        );
        assert_eq!(
            min_max_power(0.5, &[1.0, 2.0, 3.0], MinMax::Min).unwrap(),
            0.125
        );
        assert_eq!(
            min_max_power(2.0, &[1.0, 2.0, 3.0], MinMax::Min).unwrap(),
            2.0
        );
        assert_eq!(
            min_max_power(-2.0, &[1.0, 2.0, 3.0], MinMax::Max).unwrap(),
            8.0
        );
        assert!(min_max_power(2.0, &[0.5], MinMax::Min)
            .unwrap_err()
            .is_precondition());
    }

    #[test]
    fn gronwall_examples() {
        assert_eq!(gronwall_bound(1.0, 1.0, 5, 0.0).unwrap(), 0.0);
        assert_eq!(gronwall_bound(1.0, 1.0, 2, 1.0).unwrap(), 4.0);
        assert_eq!(gronwall_bound(1.3, 0.2, 1, 2.5).unwrap(), 2.5);
        assert!(gronwall_bound(0.5, 0.25, 3, 1.0)
            .unwrap_err()
            .is_precondition());
    }

    #[test]
    fn input_bound_examples() {
        assert_eq!(
            disc_bound_inputs(&psi(1.0, 5.0, 1.0), 100, 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            disc_bound_inputs(&psi(1.0, 5.0, 1.0), 37, 3.0).unwrap(),
            12.0
        );
        assert_eq!(
            disc_bound_inputs(&psi(2.0, 1.0, 2.0), 16, 1.0).unwrap(),
            32.0
        );
    }

    #[test]
    fn ic_bound_examples() {
        assert_eq!(
            disc_bound_ics(&psi(1.0, 2.0, 1.0), 4, 0.0).unwrap(),
            (0.0, 0.0)
        );
        assert_eq!(
            disc_bound_ics(&psi(1.0, 2.0, 1.0), 4, 3.0).unwrap(),
            (6.0, 12.0)
        );
        let (a, _) = disc_bound_ics(&psi(1.0, 0.3, 1.0), 4, 3.0).unwrap();
        assert_eq!(a, 3.0);
    }
}
