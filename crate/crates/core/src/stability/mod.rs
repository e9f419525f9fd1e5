//! Incremental gain stability: parameter algebra, incremental Lyapunov
//! certificates, closed-form discrepancy bounds and sampled checkers.

mod bounds;
mod certify;
mod loss;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{solve_discrete_lyapunov, spectral_radius, symmetric_extremes, DenseMatrix};

pub use bounds::{disc_bound_ics, disc_bound_inputs, gronwall_bound, min_max_power, MinMax};
pub use certify::{
    check_contraction_metric, check_igs_on_trajectories, check_lyapunov_decrement, igs_residual,
    CertificationReport, IgsCase, SampleSpec, DEFAULT_TOLERANCE,
};
pub use loss::{discrepancy_sum, imitation_loss, imitation_loss_with, LossMode};

/// `Ψ = (a, a₀, a₁, b₀, b₁, ζ, γ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgsParams {
    pub a: f64,
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
    pub zeta: f64,
    pub gamma: f64,
}

impl IgsParams {
    pub fn new(a: f64, a0: f64, a1: f64, b0: f64, b1: f64, zeta: f64, gamma: f64) -> Self {
        Self {
            a,
            a0,
            a1,
            b0,
            b1,
            zeta,
            gamma,
        }
    }

    /// Exponent structure: all exponents at least 1 with `a₀ ≤ a₁`, `b₀ ≤ b₁`.
    /// `ζ` and `γ` only need to be finite and non-negative here, so that
    /// deliberately broken tuples can still be fed to the checkers.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("a0", self.a0),
            ("a1", self.a1),
            ("b0", self.b0),
            ("b1", self.b1),
        ] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(Error::precondition(format!(
                    "exponent {name} must be a real >= 1, got {v}"
                )));
            }
        }
        if self.a0 > self.a1 || self.b0 > self.b1 {
            return Err(Error::precondition(
                "exponents must satisfy a0 <= a1 and b0 <= b1",
            ));
        }
        if !(self.zeta >= 0.0
            && self.zeta.is_finite()
            && self.gamma >= 0.0
            && self.gamma.is_finite())
        {
            return Err(Error::precondition(
                "zeta and gamma must be finite and non-negative",
            ));
        }
        Ok(())
    }

    /// The restricted form used by the learning guarantees:
    /// `a = a₀`, `b₀ = b₁`, `ζ ≥ 1`, `γ ≥ 1`, `a ≥ b₀`.
    pub fn check_learning_form(&self) -> Result<()> {
        self.validate()?;
        if self.a != self.a0
            || self.b0 != self.b1
            || self.zeta < 1.0
            || self.gamma < 1.0
            || self.a < self.b0
        {
            return Err(Error::precondition(
                "learning guarantees need a = a0, b0 = b1, zeta >= 1, gamma >= 1 and a >= b0",
            ));
        }
        Ok(())
    }

    /// `a ∧ a₀`
    pub fn low(&self) -> f64 {
        self.a.min(self.a0)
    }

    /// `a ∨ a₁`
    pub fn high(&self) -> f64 {
        self.a.max(self.a1)
    }
}

/// Shape of an incremental Lyapunov function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LyapunovForm {
    /// `V(x, y) = ‖x − y‖₂`
    Norm,
    /// `V(x, y) = (x − y)ᵀ X (x − y)`
    Quadratic(DenseMatrix),
}

/// An incremental Lyapunov certificate with its sandwich and decrement
/// constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncLyapunov {
    pub form: LyapunovForm,
    pub a: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub frak_a: f64,
    pub frak_b: f64,
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
}

impl IncLyapunov {
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.form {
            LyapunovForm::Norm => crate::linalg::dist2(x, y),
            LyapunovForm::Quadratic(m) => {
                let e: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                quad(m, &e)
            }
        }
    }

    /// `∂V(x, y)/∂x` written into `out`. The norm form uses the minimum-norm
    /// subgradient `0` at `x = y`.
    pub fn grad_first(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match &self.form {
            LyapunovForm::Norm => {
                let d = crate::linalg::dist2(x, y);
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o = if d > 0.0 { (a - b) / d } else { 0.0 };
                }
            }
            LyapunovForm::Quadratic(m) => {
                let e: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                let me = m.mul_vec(&e);
                let mte = m.tr_mul_vec(&e);
                for ((o, p), q) in out.iter_mut().zip(&me).zip(&mte) {
                    *o = p + q;
                }
            }
        }
    }

    /// `𝔞 min{‖e‖^{a₀}, ‖e‖^{a₁}}`
    pub fn decrease_term(&self, dist: f64) -> f64 {
        self.frak_a
            * min_max_power(dist, &[self.a0, self.a1], MinMax::Min).expect("validated exponents")
    }

    /// `𝔟 max{‖u‖^{b₀}, ‖u‖^{b₁}}`
    pub fn input_term(&self, unorm: f64) -> f64 {
        self.frak_b
            * min_max_power(unorm, &[self.b0, self.b1], MinMax::Max).expect("validated exponents")
    }

    pub fn validate(&self) -> Result<()> {
        IgsParams::new(self.a, self.a0, self.a1, self.b0, self.b1, 0.0, 0.0).validate()?;
        if !(self.alpha_lo > 0.0 && self.alpha_lo <= self.alpha_hi && self.alpha_hi.is_finite()) {
            return Err(Error::precondition(
                "sandwich constants must satisfy 0 < alpha_lo <= alpha_hi",
            ));
        }
        if !(self.frak_a >= 0.0
            && self.frak_b >= 0.0
            && self.frak_a.is_finite()
            && self.frak_b.is_finite())
        {
            return Err(Error::precondition(
                "decrement constants must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

fn quad(m: &DenseMatrix, e: &[f64]) -> f64 {
    m.mul_vec(e).iter().zip(e).map(|(a, b)| a * b).sum()
}

/// `Ψ = (a, a₀, a₁, b₀, b₁, ᾱ/(α̲∧𝔞), 𝔟/(α̲∧𝔞))` from a Lyapunov certificate.
pub fn igs_from_lyapunov(cert: &IncLyapunov) -> Result<IgsParams> {
    cert.validate()?;
    let denom = cert.alpha_lo.min(cert.frak_a);
    if !(denom > 0.0) {
        return Err(Error::precondition(
            "min(alpha_lo, frak_a) must be positive",
        ));
    }
    Ok(IgsParams::new(
        cert.a,
        cert.a0,
        cert.a1,
        cert.b0,
        cert.b1,
        cert.alpha_hi / denom,
        cert.frak_b / denom,
    ))
}

/// IGS constants of an autonomously contracting system with metric bounds
/// `μ̲ I ⪯ M ⪯ μ̄ I`, rate `ρ` and input Lipschitz constant `L_u`.
pub fn contraction_igs_params(rho: f64, mu_lo: f64, mu_hi: f64, l_u: f64) -> Result<IgsParams> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::precondition(format!(
            "contraction rate must lie in (0, 1), got {rho}"
        )));
    }
    if !(mu_lo > 0.0 && mu_lo <= mu_hi && mu_hi.is_finite()) {
        return Err(Error::precondition(
            "metric bounds must satisfy 0 < mu_lo <= mu_hi",
        ));
    }
    if !(l_u > 0.0 && l_u.is_finite()) {
        return Err(Error::precondition(
            "input Lipschitz constant must be positive",
        ));
    }
    let zeta = (mu_hi / mu_lo).sqrt() / (1.0 - rho.sqrt());
    Ok(IgsParams::new(1.0, 1.0, 1.0, 1.0, 1.0, zeta, l_u * zeta))
}

fn check_p_eta(p: f64, eta: f64) -> Result<()> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::precondition(format!(
            "p must be a positive real, got {p}"
        )));
    }
    let limit = crate::dynamics::p_system_eta_limit(p);
    if !(eta > 0.0 && eta < limit) {
        return Err(Error::precondition(format!(
            "stable only as long as 0 < eta < 4/(5+p) = {limit}, got eta = {eta}"
        )));
    }
    Ok(())
}

/// `Ψ = (1, 1, 1+p, 1, 1, 2^{2+p}/η, 2^{2+p})` for the scalar `p` system.
pub fn p_system_igs_params(p: f64, eta: f64) -> Result<IgsParams> {
    check_p_eta(p, eta)?;
    let c = 2f64.powf(2.0 + p);
    Ok(IgsParams::new(1.0, 1.0, 1.0 + p, 1.0, 1.0, c / eta, c))
}

/// `V(x, y) = |x − y|` with `𝔞 = η/2^{2+p}` and `𝔟 = η` for the scalar `p`
/// system.
pub fn p_system_certificate(p: f64, eta: f64) -> Result<IncLyapunov> {
    check_p_eta(p, eta)?;
    Ok(IncLyapunov {
        form: LyapunovForm::Norm,
        a: 1.0,
        alpha_lo: 1.0,
        alpha_hi: 1.0,
        frak_a: eta / 2f64.powf(2.0 + p),
        frak_b: eta,
        a0: 1.0,
        a1: 1.0 + p,
        b0: 1.0,
        b1: 1.0,
    })
}

/// Quadratic certificate for a stable linear closed loop `A_cl`, robust to
/// additive input perturbations.
///
/// Solves `A_clᵀ X A_cl − X + Q = 0` with `Q = (1 − γ²)P★ + εI`. With
/// `a = a₀ = a₁ = b₀ = b₁ = 2`, the sandwich constants are the extreme
/// eigenvalues of `X`, and Young's inequality on the cross term gives
/// `𝔞 = λmin(Q)/2` and `𝔟 = (1 + 2λmax(X)/λmin(Q)) λmax(X)` for the
/// additively driven closed loop.
pub fn build_robust_lqr_certificate(
    a_cl: &DenseMatrix,
    p_star: &DenseMatrix,
    gamma: f64,
    eps: f64,
) -> Result<IncLyapunov> {
    if !a_cl.is_square() {
        return Err(Error::precondition("closed-loop matrix must be square"));
    }
    check_dim("P rows", a_cl.rows(), p_star.rows())?;
    check_dim("P cols", a_cl.rows(), p_star.cols())?;
    let rho = spectral_radius(a_cl)?;
    if !(rho < 1.0) {
        return Err(Error::precondition(format!(
            "closed loop is not stable: spectral radius {rho}"
        )));
    }
    if !(gamma > rho && gamma < 1.0) {
        return Err(Error::precondition(format!(
            "gamma must lie in (rho(A_cl), 1) = ({rho}, 1), got {gamma}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::precondition("eps must be positive"));
    }
    if !p_star.symmetrize().is_positive_definite() {
        return Err(Error::precondition("P must be symmetric positive definite"));
    }
    let n = a_cl.rows();
    let q = p_star
        .scale(1.0 - gamma * gamma)
        .add(&DenseMatrix::identity(n).scale(eps))
        .symmetrize();
    let x = solve_discrete_lyapunov(a_cl, &q)?.symmetrize();
    let (lo, hi) = symmetric_extremes(&x);
    let (q_lo, _) = symmetric_extremes(&q);
    Ok(IncLyapunov {
        form: LyapunovForm::Quadratic(x),
        a: 2.0,
        alpha_lo: lo,
        alpha_hi: hi,
        frak_a: q_lo / 2.0,
        frak_b: (1.0 + 2.0 * hi / q_lo) * hi,
        a0: 2.0,
        a1: 2.0,
        b0: 2.0,
        b1: 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_to_igs() {
        let base = p_system_certificate(1.0, 0.5).unwrap();
        let unit = IncLyapunov {
            alpha_lo: 1.0,
            alpha_hi: 1.0,
            frak_a: 1.0,
            frak_b: 1.0,
            ..base.clone()
        };
        let psi = igs_from_lyapunov(&unit).unwrap();
        assert_eq!((psi.zeta, psi.gamma), (1.0, 1.0));

        let custom = IncLyapunov {
            a1: 2.0,
            alpha_lo: 1.0,
            alpha_hi: 2.0,
            frak_a: 0.5,
            frak_b: 3.0,
            ..base.clone()
        };
        assert_eq!(
            igs_from_lyapunov(&custom).unwrap(),
            IgsParams::new(1.0, 1.0, 2.0, 1.0, 1.0, 4.0, 6.0)
        );

        let psi = igs_from_lyapunov(&base).unwrap();
        assert_eq!((psi.zeta, psi.gamma), (16.0, 8.0));
        assert_eq!(psi, p_system_igs_params(1.0, 0.5).unwrap());
    }

    #[test]
    fn p_system_params() {
        assert_eq!(
            p_system_igs_params(1.0, 0.5).unwrap(),
            IgsParams::new(1.0, 1.0, 2.0, 1.0, 1.0, 16.0, 8.0)
        );
        assert_eq!(
            p_system_igs_params(2.0, 0.5).unwrap(),
            IgsParams::new(1.0, 1.0, 3.0, 1.0, 1.0, 32.0, 16.0)
        );
        let err = p_system_igs_params(1.0, 4.0 / 6.0).unwrap_err();
        assert!(err.to_string().contains("as long as 0 < eta < 4/(5+p)"));
    }

    #[test]
    fn contraction_params() {
        let psi = contraction_igs_params(0.25, 1.0, 4.0, 2.0).unwrap();
        assert_eq!(psi, IgsParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 4.0, 8.0));
        let same = contraction_igs_params(0.36, 2.0, 2.0, 1.0).unwrap();
        assert!((same.zeta - 1.0 / (1.0 - 0.6)).abs() < 1e-15);
        assert!(contraction_igs_params(1.0, 1.0, 1.0, 1.0)
            .unwrap_err()
            .is_precondition());
        // ζ approaches √(μ̄/μ̲) as ρ → 0
        let tiny = contraction_igs_params(1e-20, 1.0, 9.0, 1.0).unwrap();
        assert!((tiny.zeta - 3.0).abs() < 1e-9);
    }

    #[test]
    fn robust_certificate_scalar() {
        let a = DenseMatrix::diagonal(&[0.5]);
        let cert =
            build_robust_lqr_certificate(&a, &DenseMatrix::identity(1), 0.75f64.sqrt(), 0.25)
                .unwrap();
        let LyapunovForm::Quadratic(x) = &cert.form else {
            panic!("quadratic expected")
        };
        assert!((x[(0, 0)] - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(cert.a, 2.0);
        assert!(build_robust_lqr_certificate(
            &DenseMatrix::diagonal(&[1.2]),
            &DenseMatrix::identity(1),
            0.9,
            0.1
        )
        .unwrap_err()
        .is_precondition());
        let small = build_robust_lqr_certificate(&a, &DenseMatrix::identity(1), 1.0 - 1e-12, 1e-12)
            .unwrap();
        assert!(small.alpha_hi < 1e-10);
    }

    #[test]
    fn norm_gradient_convention() {
        let cert = p_system_certificate(1.0, 0.5).unwrap();
        let mut g = [9.0];
        cert.grad_first(&[1.0], &[1.0], &mut g);
        assert_eq!(g, [0.0]);
        cert.grad_first(&[-2.0], &[1.0], &mut g);
        assert_eq!(g, [-1.0]);
    }
}
