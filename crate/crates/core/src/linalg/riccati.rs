//! Discrete algebraic Riccati and Lyapunov solvers.

use super::{spectral_radius, DenseMatrix};
use crate::error::{check_dim, Error, Result};

/// Convergence threshold on successive iterates, relative to `max(1, ‖P‖_F)`.
const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITERS: usize = 100_000;
const LYAP_TOL: f64 = 1e-14;
const REFINE_STEPS: usize = 4;

fn check_dare_shapes(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
) -> Result<()> {
    if !a.is_square() {
        return Err(Error::precondition("A must be square"));
    }
    let n = a.rows();
    check_dim("B rows", n, b.rows())?;
    check_dim("Q rows", n, q.rows())?;
    check_dim("Q cols", n, q.cols())?;
    check_dim("R rows", b.cols(), r.rows())?;
    check_dim("R cols", b.cols(), r.cols())?;
    Ok(())
}

/// Solves `P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA` by fixed-point (value)
/// iteration started at `P₀ = Q`.
///
/// Fails with [`Error::NonConvergence`] when the iterates do not settle
/// within 10⁵ steps, which is how a non-stabilizable `(A, B)` shows up.
pub fn solve_dare(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
) -> Result<DenseMatrix> {
    check_dare_shapes(a, b, q, r)?;
    if q.asymmetry() > 1e-10 * q.max_abs().max(1.0) {
        return Err(Error::precondition("Q must be symmetric"));
    }
    if !r.symmetrize().is_positive_definite() {
        return Err(Error::precondition("R must be symmetric positive definite"));
    }

    let mut p = q.symmetrize();
    for _ in 0..DARE_MAX_ITERS {
        let next = riccati_map(a, b, q, r, &p)?;
        if !next.is_finite() {
            break;
        }
        let step = next.sub(&p).frobenius_norm();
        p = next;
        if step < DARE_TOL * p.frobenius_norm().max(1.0) {
            return Ok(refine(a, b, q, r, p));
        }
    }
    Err(Error::NonConvergence {
        iterations: DARE_MAX_ITERS,
        hint: "Riccati iteration did not settle; (A, B) is probably not stabilizable".into(),
    })
}

/// Newton (Hewer) corrections `P ← P + Δ` with `A_clᵀΔA_cl − Δ + (𝓡(P) − P) = 0`,
/// kept only while the residual shrinks. The fixed-point iteration converges
/// linearly, so its stopping rule leaves an error well above roundoff when
/// `‖P‖` is large.
fn refine(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
    mut p: DenseMatrix,
) -> DenseMatrix {
    if b.is_zero() {
        return p;
    }
    let Ok(mut best) = dare_residual(a, b, q, r, &p) else {
        return p;
    };
    for _ in 0..REFINE_STEPS {
        let step = || -> Result<DenseMatrix> {
            let s = r.add(&b.tr_matmul(&p.matmul(b))).symmetrize();
            let k = s.solve_spd(&b.tr_matmul(&p.matmul(a)))?.scale(-1.0);
            let a_cl = a.add(&b.matmul(&k));
            let defect = riccati_map(a, b, q, r, &p)?.sub(&p);
            Ok(p.add(&solve_discrete_lyapunov(&a_cl, &defect)?)
                .symmetrize())
        };
        let Ok(next) = step() else { break };
        match dare_residual(a, b, q, r, &next) {
            Ok(res) if res < best => {
                best = res;
                p = next;
            }
            _ => break,
        }
    }
    p
}

/// One application of the Riccati operator, symmetrized.
fn riccati_map(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
    p: &DenseMatrix,
) -> Result<DenseMatrix> {
    let pa = p.matmul(a);
    let atpa = a.tr_matmul(&pa);
    if b.is_zero() {
        return Ok(q.add(&atpa).symmetrize());
    }
    let btpa = b.tr_matmul(&pa);
    let s = r.add(&b.tr_matmul(&p.matmul(b))).symmetrize();
    let gain = s.solve_spd(&btpa)?;
    Ok(q.add(&atpa).sub(&btpa.tr_matmul(&gain)).symmetrize())
}

/// Frobenius norm of the DARE defining-equation residual at `p`.
pub fn dare_residual(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
    p: &DenseMatrix,
) -> Result<f64> {
    check_dare_shapes(a, b, q, r)?;
    Ok(riccati_map(a, b, q, r, p)?.sub(p).frobenius_norm())
}

/// Optimal LQ state-feedback gain `K = −(R + BᵀPB)⁻¹BᵀPA`, so that `u = Kx`.
///
/// With `B = 0` there is nothing to actuate and the zero gain is returned.
pub fn lqr_gain(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
) -> Result<DenseMatrix> {
    Ok(lqr(a, b, q, r)?.0)
}

/// Riccati solution together with its gain: `(K, P)`.
pub fn lqr(
    a: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
    r: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    check_dare_shapes(a, b, q, r)?;
    if b.is_zero() {
        let p = solve_dare(a, b, q, r)?;
        return Ok((DenseMatrix::zeros(b.cols(), a.rows()), p));
    }
    let p = solve_dare(a, b, q, r)?;
    let s = r.add(&b.tr_matmul(&p.matmul(b))).symmetrize();
    let btpa = b.tr_matmul(&p.matmul(a));
    Ok((s.solve_spd(&btpa)?.scale(-1.0), p))
}

/// Solves `AᵀXA − X + Q = 0` by the doubling iteration
/// `X ← X + AᵀXA, A ← A²`, i.e. `X = Σ_k (Aᵀ)ᵏ Q Aᵏ`.
pub fn solve_discrete_lyapunov(a: &DenseMatrix, q: &DenseMatrix) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::precondition("A must be square"));
    }
    check_dim("Q rows", a.rows(), q.rows())?;
    check_dim("Q cols", a.rows(), q.cols())?;
    let rho = spectral_radius(a)?;
    if !(rho < 1.0) {
        return Err(Error::precondition(format!(
            "discrete Lyapunov equation needs a Schur-stable A, got spectral radius {rho}"
        )));
    }
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..128 {
        let term = ak.tr_matmul(&x.matmul(&ak));
        let size = term.frobenius_norm();
        x = x.add(&term);
        if size < LYAP_TOL * x.frobenius_norm().max(1.0) {
            return Ok(x);
        }
        ak = ak.matmul(&ak);
    }
    Err(Error::NonConvergence {
        iterations: 128,
        hint: "Lyapunov doubling did not converge".into(),
    })
}

/// Frobenius residual of `AᵀXA − X + Q`.
pub fn lyapunov_residual(a: &DenseMatrix, q: &DenseMatrix, x: &DenseMatrix) -> f64 {
    a.tr_matmul(&x.matmul(a)).sub(x).add(q).frobenius_norm()
}
