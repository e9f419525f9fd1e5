use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{min_max_power, IgsParams, IncLyapunov, MinMax};
use crate::dynamics::{rollout_open, DynamicsSystem, Metric, StepScratch};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist2, norm2, symmetric_extremes, DenseMatrix};
use crate::rng::{self, Stream};

/// Residuals up to this value count as "holds".
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Finite-difference step for contraction Jacobians.
const FD_STEP: f64 = 1e-6;

/// Outcome of a sampled falsification test of an inequality `LHS ≤ RHS`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub samples: usize,
    pub violations: usize,
    /// `max(LHS − RHS)` over all samples; `+∞` (serialized as `null`) when a
    /// sample could not be evaluated.
    pub worst_residual: f64,
    /// The sample achieving the worst residual (lowest index on ties).
    pub witness: Value,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }
}

/// Sample count, seed and acceptance tolerance of a checker run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSpec {
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl SampleSpec {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    /// The independent stream of sample `i`.
    pub fn stream(&self, i: usize) -> Stream {
        rng::stream(self.seed, &[rng::tags::SAMPLER, i as u64])
    }
}

/// Evaluates `residual(i)` for every sample in parallel and merges
/// deterministically. `eval(i, true)` must also produce the witness.
fn falsify<F>(spec: &SampleSpec, eval: F) -> CertificationReport
where
    F: Fn(usize, bool) -> (f64, bool, Option<Value>) + Sync,
{
    let outcomes: Vec<(f64, bool)> = (0..spec.samples)
        .into_par_iter()
        .map(|i| {
            let (r, violated, _) = eval(i, false);
            (if r.is_nan() { f64::INFINITY } else { r }, violated)
        })
        .collect();
    let violations = outcomes.iter().filter(|(_, v)| *v).count();
    let mut worst = (f64::NEG_INFINITY, usize::MAX);
    for (i, (r, _)) in outcomes.iter().enumerate() {
        if *r > worst.0 {
            worst = (*r, i);
        }
    }
    let witness = if worst.1 == usize::MAX {
        Value::Null
    } else {
        eval(worst.1, true).2.unwrap_or(Value::Null)
    };
    CertificationReport {
        samples: spec.samples,
        violations,
        worst_residual: worst.0,
        witness,
    }
}

/// One falsification case for the IGS inequality: perturbed initial
/// condition `xi1` driven by `inputs`, against `xi2` driven by zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgsCase {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
}

/// Largest `LHS_T − RHS_T` over all prefixes `T` of the case, where
/// `LHS_T = Σ_{t≤T} min{‖Δ_t‖^{a∧a₀}, ‖Δ_t‖^{a∨a₁}}` and
/// `RHS_T = ζ‖ξ₁−ξ₂‖^a + γ Σ_{t<T} max{‖u_t‖^{b₀}, ‖u_t‖^{b₁}}`.
pub fn igs_residual(psi: &IgsParams, system: &DynamicsSystem, case: &IgsCase) -> Result<f64> {
    psi.validate()?;
    let driven = rollout_open(system, &case.xi1, &case.inputs)?;
    let zeros = vec![vec![0.0; system.input_dim()]; case.inputs.len()];
    let free = rollout_open(system, &case.xi2, &zeros)?;
    let (lo, hi) = (psi.low(), psi.high());
    let mut lhs = 0.0;
    let mut rhs = psi.zeta * dist2(&case.xi1, &case.xi2).powf(psi.a);
    let mut worst = f64::NEG_INFINITY;
    for t in 0..driven.states.len() {
        let d = dist2(&driven.states[t], &free.states[t]);
        lhs += min_max_power(d, &[lo, hi], MinMax::Min)?;
        worst = worst.max(lhs - rhs);
        if let Some(u) = case.inputs.get(t) {
            rhs += psi.gamma * min_max_power(norm2(u), &[psi.b0, psi.b1], MinMax::Max)?;
        }
    }
    Ok(worst)
}

/// Sampled test of the IGS inequality for every horizon up to each case's
/// length. A diverging rollout is recorded as a violation.
pub fn check_igs_on_trajectories<S>(
    psi: &IgsParams,
    system: &DynamicsSystem,
    spec: &SampleSpec,
    sampler: S,
) -> Result<CertificationReport>
where
    S: Fn(usize, &mut Stream) -> IgsCase + Sync,
{
    psi.validate()?;
    Ok(falsify(spec, |i, want| {
        let case = sampler(i, &mut spec.stream(i));
        let witness = |extra: Value| json!({ "index": i, "case": case, "detail": extra });
        match igs_residual(psi, system, &case) {
            Ok(r) => (r, r > spec.tolerance, want.then(|| witness(Value::Null))),
            Err(Error::Divergence { step }) => (
                f64::INFINITY,
                true,
                want.then(|| witness(json!({ "diverged_at": step }))),
            ),
            Err(e) => (
                f64::INFINITY,
                true,
                want.then(|| witness(json!({ "error": e.to_string() }))),
            ),
        }
    }))
}

/// Sampled test of the incremental Lyapunov decrement
/// `V(f(x,u), f(y,0)) − V(x,y) ≤ −𝔞 min{‖x−y‖^{a₀}, ‖x−y‖^{a₁}} + 𝔟 max{‖u‖^{b₀}, ‖u‖^{b₁}}`.
pub fn check_lyapunov_decrement<S>(
    cert: &IncLyapunov,
    system: &DynamicsSystem,
    spec: &SampleSpec,
    sampler: S,
) -> Result<CertificationReport>
where
    S: Fn(usize, &mut Stream) -> (Vec<f64>, Vec<f64>, Vec<f64>) + Sync,
{
    cert.validate()?;
    let (n, d) = (system.state_dim(), system.input_dim());
    Ok(falsify(spec, |i, want| {
        let (x, y, u) = sampler(i, &mut spec.stream(i));
        if x.len() != n || y.len() != n || u.len() != d {
            return (
                f64::INFINITY,
                true,
                want.then(|| json!({ "index": i, "error": "sample dimension mismatch" })),
            );
        }
        let mut scratch = StepScratch::default();
        let (mut fx, mut fy) = (vec![0.0; n], vec![0.0; n]);
        system.step_into(&x, &u, &mut fx, &mut scratch);
        system.step_into(&y, &vec![0.0; d], &mut fy, &mut scratch);
        let lhs = cert.value(&fx, &fy) - cert.value(&x, &y);
        let rhs = -cert.decrease_term(dist2(&x, &y)) + cert.input_term(norm2(&u));
        let r = lhs - rhs;
        (
            r,
            !(r <= spec.tolerance),
            want.then(|| json!({ "index": i, "x": x, "y": y, "u": u, "lhs": lhs, "rhs": rhs })),
        )
    }))
}

/// Central finite-difference Jacobian of the drift `x ↦ f(x, 0)`.
fn drift_jacobian(system: &DynamicsSystem, x: &[f64]) -> DenseMatrix {
    let n = system.state_dim();
    let zero = vec![0.0; system.input_dim()];
    let mut scratch = StepScratch::default();
    let mut jac = DenseMatrix::zeros(n, n);
    let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
    for j in 0..n {
        xp[j] = x[j] + FD_STEP;
        xm[j] = x[j] - FD_STEP;
        system.step_into(&xp, &zero, &mut fp, &mut scratch);
        system.step_into(&xm, &zero, &mut fm, &mut scratch);
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * FD_STEP);
        }
        xp[j] = x[j];
        xm[j] = x[j];
    }
    jac
}

/// Sampled test of `J(x)ᵀ M(f(x,0)) J(x) ⪯ ρ M(x)` with a finite-difference
/// Jacobian. The matrix inequality is decided by a Cholesky factorization of
/// `ρM(x) − JᵀM(f)J + slack·I` with `slack = spec.tolerance`; the residual is
/// `−λmin(ρM(x) − JᵀM(f)J)`.
pub fn check_contraction_metric<S>(
    system: &DynamicsSystem,
    metric: &Metric,
    rho: f64,
    spec: &SampleSpec,
    sampler: S,
) -> Result<CertificationReport>
where
    S: Fn(usize, &mut Stream) -> Vec<f64> + Sync,
{
    if !(rho > 0.0) {
        return Err(Error::precondition("contraction rate must be positive"));
    }
    let n = system.state_dim();
    check_dim("metric dimension", n, metric.at(&vec![0.0; n]).rows())?;
    Ok(falsify(spec, |i, want| {
        let x = sampler(i, &mut spec.stream(i));
        let m_x = metric.at(&x);
        if !m_x.symmetrize().is_positive_definite() {
            return (
                f64::INFINITY,
                true,
                want.then(
                    || json!({ "index": i, "x": x, "error": "metric not positive definite" }),
                ),
            );
        }
        let jac = drift_jacobian(system, &x);
        let fx = system.drift(&x).expect("sampler dimension");
        let pulled = jac.tr_matmul(&metric.at(&fx).matmul(&jac));
        let gap = m_x.scale(rho).sub(&pulled).symmetrize();
        let residual = -symmetric_extremes(&gap).0;
        let holds = gap.add_diagonal(spec.tolerance).cholesky().is_some();
        let violated = !holds || residual > spec.tolerance;
        (
            residual,
            violated,
            want.then(|| json!({ "index": i, "x": x, "min_eigenvalue": -residual })),
        )
    }))
}
