//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use igsil_core::dynamics::{make_p_system, DynamicsSystem, PSystemSpec};
use igsil_core::experiments::random_unstable_pair;
use igsil_core::linalg::DenseMatrix;
use igsil_core::policies::{random_mlp, Activation, AffinePolicy, Policy};

/// Ten-dimensional experiment p-system with its expert `−h`.
pub fn p_experiment(p: f64, seed: u64) -> (DynamicsSystem, Policy) {
    let h = Arc::new(random_mlp(10, 32, 10, Activation::Tanh, seed).expect("valid network shape"));
    let system =
        make_p_system(&PSystemSpec::experiment(p, 10, Some(h.clone()))).expect("valid p-system");
    let expert = AffinePolicy::new(vec![(-1.0, Policy::Mlp(h))])
        .expect("finite weights")
        .into_policy();
    (system, expert)
}

/// Unstable `(A, B)` of the linear study with `Q = νI`, `R = I`.
pub fn lq_instance(
    n: usize,
    d: usize,
    nu: f64,
    seed: u64,
) -> (DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix) {
    let (a, b) = random_unstable_pair(n, d, 3.638, seed).expect("non-nilpotent draw");
    (
        a,
        b,
        DenseMatrix::identity(n).scale(nu),
        DenseMatrix::identity(d),
    )
}
