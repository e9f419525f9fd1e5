use std::fmt;
use std::sync::Arc;

use super::{DynamicsSystem, SystemBounds, SystemKind};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{spectral_radius, symmetric_extremes, DenseMatrix};
use crate::policies::MlpPolicy;

fn operator_norm(m: &DenseMatrix) -> f64 {
    symmetric_extremes(&m.tr_matmul(m)).1.max(0.0).sqrt()
}

/// `x' = Ax + Bu`.
pub fn make_lti(a: DenseMatrix, b: DenseMatrix) -> Result<DynamicsSystem> {
    if !a.is_square() {
        return Err(Error::precondition(format!(
            "A must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    check_dim("B rows", a.rows(), b.rows())?;
    let bounds = SystemBounds {
        gain_bound: Some(operator_norm(&b)),
        lipschitz: Some(operator_norm(&a)),
    };
    let (n, d) = (a.rows(), b.cols());
    Ok(DynamicsSystem::from_kind(n, d, SystemKind::Lti { a, b }, "linear").with_bounds(bounds))
}

/// Which member of the tunable `p` family to build.
#[derive(Clone, Debug)]
pub enum PVariant {
    /// Scalar `x − η x|x|^p/(1+|x|^p) + η u`; requires `0 < η < 4/(5+p)`.
    Prop6 { eta: f64 },
    /// Element-wise `x − ½x|x|^p/(1+½|x|^p) + (h(x) + u)/(1+|x|^p)` on `ℝ^dim`.
    Experiment {
        dim: usize,
        h: Option<Arc<MlpPolicy>>,
    },
}

#[derive(Clone, Debug)]
pub struct PSystemSpec {
    pub p: f64,
    pub variant: PVariant,
}

impl PSystemSpec {
    pub fn prop6(p: f64, eta: f64) -> Self {
        Self {
            p,
            variant: PVariant::Prop6 { eta },
        }
    }

    pub fn experiment(p: f64, dim: usize, h: Option<Arc<MlpPolicy>>) -> Self {
        Self {
            p,
            variant: PVariant::Experiment { dim, h },
        }
    }
}

/// Largest step size for which the scalar `p` system keeps its stability
/// guarantee (exclusive).
pub fn p_system_eta_limit(p: f64) -> f64 {
    4.0 / (5.0 + p)
}

pub fn make_p_system(spec: &PSystemSpec) -> Result<DynamicsSystem> {
    let p = spec.p;
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::precondition(format!(
            "p must be a positive real, got {p}"
        )));
    }
    match &spec.variant {
        PVariant::Prop6 { eta } => {
            let eta = *eta;
            if !(eta > 0.0 && eta < p_system_eta_limit(p)) {
                return Err(Error::precondition(format!(
                    "step size {eta} outside the stable range: requires 0 < eta < 4/(5+p) = {}",
                    p_system_eta_limit(p)
                )));
            }
            // f' = 1 − η h'(x) stays in (0, 1] on this step-size range
            let bounds = SystemBounds {
                gain_bound: Some(eta),
                lipschitz: Some(1.0),
            };
            Ok(DynamicsSystem::from_kind(
                1,
                1,
                SystemKind::PScalar { p, eta },
                format!("p-system (p={p}, eta={eta})"),
            )
            .with_bounds(bounds))
        }
        PVariant::Experiment { dim, h } => {
            if *dim == 0 {
                return Err(Error::precondition("state dimension must be positive"));
            }
            if let Some(h) = h {
                check_dim("h input dimension", *dim, h.in_dim())?;
                check_dim("h output dimension", *dim, h.out_dim())?;
            }
            let bounds = SystemBounds {
                gain_bound: Some(1.0),
                lipschitz: None,
            };
            Ok(DynamicsSystem::from_kind(
                *dim,
                *dim,
                SystemKind::PExperiment { p, h: h.clone() },
                format!("p-system experiment (p={p}, n={dim})"),
            )
            .with_bounds(bounds))
        }
    }
}

/// A state-dependent positive-definite metric `M(x)`.
pub type MetricFn = dyn Fn(&[f64]) -> DenseMatrix + Send + Sync;

#[derive(Clone)]
pub enum Metric {
    Identity(usize),
    Constant(DenseMatrix),
    /// Scalar `M(x) = 2 / (1 + e^{−|x|})`.
    LogScalar,
    Custom(Arc<MetricFn>),
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Identity(n) => write!(f, "Identity({n})"),
            Metric::Constant(m) => write!(f, "Constant({m:?})"),
            Metric::LogScalar => write!(f, "LogScalar"),
            Metric::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Metric {
    pub fn at(&self, x: &[f64]) -> DenseMatrix {
        match self {
            Metric::Identity(n) => DenseMatrix::identity(*n),
            Metric::Constant(m) => m.clone(),
            Metric::LogScalar => DenseMatrix::diagonal(&[2.0 / (1.0 + (-x[0].abs()).exp())]),
            Metric::Custom(f) => f(x),
        }
    }
}

/// The three autonomously contracting families with their parameters.
#[derive(Clone, Debug)]
pub enum ContractingKind {
    /// `f(x, u) = log(1 + x²) + u`.
    LogSystem,
    /// `f(x, u) = x − η(Qx + u)`, gradient descent on `½xᵀQx`.
    GradientDescent { q: DenseMatrix, eta: f64 },
    /// `f(x, u) = A_{i(x)} x + Bu` where region `i(x)` maximizes `cᵢᵀx`, with
    /// a common quadratic certificate `P`.
    PiecewiseLinear {
        modes: Vec<DenseMatrix>,
        normals: Vec<Vec<f64>>,
        b: DenseMatrix,
        p: DenseMatrix,
    },
}

#[derive(Clone, Debug)]
pub struct ContractingExample {
    pub system: DynamicsSystem,
    pub metric: Metric,
}

pub fn make_contracting_example(kind: ContractingKind) -> Result<ContractingExample> {
    match kind {
        ContractingKind::LogSystem => Ok(ContractingExample {
            system: DynamicsSystem::from_kind(1, 1, SystemKind::Log, "log system").with_bounds(
                SystemBounds {
                    gain_bound: Some(1.0),
                    lipschitz: Some(1.0),
                },
            ),
            metric: Metric::LogScalar,
        }),
        ContractingKind::GradientDescent { q, eta } => {
            if !q.is_square() || q.asymmetry() > 1e-12 * q.max_abs().max(1.0) {
                return Err(Error::precondition(
                    "the Hessian Q must be square and symmetric",
                ));
            }
            let (mu, l) = symmetric_extremes(&q);
            if !(mu > 0.0) {
                return Err(Error::precondition(format!(
                    "the potential must be strongly convex, got λmin(Q) = {mu}"
                )));
            }
            if !(eta > 0.0 && eta <= (1.0 / l) * (1.0 + 1e-12)) {
                return Err(Error::precondition(format!(
                    "step size must satisfy 0 < eta <= 1/L = {}",
                    1.0 / l
                )));
            }
            let n = q.rows();
            let lipschitz = (1.0 - eta * mu).abs().max((1.0 - eta * l).abs());
            Ok(ContractingExample {
                system: DynamicsSystem::from_kind(
                    n,
                    n,
                    SystemKind::GradientDescent { q, eta },
                    "gradient descent",
                )
                .with_bounds(SystemBounds {
                    gain_bound: Some(eta),
                    lipschitz: Some(lipschitz),
                }),
                metric: Metric::Identity(n),
            })
        }
        ContractingKind::PiecewiseLinear {
            modes,
            normals,
            b,
            p,
        } => {
            if modes.is_empty() {
                return Err(Error::precondition(
                    "a piecewise linear system needs at least one mode",
                ));
            }
            check_dim("region normals", modes.len(), normals.len())?;
            let n = modes[0].rows();
            check_dim("B rows", n, b.rows())?;
            check_dim("P rows", n, p.rows())?;
            check_dim("P cols", n, p.cols())?;
            if !p.symmetrize().is_positive_definite() || p.asymmetry() > 1e-12 * p.max_abs() {
                return Err(Error::precondition(
                    "the common certificate P must be symmetric positive definite",
                ));
            }
            for (i, (a, c)) in modes.iter().zip(&normals).enumerate() {
                check_dim("mode rows", n, a.rows())?;
                check_dim("mode cols", n, a.cols())?;
                check_dim("region normal length", n, c.len())?;
                if spectral_radius(a)? >= 1.0 {
                    return Err(Error::precondition(format!("mode {i} is not Schur stable")));
                }
                if !p
                    .sub(&a.tr_matmul(&p.matmul(a)))
                    .symmetrize()
                    .is_positive_definite()
                {
                    return Err(Error::precondition(format!(
                        "P is not a decreasing certificate for mode {i}"
                    )));
                }
            }
            let d = b.cols();
            let lipschitz = modes.iter().map(operator_norm).fold(0.0, f64::max);
            let bounds = SystemBounds {
                gain_bound: Some(operator_norm(&b)),
                lipschitz: Some(lipschitz),
            };
            Ok(ContractingExample {
                system: DynamicsSystem::from_kind(
                    n,
                    d,
                    SystemKind::PiecewiseLinear { modes, normals, b },
                    "piecewise linear",
                )
                .with_bounds(bounds),
                metric: Metric::Constant(p),
            })
        }
    }
}
