//! Discrete-time control-affine systems `x' = f(x) + g(x)u`, the bundled
//! example systems, and rollout operators.

mod examples;
mod trajectory;

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Result};
use crate::linalg::DenseMatrix;
use crate::policies::{EvalScratch, MlpPolicy, MlpScratch, Policy};

pub use examples::{
    make_contracting_example, make_lti, make_p_system, p_system_eta_limit, ContractingExample,
    ContractingKind, Metric, MetricFn, PSystemSpec, PVariant,
};
pub use trajectory::{
    rollout_closed, rollout_closed_guarded, rollout_open, GuardedRollout, Trajectory,
    DIVERGENCE_THRESHOLD,
};

/// Known regularity constants of a system, when available.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SystemBounds {
    /// Operator-norm bound on `g(x)`.
    pub gain_bound: Option<f64>,
    /// Lipschitz constant of `f`.
    pub lipschitz: Option<f64>,
}

pub type DriftFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
pub type GainFn = dyn Fn(&[f64]) -> DenseMatrix + Send + Sync;

#[derive(Clone)]
pub(crate) enum SystemKind {
    Lti {
        a: DenseMatrix,
        b: DenseMatrix,
    },
    /// `x − η x|x|^p/(1+|x|^p) + η u`, scalar.
    PScalar {
        p: f64,
        eta: f64,
    },
    /// Element-wise `x − ½x|x|^p/(1+½|x|^p) + (h(x) + u)/(1+|x|^p)`.
    PExperiment {
        p: f64,
        h: Option<Arc<MlpPolicy>>,
    },
    /// `log(1 + x²) + u`, scalar.
    Log,
    /// `x − η(Qx + u)`.
    GradientDescent {
        q: DenseMatrix,
        eta: f64,
    },
    /// `A_{i(x)} x + B u` with `i(x) = argmax_i cᵢᵀx`.
    PiecewiseLinear {
        modes: Vec<DenseMatrix>,
        normals: Vec<Vec<f64>>,
        b: DenseMatrix,
    },
    /// `f(x) + g(x)π(x) + v`, driven additively by `v`.
    ClosedLoop {
        open: Arc<DynamicsSystem>,
        policy: Policy,
    },
    Custom {
        drift: Arc<DriftFn>,
        gain: Arc<GainFn>,
    },
}

/// A control-affine map pair `(f, g)` with its dimensions.
///
/// Systems are immutable and cheap to clone.
#[derive(Clone)]
pub struct DynamicsSystem {
    state_dim: usize,
    input_dim: usize,
    pub(crate) kind: SystemKind,
    bounds: SystemBounds,
    name: String,
}

impl fmt::Debug for DynamicsSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicsSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("bounds", &self.bounds)
            .finish()
    }
}

/// Buffers reused across [`DynamicsSystem::step_into`] calls.
#[derive(Clone, Debug, Default)]
pub struct StepScratch {
    pub(crate) policy: EvalScratch,
    pub(crate) buf: Vec<f64>,
    mlp: MlpScratch,
    inner: Option<Box<StepScratch>>,
}

#[inline]
fn p_shape(x: f64, p: f64) -> f64 {
    // x|x|^p / (1 + |x|^p)
    let s = x.abs().powf(p);
    x * s / (1.0 + s)
}

impl DynamicsSystem {
    pub(crate) fn from_kind(
        state_dim: usize,
        input_dim: usize,
        kind: SystemKind,
        name: impl Into<String>,
    ) -> Self {
        Self {
            state_dim,
            input_dim,
            kind,
            bounds: SystemBounds::default(),
            name: name.into(),
        }
    }

    /// A system from arbitrary drift and gain closures.
    pub fn custom(
        state_dim: usize,
        input_dim: usize,
        drift: Arc<DriftFn>,
        gain: Arc<GainFn>,
        name: impl Into<String>,
    ) -> Self {
        Self::from_kind(
            state_dim,
            input_dim,
            SystemKind::Custom { drift, gain },
            name,
        )
    }

    pub fn with_bounds(mut self, bounds: SystemBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn bounds(&self) -> SystemBounds {
        self.bounds
    }
    pub fn name(&self) -> &str {
        &self.name
    }

    /// The `(f + gπ, Id)` system: closed loop under `policy`, with the new
    /// input added directly to the state update.
    pub fn closed_loop(&self, policy: &Policy) -> Result<DynamicsSystem> {
        check_dim("policy input dimension", self.state_dim, policy.in_dim())?;
        check_dim("policy output dimension", self.input_dim, policy.out_dim())?;
        Ok(Self::from_kind(
            self.state_dim,
            self.state_dim,
            SystemKind::ClosedLoop {
                open: Arc::new(self.clone()),
                policy: policy.clone(),
            },
            format!("{} (closed loop)", self.name),
        ))
    }

    /// The `(A, B)` pair of a linear system.
    pub fn lti_matrices(&self) -> Option<(&DenseMatrix, &DenseMatrix)> {
        match &self.kind {
            SystemKind::Lti { a, b } => Some((a, b)),
            _ => None,
        }
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("x", self.state_dim, x.len())?;
        let mut out = vec![0.0; self.state_dim];
        self.step_into(
            x,
            &vec![0.0; self.input_dim],
            &mut out,
            &mut StepScratch::default(),
        );
        Ok(out)
    }

    pub fn input_gain(&self, x: &[f64]) -> Result<DenseMatrix> {
        check_dim("x", self.state_dim, x.len())?;
        Ok(match &self.kind {
            SystemKind::Lti { b, .. } | SystemKind::PiecewiseLinear { b, .. } => b.clone(),
            SystemKind::PScalar { eta, .. } => DenseMatrix::diagonal(&[*eta]),
            SystemKind::PExperiment { p, .. } => DenseMatrix::diagonal(
                &x.iter()
                    .map(|xi| 1.0 / (1.0 + xi.abs().powf(*p)))
                    .collect::<Vec<_>>(),
            ),
            SystemKind::Log | SystemKind::ClosedLoop { .. } => {
                DenseMatrix::identity(self.state_dim)
            }
            SystemKind::GradientDescent { eta, .. } => {
                DenseMatrix::identity(self.state_dim).scale(-eta)
            }
            SystemKind::Custom { gain, .. } => gain(x),
        })
    }

    /// `g(x) v` written into `out` (overwritten).
    pub fn apply_gain_into(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        match &self.kind {
            SystemKind::Lti { b, .. } | SystemKind::PiecewiseLinear { b, .. } => {
                b.mul_vec_into(v, out)
            }
            SystemKind::PScalar { eta, .. } => out[0] = eta * v[0],
            SystemKind::PExperiment { p, .. } => {
                for ((o, xi), vi) in out.iter_mut().zip(x).zip(v) {
                    *o = vi / (1.0 + xi.abs().powf(*p));
                }
            }
            SystemKind::Log | SystemKind::ClosedLoop { .. } => out.copy_from_slice(v),
            SystemKind::GradientDescent { eta, .. } => {
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = -eta * vi;
                }
            }
            SystemKind::Custom { gain, .. } => gain(x).mul_vec_into(v, out),
        }
    }

    /// `f(x) + g(x)u`.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim("x", self.state_dim, x.len())?;
        check_dim("u", self.input_dim, u.len())?;
        let mut out = vec![0.0; self.state_dim];
        self.step_into(x, u, &mut out, &mut StepScratch::default());
        Ok(out)
    }

    /// Unchecked fused update `out = f(x) + g(x)u`.
    pub fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64], scratch: &mut StepScratch) {
        match &self.kind {
            SystemKind::Lti { a, b } => {
                a.mul_vec_into(x, out);
                scratch.buf.resize(self.state_dim, 0.0);
                b.mul_vec_into(u, &mut scratch.buf);
                out.iter_mut()
                    .zip(&scratch.buf)
                    .for_each(|(o, bu)| *o += bu);
            }
            SystemKind::PScalar { p, eta } => {
                out[0] = x[0] - eta * p_shape(x[0], *p) + eta * u[0];
            }
            SystemKind::PExperiment { p, h } => {
                scratch.buf.resize(self.state_dim, 0.0);
                match h {
                    Some(h) => h.forward(x, &mut scratch.buf, &mut scratch.mlp),
                    None => scratch.buf.iter_mut().for_each(|v| *v = 0.0),
                }
                for i in 0..self.state_dim {
                    let s = x[i].abs().powf(*p);
                    out[i] = x[i] - 0.5 * x[i] * s / (1.0 + 0.5 * s)
                        + (scratch.buf[i] + u[i]) / (1.0 + s);
                }
            }
            SystemKind::Log => out[0] = (1.0 + x[0] * x[0]).ln() + u[0],
            SystemKind::GradientDescent { q, eta } => {
                q.mul_vec_into(x, out);
                for i in 0..self.state_dim {
                    out[i] = x[i] - eta * (out[i] + u[i]);
                }
            }
            SystemKind::PiecewiseLinear { modes, normals, b } => {
                let mode = active_mode(normals, x);
                modes[mode].mul_vec_into(x, out);
                scratch.buf.resize(self.state_dim, 0.0);
                b.mul_vec_into(u, &mut scratch.buf);
                out.iter_mut()
                    .zip(&scratch.buf)
                    .for_each(|(o, bu)| *o += bu);
            }
            SystemKind::ClosedLoop { open, policy } => {
                let mut pi = std::mem::take(&mut scratch.buf);
                pi.resize(open.input_dim, 0.0);
                policy.eval_into(x, &mut pi, &mut scratch.policy);
                let inner = scratch.inner.get_or_insert_with(Default::default);
                open.step_into(x, &pi, out, inner);
                out.iter_mut().zip(u).for_each(|(o, v)| *o += v);
                scratch.buf = pi;
            }
            SystemKind::Custom { drift, gain } => {
                let f = drift(x);
                let g = gain(x);
                let gu = g.mul_vec(u);
                for i in 0..self.state_dim {
                    out[i] = f[i] + gu[i];
                }
            }
        }
    }
}

/// Index of the region containing `x`: the largest `cᵢᵀx`, ties to the
/// lowest index.
fn active_mode(normals: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, c) in normals.iter().enumerate() {
        let v: f64 = c.iter().zip(x).map(|(a, b)| a * b).sum();
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_rejects_bad_dimensions() {
        let sys = make_lti(DenseMatrix::identity(2), DenseMatrix::zeros(2, 1)).unwrap();
        let err = sys.step(&[1.0], &[0.0]).unwrap_err();
        assert!(err.to_string().contains('x'));
        let err = sys.step(&[1.0, 2.0], &[0.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains('u'));
    }

    #[test]
    fn closed_loop_adds_input_directly() {
        let sys = make_lti(
            DenseMatrix::identity(1).scale(0.5),
            DenseMatrix::identity(1),
        )
        .unwrap();
        let k = Policy::linear(DenseMatrix::from_rows(&[vec![-0.25]]).unwrap());
        let cl = sys.closed_loop(&k).unwrap();
        assert_eq!(cl.step(&[4.0], &[1.0]).unwrap(), vec![2.0]);
        assert_eq!(cl.input_gain(&[4.0]).unwrap(), DenseMatrix::identity(1));
    }

    #[test]
    fn piecewise_mode_selection() {
        let normals = vec![vec![1.0], vec![-1.0]];
        assert_eq!(active_mode(&normals, &[2.0]), 0);
        assert_eq!(active_mode(&normals, &[-2.0]), 1);
        assert_eq!(active_mode(&normals, &[0.0]), 0);
    }
}
