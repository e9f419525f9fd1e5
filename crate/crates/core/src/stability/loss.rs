use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsSystem, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist2, norm2};
use crate::policies::{EvalScratch, Policy};

/// How a policy difference is measured along a rollout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `‖g(x)(π₁(x) − π₂(x))‖₂`, the difference as it enters the dynamics.
    #[default]
    ModelBased,
    /// `‖π₁(x) − π₂(x)‖₂`, no model required.
    ModelFree,
}

impl LossMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "model_based" => Ok(LossMode::ModelBased),
            "model_free" => Ok(LossMode::ModelFree),
            other => Err(Error::Parse(format!("unknown loss mode `{other}`"))),
        }
    }
}

/// `Σ_{t=0}^{T} ‖t1.states[t] − t2.states[t]‖₂`.
pub fn discrepancy_sum(t1: &Trajectory, t2: &Trajectory) -> Result<f64> {
    check_dim("trajectory length", t1.states.len(), t2.states.len())?;
    let mut total = 0.0;
    for (a, b) in t1.states.iter().zip(&t2.states) {
        check_dim("state dimension", a.len(), b.len())?;
        total += dist2(a, b);
    }
    Ok(total)
}

/// Model-based imitation loss `Σ_{t<T} ‖g(x_t)(π₁(x_t) − π₂(x_t))‖₂` over the
/// states of `roll`.
pub fn imitation_loss(
    system: &DynamicsSystem,
    roll: &Trajectory,
    pi1: &Policy,
    pi2: &Policy,
) -> Result<f64> {
    imitation_loss_with(system, roll, pi1, pi2, LossMode::ModelBased)
}

pub fn imitation_loss_with(
    system: &DynamicsSystem,
    roll: &Trajectory,
    pi1: &Policy,
    pi2: &Policy,
    mode: LossMode,
) -> Result<f64> {
    for p in [pi1, pi2] {
        check_dim("policy input dimension", system.state_dim(), p.in_dim())?;
        check_dim("policy output dimension", system.input_dim(), p.out_dim())?;
    }
    if roll.states.len() != roll.inputs.len() + 1 {
        return Err(Error::precondition(
            "trajectory must hold horizon + 1 states",
        ));
    }
    let (n, d) = (system.state_dim(), system.input_dim());
    let mut scratch = EvalScratch::default();
    let (mut u1, mut u2, mut gd) = (vec![0.0; d], vec![0.0; d], vec![0.0; n]);
    let mut total = 0.0;
    for x in &roll.states[..roll.horizon()] {
        check_dim("state dimension", n, x.len())?;
        pi1.eval_into(x, &mut u1, &mut scratch);
        pi2.eval_into(x, &mut u2, &mut scratch);
        u1.iter_mut().zip(&u2).for_each(|(a, b)| *a -= b);
        total += match mode {
            LossMode::ModelFree => norm2(&u1),
            LossMode::ModelBased => {
                system.apply_gain_into(x, &u1, &mut gd);
                norm2(&gd)
            }
        };
    }
    Ok(total)
}
