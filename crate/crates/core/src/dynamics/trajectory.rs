use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{DynamicsSystem, StepScratch};
use crate::error::{check_dim, Error, Result};
use crate::policies::{EvalScratch, Policy};

/// A rollout is abandoned once any state component exceeds this magnitude.
pub const DIVERGENCE_THRESHOLD: f64 = 1e9;

/// States `φ_0..φ_T` and the inputs `u_0..u_{T−1}` that generated them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_condition: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("a trajectory holds at least its initial state")
    }

    /// CSV with columns `t, x_0.., u_0..`; the input cells of the last row
    /// are blank.
    pub fn to_csv(&self) -> String {
        let n = self.initial_condition.len();
        let d = self.inputs.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        (0..n).for_each(|i| write!(out, ",x_{i}").unwrap());
        (0..d).for_each(|i| write!(out, ",u_{i}").unwrap());
        out.push('\n');
        for (t, x) in self.states.iter().enumerate() {
            write!(out, "{t}").unwrap();
            x.iter().for_each(|v| write!(out, ",{v:?}").unwrap());
            match self.inputs.get(t) {
                Some(u) => u.iter().for_each(|v| write!(out, ",{v:?}").unwrap()),
                None => (0..d).for_each(|_| out.push(',')),
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Parse("trajectory CSV is empty".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        if header.first() != Some(&"t") {
            return Err(Error::Parse(
                "trajectory CSV header must start with `t`".into(),
            ));
        }
        let n = header.iter().filter(|h| h.starts_with("x_")).count();
        let d = header.iter().filter(|h| h.starts_with("u_")).count();
        if n == 0 || header.len() != 1 + n + d {
            return Err(Error::Parse(
                "trajectory CSV header must be t, x_0.., u_0..".into(),
            ));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number `{s}`: {e}")))
        };
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let mut blank_inputs = false;
        for (row, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::Parse(format!(
                    "row {row} has {} cells, expected {}",
                    cells.len(),
                    header.len()
                )));
            }
            if blank_inputs {
                return Err(Error::Parse("only the final row may omit inputs".into()));
            }
            states.push(
                cells[1..=n]
                    .iter()
                    .map(|c| parse(c))
                    .collect::<Result<Vec<_>>>()?,
            );
            let u = &cells[1 + n..];
            if d > 0 && u.iter().all(|c| c.trim().is_empty()) {
                blank_inputs = true;
            } else {
                inputs.push(u.iter().map(|c| parse(c)).collect::<Result<Vec<_>>>()?);
            }
        }
        if states.is_empty() || (d > 0 && !blank_inputs) {
            return Err(Error::Parse(
                "trajectory CSV must end with a state-only row".into(),
            ));
        }
        Ok(Self {
            initial_condition: states[0].clone(),
            states,
            inputs,
        })
    }
}

/// A closed-loop rollout that may have been cut short.
#[derive(Clone, Debug, PartialEq)]
pub struct GuardedRollout {
    /// States up to the last finite, in-range one.
    pub trajectory: Trajectory,
    /// Index of the first offending state, if the rollout diverged.
    pub diverged_at: Option<usize>,
}

fn out_of_range(x: &[f64]) -> bool {
    x.iter()
        .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD)
}

fn check_policy(system: &DynamicsSystem, policy: &Policy) -> Result<()> {
    check_dim(
        "policy input dimension",
        system.state_dim(),
        policy.in_dim(),
    )?;
    check_dim(
        "policy output dimension",
        system.input_dim(),
        policy.out_dim(),
    )
}

/// Rolls `u_t = π(x_t)` forward for `horizon` steps, stopping at the first
/// state that is non-finite or exceeds [`DIVERGENCE_THRESHOLD`].
pub fn rollout_closed_guarded(
    system: &DynamicsSystem,
    policy: &Policy,
    xi: &[f64],
    horizon: usize,
) -> Result<GuardedRollout> {
    if horizon == 0 {
        return Err(Error::precondition(
            "closed-loop rollouts need a horizon of at least 1",
        ));
    }
    check_policy(system, policy)?;
    check_dim("initial condition", system.state_dim(), xi.len())?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    states.push(xi.to_vec());
    let mut diverged_at = out_of_range(xi).then_some(0);
    let mut eval = EvalScratch::default();
    let mut scratch = StepScratch::default();
    if diverged_at.is_none() {
        for t in 0..horizon {
            let x = &states[t];
            let mut u = vec![0.0; system.input_dim()];
            policy.eval_into(x, &mut u, &mut eval);
            let mut next = vec![0.0; system.state_dim()];
            system.step_into(x, &u, &mut next, &mut scratch);
            if out_of_range(&u) || out_of_range(&next) {
                diverged_at = Some(t + 1);
                break;
            }
            inputs.push(u);
            states.push(next);
        }
    }
    Ok(GuardedRollout {
        trajectory: Trajectory {
            initial_condition: xi.to_vec(),
            states,
            inputs,
        },
        diverged_at,
    })
}

/// Closed-loop rollout; divergence is an error carrying the first offending
/// step index.
pub fn rollout_closed(
    system: &DynamicsSystem,
    policy: &Policy,
    xi: &[f64],
    horizon: usize,
) -> Result<Trajectory> {
    let run = rollout_closed_guarded(system, policy, xi, horizon)?;
    match run.diverged_at {
        Some(step) => Err(Error::Divergence { step }),
        None => Ok(run.trajectory),
    }
}

/// Drives the system with a fixed input sequence.
pub fn rollout_open(
    system: &DynamicsSystem,
    xi: &[f64],
    inputs: &[Vec<f64>],
) -> Result<Trajectory> {
    check_dim("initial condition", system.state_dim(), xi.len())?;
    for u in inputs {
        check_dim("input", system.input_dim(), u.len())?;
    }
    if out_of_range(xi) {
        return Err(Error::Divergence { step: 0 });
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(xi.to_vec());
    let mut scratch = StepScratch::default();
    for (t, u) in inputs.iter().enumerate() {
        let mut next = vec![0.0; system.state_dim()];
        system.step_into(&states[t], u, &mut next, &mut scratch);
        if out_of_range(&next) {
            return Err(Error::Divergence { step: t + 1 });
        }
        states.push(next);
    }
    Ok(Trajectory {
        initial_condition: xi.to_vec(),
        states,
        inputs: inputs.to_vec(),
    })
}
