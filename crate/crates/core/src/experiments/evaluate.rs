use rayon::prelude::*;

use crate::dynamics::{rollout_closed_guarded, DynamicsSystem, Trajectory};
use crate::error::Result;
use crate::learning::IcDistribution;
use crate::policies::Policy;
use crate::rng::{derive_seed, tags};

/// Test initial conditions, drawn from a stream disjoint from training data.
pub(super) fn test_ics(dist: IcDistribution, dim: usize, seed: u64, count: usize) -> Vec<Vec<f64>> {
    let test_seed = derive_seed(seed, &[tags::TEST_SET]);
    (0..count)
        .map(|i| dist.sample(dim, test_seed, &[i as u64]))
        .collect()
}

/// Test rollouts; a divergent rollout keeps its last finite state as the
/// final state and is counted.
pub(super) struct Evaluation {
    pub trajectories: Vec<Trajectory>,
    pub diverged: usize,
}

impl Evaluation {
    pub fn final_states(&self) -> impl Iterator<Item = &[f64]> {
        self.trajectories.iter().map(|t| t.final_state())
    }
}

pub(super) fn evaluate(
    system: &DynamicsSystem,
    policy: &Policy,
    ics: &[Vec<f64>],
    horizon: usize,
) -> Result<Evaluation> {
    let runs = ics
        .par_iter()
        .map(|xi| rollout_closed_guarded(system, policy, xi, horizon))
        .collect::<Result<Vec<_>>>()?;
    let diverged = runs.iter().filter(|r| r.diverged_at.is_some()).count();
    Ok(Evaluation {
        trajectories: runs.into_iter().map(|r| r.trajectory).collect(),
        diverged,
    })
}
