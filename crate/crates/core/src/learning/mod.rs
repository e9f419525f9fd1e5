//! Imitation learning: empirical losses, the constrained ERM subproblem
//! solved by Adam, and the outer loops (behavior cloning, CMILe, CMILe with
//! aggregation, DAgger).

mod adam;
mod algorithms;
mod cerm;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout_closed_guarded, DynamicsSystem, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::policies::{Activation, Policy};
use crate::rng;
use crate::stability::{imitation_loss_with, IgsParams, IncLyapunov, LossMode};

pub use adam::{adam_step, AdamState};
pub use algorithms::{behavior_cloning, cmile, cmile_agg, dagger, LearnOutcome};
pub use cerm::{cerm, loss_gradient, AdamLearner, CermProblem, FitOutcome, Learner, OracleLearner};

/// Lyapunov hinge added to the training objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityPenalty {
    pub certificate: IncLyapunov,
    pub weight: f64,
}

/// Holdout-based early stopping: stop once the holdout loss has failed to
/// improve `patience` times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub holdout_fraction: f64,
}

/// Optimizer and policy-class settings for one constrained ERM solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub projection_radius: Option<f64>,
    pub stability_penalty: Option<StabilityPenalty>,
    pub loss_mode: LossMode,
    pub hidden: usize,
    pub activation: Activation,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.01,
            batch_size: 512,
            seed: 0,
            projection_radius: None,
            stability_penalty: None,
            loss_mode: LossMode::ModelBased,
            hidden: 32,
            activation: Activation::Tanh,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::precondition("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::precondition(
                "batch size and hidden width must be at least 1",
            ));
        }
        if let Some(r) = self.projection_radius {
            if !(r > 0.0) {
                return Err(Error::precondition("projection radius must be positive"));
            }
        }
        if let Some(p) = &self.stability_penalty {
            if !(p.weight >= 0.0 && p.weight.is_finite()) {
                return Err(Error::precondition(
                    "penalty weight must be finite and non-negative",
                ));
            }
            p.certificate.validate()?;
        }
        if let Some(es) = &self.early_stop {
            if !(es.holdout_fraction > 0.0 && es.holdout_fraction < 1.0) || es.patience == 0 {
                return Err(Error::precondition(
                    "early stopping needs patience >= 1 and a holdout fraction in (0, 1)",
                ));
            }
        }
        Ok(())
    }
}

/// Distribution of initial conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IcDistribution {
    /// Independent `N(0, std²)` coordinates.
    Gaussian { std: f64 },
    /// Independent `U[−half_width, half_width]` coordinates.
    Uniform { half_width: f64 },
}

impl IcDistribution {
    /// The `index`-th draw of the stream identified by `tags`.
    pub fn sample(&self, dim: usize, seed: u64, tags: &[u64]) -> Vec<f64> {
        let mut all = vec![rng::tags::INITIAL_CONDITIONS];
        all.extend_from_slice(tags);
        let mut s = rng::stream(seed, &all);
        match *self {
            IcDistribution::Gaussian { std } => rng::gaussian_vec(&mut s, dim, std),
            IcDistribution::Uniform { half_width } => rng::uniform_vec(&mut s, dim, half_width),
        }
    }
}

/// What to do when a data-collection rollout leaves the safe region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceHandling {
    /// Fail the run, naming the epoch and trajectory.
    #[default]
    Abort,
    /// Keep the finite prefix of the rollout and count it in the epoch record.
    Truncate,
}

/// Configuration of the iterative learners.
#[derive(Clone, Debug)]
pub struct CmileConfig {
    pub system: DynamicsSystem,
    pub expert: Policy,
    /// Total trajectory budget `m`.
    pub total_trajectories: usize,
    /// Number of epochs `E`; must divide `m`.
    pub epochs: usize,
    pub alpha: f64,
    pub horizon: usize,
    /// Trust-region constants `c_1..c_{E−2}`; missing entries are log-only.
    pub trust_constants: Vec<f64>,
    pub initial_conditions: IcDistribution,
    pub train: TrainConfig,
    pub seed: u64,
    pub divergence: DivergenceHandling,
    /// Expert stability parameters and `L_Δ`, for the step-size advisory.
    pub theory: Option<(IgsParams, f64)>,
}

impl CmileConfig {
    pub fn per_epoch(&self) -> usize {
        self.total_trajectories / self.epochs
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.total_trajectories == 0
            || !self.total_trajectories.is_multiple_of(self.epochs)
        {
            return Err(Error::precondition(format!(
                "the number of epochs ({}) must divide the trajectory budget ({})",
                self.epochs, self.total_trajectories
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::precondition(format!(
                "mixing rate must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.horizon == 0 {
            return Err(Error::precondition("horizon must be at least 1"));
        }
        if self.trust_constants.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::precondition(
                "trust-region constants must be non-negative",
            ));
        }
        check_dim(
            "expert input dimension",
            self.system.state_dim(),
            self.expert.in_dim(),
        )?;
        check_dim(
            "expert output dimension",
            self.system.input_dim(),
            self.expert.out_dim(),
        )?;
        self.train.validate()
    }

    /// Logs a warning when `E` and `α` fall outside the range covered by the
    /// convergence guarantee. Never blocks.
    pub fn advise(&self) {
        let a = self.alpha;
        if a < 1.0 && (self.epochs as f64) < (1.0 / a) * (1.0 / a).ln() {
            log::warn!(
                "E = {} is below (1/alpha) log(1/alpha) = {:.2}",
                self.epochs,
                (1.0 / a) * (1.0 / a).ln()
            );
        }
        if let Some((psi, l_delta)) = self.theory {
            let t = self.horizon as f64;
            let cap = (1.0 / (l_delta * psi.gamma.powf(1.0 / psi.a) * t.powf(1.0 - 1.0 / psi.a1)))
                .min(0.5);
            if a > cap {
                log::warn!("alpha = {a} exceeds the guaranteed range (<= {cap:.3e})");
            }
        }
    }
}

/// Audit entry for one epoch of an iterative learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Name of the data-generating policy.
    pub data_policy: String,
    pub trajectories: usize,
    /// Trajectories cut short by divergence during collection.
    pub truncated: usize,
    pub train_loss: f64,
    /// Mean loss of the new learner against the data-generating policy.
    pub trust_value: f64,
    pub c_k: Option<f64>,
    pub flagged: bool,
    pub wallclock_ms: u64,
}

/// One CSV row per epoch: `k,train_loss,trust_value,c_k,wallclock_ms`.
pub fn audit_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("k,train_loss,trust_value,c_k,wallclock_ms\n");
    for r in records {
        let c = r.c_k.map_or(String::new(), |c| format!("{c:?}"));
        writeln!(
            out,
            "{},{:?},{:?},{},{}",
            r.epoch, r.train_loss, r.trust_value, c, r.wallclock_ms
        )
        .unwrap();
    }
    out
}

/// Mean imitation loss of `pi` against `target` over the trajectories.
pub fn empirical_loss(
    trajs: &[Trajectory],
    system: &DynamicsSystem,
    pi: &Policy,
    target: &Policy,
    mode: LossMode,
) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::precondition(
            "empirical loss needs at least one trajectory",
        ));
    }
    let losses = trajs
        .par_iter()
        .map(|t| imitation_loss_with(system, t, pi, target, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / trajs.len() as f64)
}

/// `|L_test − L_train|` for the empirical loss.
pub fn generalization_gap(
    train: &[Trajectory],
    test: &[Trajectory],
    system: &DynamicsSystem,
    pi: &Policy,
    target: &Policy,
    mode: LossMode,
) -> Result<f64> {
    Ok((empirical_loss(test, system, pi, target, mode)?
        - empirical_loss(train, system, pi, target, mode)?)
    .abs())
}

/// Rolls `policy` from each initial condition in parallel, keeping input
/// order. Returns the trajectories and the number that were truncated.
pub fn collect_rollouts(
    system: &DynamicsSystem,
    policy: &Policy,
    ics: &[Vec<f64>],
    horizon: usize,
    handling: DivergenceHandling,
    epoch: usize,
) -> Result<(Vec<Trajectory>, usize)> {
    let runs = ics
        .par_iter()
        .map(|xi| rollout_closed_guarded(system, policy, xi, horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut truncated = 0;
    let mut out = Vec::with_capacity(runs.len());
    for (i, run) in runs.into_iter().enumerate() {
        if let Some(step) = run.diverged_at {
            match handling {
                DivergenceHandling::Abort => {
                    return Err(Error::EpochRollout {
                        epoch,
                        trajectory: i,
                        source: Box::new(Error::Divergence { step }),
                    })
                }
                DivergenceHandling::Truncate => truncated += 1,
            }
        }
        out.push(run.trajectory);
    }
    Ok((out, truncated))
}
