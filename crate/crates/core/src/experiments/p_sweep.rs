use std::sync::Arc;

use rayon::prelude::*;

use super::config::{Algorithm, ExperimentConfig, PSweepConfig};
use super::evaluate::{evaluate, test_ics};
use super::records::ResultRecord;
use crate::dynamics::{make_p_system, DynamicsSystem, PSystemSpec};
use crate::error::Result;
use crate::learning::{
    behavior_cloning, cmile, cmile_agg, dagger, AdamLearner, CmileConfig, DivergenceHandling,
    IcDistribution, LearnOutcome, Learner, TrainConfig,
};
use crate::linalg::dist2;
use crate::policies::{random_mlp, Activation, AffinePolicy, Policy};
use crate::rng::{derive_seed, tags};
use crate::stability::imitation_loss;

/// Builds the learner used for one run from the expert of that run.
pub type LearnerFactory<'a> = dyn Fn(&Policy) -> Box<dyn Learner> + Sync + 'a;

const STUDY: &str = "p_sweep";

/// Largest divisor of `m` not exceeding `epochs`.
fn fitting_epochs(m: usize, epochs: usize) -> usize {
    (1..=epochs.min(m))
        .rev()
        .find(|e| m.is_multiple_of(*e))
        .unwrap_or(1)
}

/// Learner configuration for one algorithm at one sweep point. Behavior
/// cloning runs a single full step; the other algorithms use the largest
/// epoch count not above `E` that divides `m`.
pub fn p_sweep_learner_config(
    s: &PSweepConfig,
    algorithm: Algorithm,
    system: &DynamicsSystem,
    expert: &Policy,
    trial_seed: u64,
    p: f64,
) -> CmileConfig {
    let (epochs, alpha) = match algorithm {
        Algorithm::Bc => (1, 1.0),
        _ => {
            let e = fitting_epochs(s.m, s.epochs);
            if e != s.epochs {
                log::warn!(
                    "p_sweep: m = {} is not a multiple of E = {}; running E = {e}",
                    s.m,
                    s.epochs
                );
            }
            (e, s.alpha)
        }
    };
    CmileConfig {
        system: system.clone(),
        expert: expert.clone(),
        total_trajectories: s.m,
        epochs,
        alpha,
        horizon: s.horizon,
        trust_constants: Vec::new(),
        initial_conditions: IcDistribution::Gaussian { std: s.ic_std },
        train: TrainConfig {
            epochs: s.train_epochs,
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            seed: derive_seed(trial_seed, &[tags::POLICY_INIT, p.to_bits()]),
            loss_mode: s.loss_mode,
            hidden: s.hidden,
            activation: Activation::Tanh,
            ..TrainConfig::default()
        },
        seed: trial_seed,
        divergence: DivergenceHandling::Truncate,
        theory: None,
    }
}

/// The experiment p-system for a trial and its expert `−h`.
pub fn p_sweep_setup(
    s: &PSweepConfig,
    trial_seed: u64,
    p: f64,
) -> Result<(DynamicsSystem, Policy)> {
    let h = Arc::new(random_mlp(
        s.dim,
        s.expert_hidden,
        s.dim,
        Activation::Tanh,
        derive_seed(trial_seed, &[tags::EXPERT]),
    )?);
    let system = make_p_system(&PSystemSpec::experiment(p, s.dim, Some(h.clone())))?;
    let expert = AffinePolicy::new(vec![(-1.0, Policy::Mlp(h))])?.into_policy();
    Ok((system, expert))
}

/// Dispatches to the learner named by `algorithm`.
pub fn run_algorithm(
    algorithm: Algorithm,
    cfg: &CmileConfig,
    learner: &dyn Learner,
) -> Result<LearnOutcome> {
    match algorithm {
        Algorithm::Bc => behavior_cloning(cfg, learner),
        Algorithm::Cmile => cmile(cfg, learner),
        Algorithm::CmileAgg => cmile_agg(cfg, learner),
        Algorithm::Dagger => dagger(cfg, learner),
    }
}

fn run_point(
    s: &PSweepConfig,
    trial_seed: u64,
    p: f64,
    factory: &LearnerFactory,
) -> Result<Vec<ResultRecord>> {
    let (system, expert) = p_sweep_setup(s, trial_seed, p)?;
    let ics = test_ics(
        IcDistribution::Gaussian { std: s.ic_std },
        s.dim,
        trial_seed,
        s.test_rollouts,
    );
    let reference = evaluate(&system, &expert, &ics, s.horizon)?;

    let mut out = Vec::new();
    for &algorithm in &s.algorithms {
        let cfg = p_sweep_learner_config(s, algorithm, &system, &expert, trial_seed, p);
        let outcome = run_algorithm(algorithm, &cfg, factory(&expert).as_ref())?;
        let run = evaluate(&system, &outcome.policy, &ics, s.horizon)?;
        let deviation: Vec<f64> = reference
            .final_states()
            .zip(run.final_states())
            .map(|(a, b)| dist2(a, b))
            .collect();
        let loss = run
            .trajectories
            .par_iter()
            .map(|t| {
                imitation_loss(&system, t, &outcome.policy, &expert).map(|l| l / s.horizon as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        let name = algorithm.name();
        out.push(ResultRecord::from_sample(
            STUDY,
            trial_seed,
            name,
            p,
            "goal_deviation",
            &deviation,
        )?);
        out.push(ResultRecord::from_sample(
            STUDY,
            trial_seed,
            name,
            p,
            "imitation_loss",
            &loss,
        )?);
        if run.diverged > 0 {
            log::warn!(
                "p_sweep: {name} at p = {p} (seed {trial_seed}) diverged on {} test rollouts",
                run.diverged
            );
            let count = [run.diverged as f64];
            out.push(ResultRecord::from_sample(
                STUDY,
                trial_seed,
                name,
                p,
                "diverged_rollouts",
                &count,
            )?);
        }
    }
    Ok(out)
}

/// Tunable p-system sweep with the Adam-trained learners.
pub fn run_p_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    run_p_sweep_with(cfg, &|_| Box::new(AdamLearner))
}

/// Tunable p-system sweep with an injected learner.
///
/// For each trial and `p`, the random network `h` is drawn once per trial,
/// the expert is `−h`, and every algorithm is scored on the same test
/// initial conditions by final-state deviation from the expert and by the
/// per-step imitation loss along its own rollouts.
pub fn run_p_sweep_with(
    cfg: &ExperimentConfig,
    factory: &LearnerFactory,
) -> Result<Vec<ResultRecord>> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let s = &cfg.p_sweep;
    let points: Vec<(u64, f64)> =
        s.p.iter()
            .flat_map(|&p| (0..s.trials as u64).map(move |t| (cfg.global.seed.wrapping_add(t), p)))
            .collect();
    let per_point = points
        .par_iter()
        .map(|&(seed, p)| run_point(s, seed, p, factory))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_point.into_iter().flatten().collect())
}
