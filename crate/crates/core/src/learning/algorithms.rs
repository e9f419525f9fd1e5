use std::sync::Arc;
use std::time::Instant;

use super::{collect_rollouts, empirical_loss, CermProblem, CmileConfig, EpochRecord, Learner};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::policies::{demix_final, mix, residual_weight, MlpPolicy, Policy};
use crate::rng;

/// Final policy of an iterative learner with its per-epoch audit trail.
#[derive(Clone, Debug)]
pub struct LearnOutcome {
    pub policy: Policy,
    /// The policy that generated the last epoch's data.
    pub last_data_policy: Policy,
    pub records: Vec<EpochRecord>,
}

fn epoch_ics(cfg: &CmileConfig, epoch: usize) -> Vec<Vec<f64>> {
    let n = cfg.system.state_dim();
    (0..cfg.per_epoch())
        .map(|i| {
            cfg.initial_conditions
                .sample(n, cfg.seed, &[epoch as u64, i as u64])
        })
        .collect()
}

fn epoch_seed(cfg: &CmileConfig, epoch: usize) -> u64 {
    rng::derive_seed(cfg.train.seed ^ cfg.seed, &[epoch as u64])
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis().min(u64::MAX as u128) as u64
}

/// The mixing loop shared by CMILe and its aggregating variant.
fn mixing_loop(cfg: &CmileConfig, learner: &dyn Learner, aggregate: bool) -> Result<LearnOutcome> {
    cfg.validate()?;
    cfg.advise();
    let (e, alpha) = (cfg.epochs, cfg.alpha);
    let mode = cfg.train.loss_mode;
    let mut pi = cfg.expert.clone();
    let mut warm: Option<Arc<MlpPolicy>> = None;
    let mut pool: Vec<Trajectory> = Vec::new();
    let mut records = Vec::with_capacity(e);
    let mut last_data_policy = pi.clone();

    for k in 0..e {
        let start = Instant::now();
        let last = k + 1 == e;
        let (trajs, truncated) = collect_rollouts(
            &cfg.system,
            &pi,
            &epoch_ics(cfg, k),
            cfg.horizon,
            cfg.divergence,
            k,
        )?;
        let c_k = if k == 0 && !last {
            Some(0.0)
        } else if last {
            // ((1−α)^E/α) · mean ℓ_{π_{E−1}}(ξ; π_{E−1}, π★)
            let base = empirical_loss(&trajs, &cfg.system, &pi, &cfg.expert, mode)?;
            Some(residual_weight(alpha, e) / alpha * base)
        } else {
            cfg.trust_constants.get(k - 1).copied()
        };
        let w = if last { residual_weight(alpha, e) } else { 0.0 };
        if aggregate {
            pool.extend(trajs.iter().cloned());
        }
        let data: &[Trajectory] = if aggregate { &pool } else { &trajs };
        let fit = learner.fit(&CermProblem {
            system: &cfg.system,
            trajs: data,
            pi_roll: &pi,
            expert: &cfg.expert,
            c: c_k.unwrap_or(f64::INFINITY),
            w,
            alpha,
            train: &cfg.train,
            warm_start: warm.as_deref(),
            seed: epoch_seed(cfg, k),
        })?;
        let trust_value = empirical_loss(&trajs, &cfg.system, &fit.policy, &pi, mode)?;
        let flagged = k > 0 && c_k.is_some_and(|c| trust_value > c);
        if flagged {
            log::info!(
                "epoch {k}: trust value {trust_value:.4e} exceeds c_k = {:.4e}",
                c_k.unwrap_or_default()
            );
        }
        records.push(EpochRecord {
            epoch: k,
            data_policy: format!("pi_{k}"),
            trajectories: trajs.len(),
            truncated,
            train_loss: fit.train_loss,
            trust_value,
            c_k,
            flagged,
            wallclock_ms: elapsed_ms(start),
        });
        if let Some(net) = fit.policy.as_mlp() {
            warm = Some(net.clone());
        }
        if last {
            last_data_policy = pi.clone();
        }
        pi = if last {
            demix_final(&pi, &fit.policy, &cfg.expert, alpha, e)?
        } else {
            mix(&pi, &fit.policy, alpha)?
        };
    }
    Ok(LearnOutcome {
        policy: pi,
        last_data_policy,
        records,
    })
}

/// Constrained mixing iterative learning.
///
/// Starting from the expert, each epoch collects `m/E` rollouts under the
/// current policy `π_k`, fits `π̂_k` to the expert on them, and mixes
/// `π_{k+1} = (1−α)π_k + απ̂_k`. The final epoch solves with expert weight
/// `w = (1−α)^E` and then removes the residual expert component.
pub fn cmile(cfg: &CmileConfig, learner: &dyn Learner) -> Result<LearnOutcome> {
    mixing_loop(cfg, learner, false)
}

/// CMILe where the fit at epoch `k` uses the trajectories of epochs `0..=k`.
pub fn cmile_agg(cfg: &CmileConfig, learner: &dyn Learner) -> Result<LearnOutcome> {
    mixing_loop(cfg, learner, true)
}

/// Behavior cloning: the single-epoch, full-step (`E = 1`, `α = 1`) case.
pub fn behavior_cloning(cfg: &CmileConfig, learner: &dyn Learner) -> Result<LearnOutcome> {
    if cfg.epochs != 1 || cfg.alpha != 1.0 {
        return Err(Error::precondition(format!(
            "behavior cloning runs one epoch with alpha = 1, got E = {} and alpha = {}",
            cfg.epochs, cfg.alpha
        )));
    }
    mixing_loop(cfg, learner, false)
}

/// DAgger with `β_k = (1−α)^k`.
///
/// Epoch `k` rolls out `β_k π★ + (1−β_k) π̂_{k−1}`, labels every visited state
/// with the expert, aggregates, and retrains from scratch. Every 20th
/// aggregated trajectory is held out; the returned policy is the epoch
/// learner with the lowest loss on the final holdout set (the last learner
/// when the holdout is empty).
pub fn dagger(cfg: &CmileConfig, learner: &dyn Learner) -> Result<LearnOutcome> {
    cfg.validate()?;
    let mode = cfg.train.loss_mode;
    let mut train_pool: Vec<Trajectory> = Vec::new();
    let mut holdout: Vec<Trajectory> = Vec::new();
    let mut seen = 0usize;
    let mut candidates: Vec<Policy> = Vec::with_capacity(cfg.epochs);
    let mut last_data_policy = cfg.expert.clone();
    let mut records = Vec::with_capacity(cfg.epochs);
    for k in 0..cfg.epochs {
        let start = Instant::now();
        let beta = residual_weight(cfg.alpha, k);
        let roll = match candidates.last() {
            None => cfg.expert.clone(),
            Some(hat) => mix(hat, &cfg.expert, beta)?,
        };
        let (trajs, truncated) = collect_rollouts(
            &cfg.system,
            &roll,
            &epoch_ics(cfg, k),
            cfg.horizon,
            cfg.divergence,
            k,
        )?;
        last_data_policy = roll.clone();
        for t in trajs.iter().cloned() {
            seen += 1;
            if seen.is_multiple_of(20) {
                holdout.push(t);
            } else {
                train_pool.push(t);
            }
        }
        let fit = learner.fit(&CermProblem {
            system: &cfg.system,
            trajs: &train_pool,
            pi_roll: &roll,
            expert: &cfg.expert,
            c: f64::INFINITY,
            w: 0.0,
            alpha: 1.0,
            train: &cfg.train,
            warm_start: None,
            seed: epoch_seed(cfg, k),
        })?;
        let trust_value = empirical_loss(&trajs, &cfg.system, &fit.policy, &roll, mode)?;
        records.push(EpochRecord {
            epoch: k,
            data_policy: format!("beta_{k}"),
            trajectories: trajs.len(),
            truncated,
            train_loss: fit.train_loss,
            trust_value,
            c_k: None,
            flagged: false,
            wallclock_ms: elapsed_ms(start),
        });
        candidates.push(fit.policy);
    }
    let policy = if holdout.is_empty() {
        candidates.pop().expect("at least one epoch")
    } else {
        let mut best = (f64::INFINITY, 0usize);
        for (i, cand) in candidates.iter().enumerate() {
            let v = empirical_loss(&holdout, &cfg.system, cand, &cfg.expert, mode)?;
            if v < best.0 {
                best = (v, i);
            }
        }
        candidates.swap_remove(best.1)
    };
    Ok(LearnOutcome {
        policy,
        last_data_policy,
        records,
    })
}
