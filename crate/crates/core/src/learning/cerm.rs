use std::sync::Arc;

use rand::seq::SliceRandom;

use super::{adam_step, AdamState, TrainConfig};
use crate::dynamics::{DynamicsSystem, Trajectory};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{norm2, DenseMatrix};
use crate::policies::{random_mlp, EvalScratch, MlpPolicy, MlpScratch, Policy};
use crate::rng;
use crate::stability::{IncLyapunov, LossMode};

/// One constrained ERM subproblem: fit `π̄` to the expert on states visited
/// by `pi_roll`.
///
/// The trust region `mean ℓ(π̄, π_roll) ≤ c` is handled softly by warm
/// starting at the previous learner and by the configured learning rate; the
/// stability requirement on `[(1−α)π_roll + απ̄ − wπ★]/(1−w)` is handled by
/// the optional Lyapunov hinge in [`TrainConfig::stability_penalty`].
#[derive(Clone, Copy)]
pub struct CermProblem<'a> {
    pub system: &'a DynamicsSystem,
    pub trajs: &'a [Trajectory],
    pub pi_roll: &'a Policy,
    pub expert: &'a Policy,
    pub c: f64,
    pub w: f64,
    pub alpha: f64,
    pub train: &'a TrainConfig,
    pub warm_start: Option<&'a MlpPolicy>,
    /// Seed of this solve; shuffling and fresh initialization derive from it.
    pub seed: u64,
}

/// A fitted learner and its objective value `mean_i ℓ(ξᵢ; π̄, π★)`.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub policy: Policy,
    pub train_loss: f64,
}

/// Strategy that solves the constrained ERM subproblem.
pub trait Learner: Sync {
    fn fit(&self, problem: &CermProblem<'_>) -> Result<FitOutcome>;
}

/// Minibatch Adam over the parameters of a bias-free two-layer network.
#[derive(Clone, Copy, Debug, Default)]
pub struct AdamLearner;

impl Learner for AdamLearner {
    fn fit(&self, problem: &CermProblem<'_>) -> Result<FitOutcome> {
        cerm(problem)
    }
}

/// Returns a fixed policy regardless of the data; with the expert it turns
/// every epoch into a no-op.
#[derive(Clone, Debug)]
pub struct OracleLearner {
    pub policy: Policy,
}

impl Learner for OracleLearner {
    fn fit(&self, problem: &CermProblem<'_>) -> Result<FitOutcome> {
        let loss = super::empirical_loss(
            problem.trajs,
            problem.system,
            &self.policy,
            problem.expert,
            problem.train.loss_mode,
        )?;
        Ok(FitOutcome {
            policy: self.policy.clone(),
            train_loss: loss,
        })
    }
}

/// Data for the Lyapunov hinge at one state.
struct HingeTerm {
    /// `f(x) + g(x)·base(x)`, the mixed closed loop minus the learner part.
    anchor: Vec<f64>,
    /// `(V(x, 0) − 𝔞 min{‖x‖^{a₀}, ‖x‖^{a₁}})₊^{1/a}`
    root_offset: f64,
}

struct Sample {
    x: Vec<f64>,
    target: Vec<f64>,
    gain: Option<DenseMatrix>,
    hinge: Option<HingeTerm>,
}

struct Workspace {
    mlp: MlpScratch,
    out: Vec<f64>,
    resid: Vec<f64>,
    mapped: Vec<f64>,
    upstream: Vec<f64>,
    next: Vec<f64>,
    grad_v: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, d: usize) -> Self {
        Self {
            mlp: MlpScratch::default(),
            out: vec![0.0; d],
            resid: vec![0.0; d],
            mapped: vec![0.0; n],
            upstream: vec![0.0; d],
            next: vec![0.0; n],
            grad_v: vec![0.0; n],
        }
    }
}

fn build_samples(problem: &CermProblem<'_>) -> Result<Vec<Sample>> {
    let sys = problem.system;
    let (n, d) = (sys.state_dim(), sys.input_dim());
    let penalty = problem
        .train
        .stability_penalty
        .as_ref()
        .filter(|p| p.weight > 0.0);
    let model_based = problem.train.loss_mode == LossMode::ModelBased;
    if !(0.0..1.0).contains(&problem.w) {
        return Err(Error::precondition(format!(
            "expert weight w must lie in [0, 1), got {}",
            problem.w
        )));
    }
    let coef_base = (1.0 - problem.alpha) / (1.0 - problem.w);
    let coef_star = problem.w / (1.0 - problem.w);
    let mut scratch = EvalScratch::default();
    let zero = vec![0.0; n];
    let mut samples = Vec::new();
    for traj in problem.trajs {
        for x in &traj.states[..traj.horizon()] {
            check_dim("state dimension", n, x.len())?;
            let mut target = vec![0.0; d];
            problem.expert.eval_into(x, &mut target, &mut scratch);
            let gain = (model_based || penalty.is_some())
                .then(|| sys.input_gain(x))
                .transpose()?;
            let hinge = match penalty {
                None => None,
                Some(p) => {
                    let mut roll = vec![0.0; d];
                    problem.pi_roll.eval_into(x, &mut roll, &mut scratch);
                    let base: Vec<f64> = roll
                        .iter()
                        .zip(&target)
                        .map(|(r, t)| coef_base * r - coef_star * t)
                        .collect();
                    let g = gain
                        .as_ref()
                        .expect("gain computed when a penalty is active");
                    let anchor: Vec<f64> = sys
                        .drift(x)?
                        .iter()
                        .zip(g.mul_vec(&base))
                        .map(|(f, gb)| f + gb)
                        .collect();
                    let cert = &p.certificate;
                    let offset = cert.value(x, &zero) - cert.decrease_term(norm2(x));
                    Some(HingeTerm {
                        anchor,
                        root_offset: offset.max(0.0).powf(1.0 / cert.a),
                    })
                }
            };
            let gain = if model_based || hinge.is_some() {
                gain
            } else {
                None
            };
            samples.push(Sample {
                x: x.clone(),
                target,
                gain,
                hinge,
            });
        }
    }
    Ok(samples)
}

/// Adds this sample's objective gradient to `grad` and returns
/// `(imitation term, hinge term)`.
#[allow(clippy::too_many_arguments)]
fn sample_loss_grad(
    net: &MlpPolicy,
    s: &Sample,
    mode: LossMode,
    hinge: Option<(&IncLyapunov, f64, f64)>,
    grad: Option<&mut [f64]>,
    ws: &mut Workspace,
) -> (f64, f64) {
    net.forward(&s.x, &mut ws.out, &mut ws.mlp);
    for ((r, o), t) in ws.resid.iter_mut().zip(&ws.out).zip(&s.target) {
        *r = o - t;
    }
    ws.upstream.iter_mut().for_each(|u| *u = 0.0);
    let imitation = match (mode, &s.gain) {
        (LossMode::ModelBased, Some(g)) => {
            g.mul_vec_into(&ws.resid, &mut ws.mapped);
            let nrm = norm2(&ws.mapped);
            if nrm > 0.0 {
                let scaled: Vec<f64> = ws.mapped.iter().map(|v| v / nrm).collect();
                ws.upstream.copy_from_slice(&g.tr_mul_vec(&scaled));
            }
            nrm
        }
        _ => {
            let nrm = norm2(&ws.resid);
            if nrm > 0.0 {
                for (u, r) in ws.upstream.iter_mut().zip(&ws.resid) {
                    *u = r / nrm;
                }
            }
            nrm
        }
    };
    let mut hinge_value = 0.0;
    if let (Some((cert, weight, coef)), Some(h), Some(g)) = (hinge, &s.hinge, &s.gain) {
        g.mul_vec_into(&ws.out, &mut ws.mapped);
        for ((nx, a), gm) in ws.next.iter_mut().zip(&h.anchor).zip(&ws.mapped) {
            *nx = a + coef * gm;
        }
        // Compared as V^{1/a}/ᾱ^{1/a}, which is in state units like the
        // imitation term and leaves the constraint set unchanged.
        let zero = vec![0.0; ws.next.len()];
        let inv_a = 1.0 / cert.a;
        let scale = cert.alpha_hi.powf(-inv_a);
        let v = cert.value(&ws.next, &zero);
        let root = v.powf(inv_a);
        let r = (root - h.root_offset) * scale;
        if r > 0.0 {
            hinge_value = weight * r;
            cert.grad_first(&ws.next, &zero, &mut ws.grad_v);
            let chain = weight * coef * scale * inv_a * root / v;
            let back = g.tr_mul_vec(&ws.grad_v);
            for (u, b) in ws.upstream.iter_mut().zip(back) {
                *u += chain * b;
            }
        }
    }
    if let Some(grad) = grad {
        net.accumulate_grad(&s.x, &ws.upstream, grad, &mut ws.mlp);
    }
    (imitation, hinge_value)
}

/// Solves the constrained ERM subproblem with minibatch Adam on the per-state
/// mean of the imitation norm (plus the hinge penalty, when configured).
pub fn cerm(problem: &CermProblem<'_>) -> Result<FitOutcome> {
    let train = problem.train;
    train.validate()?;
    let sys = problem.system;
    let (n, d) = (sys.state_dim(), sys.input_dim());
    if problem.trajs.is_empty() {
        return Err(Error::precondition(
            "constrained ERM needs at least one trajectory",
        ));
    }
    let mut net = match problem.warm_start {
        Some(w) => {
            check_dim("warm start input dimension", n, w.in_dim())?;
            check_dim("warm start output dimension", d, w.out_dim())?;
            w.clone()
        }
        None => random_mlp(
            n,
            train.hidden,
            d,
            train.activation,
            rng::derive_seed(problem.seed, &[rng::tags::POLICY_INIT]),
        )?,
    };
    let samples = build_samples(problem)?;
    let hinge = train
        .stability_penalty
        .as_ref()
        .filter(|p| p.weight > 0.0)
        .map(|p| (&p.certificate, p.weight, problem.alpha / (1.0 - problem.w)));

    // optional holdout split for early stopping
    let (fit_idx, hold_idx): (Vec<usize>, Vec<usize>) = match train.early_stop {
        Some(es) => {
            let every = ((1.0 / es.holdout_fraction).round() as usize).max(2);
            (0..samples.len()).partition(|i| i % every != every - 1)
        }
        None => ((0..samples.len()).collect(), Vec::new()),
    };

    let mut ws = Workspace::new(n, d);
    let mut theta = net.params().to_vec();
    let mut grad = vec![0.0; theta.len()];
    let mut adam = AdamState::new(theta.len());
    let mut order = fit_idx.clone();
    let mut best_holdout = (f64::INFINITY, theta.clone());
    let mut strikes = 0;

    for epoch in 0..train.epochs {
        order.copy_from_slice(&fit_idx);
        order.shuffle(&mut rng::stream(
            problem.seed,
            &[rng::tags::SHUFFLE, epoch as u64],
        ));
        for (batch, chunk) in order.chunks(train.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut total = 0.0;
            for &i in chunk {
                let (im, hv) = sample_loss_grad(
                    &net,
                    &samples[i],
                    train.loss_mode,
                    hinge,
                    Some(&mut grad),
                    &mut ws,
                );
                total += im + hv;
            }
            let scale = 1.0 / chunk.len() as f64;
            if !(total * scale).is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut theta, &grad, &mut adam, train.learning_rate)?;
            if let Some(r) = train.projection_radius {
                MlpPolicy::project_params(&mut theta, r);
            }
            net = net
                .with_params(theta.clone())
                .map_err(|_| Error::NonFiniteLoss { epoch, batch })?;
        }
        if let Some(es) = train.early_stop {
            if !hold_idx.is_empty() {
                let h: f64 = hold_idx
                    .iter()
                    .map(|&i| {
                        let (im, hv) = sample_loss_grad(
                            &net,
                            &samples[i],
                            train.loss_mode,
                            hinge,
                            None,
                            &mut ws,
                        );
                        im + hv
                    })
                    .sum();
                if h < best_holdout.0 {
                    best_holdout = (h, theta.clone());
                } else {
                    strikes += 1;
                    if strikes >= es.patience {
                        net = net.with_params(best_holdout.1.clone())?;
                        break;
                    }
                }
            }
        }
    }

    let train_loss = samples
        .iter()
        .map(|s| sample_loss_grad(&net, s, train.loss_mode, None, None, &mut ws).0)
        .sum::<f64>()
        / problem.trajs.len() as f64;
    Ok(FitOutcome {
        policy: Policy::Mlp(Arc::new(net)),
        train_loss,
    })
}

/// `Σ` over trajectory states `t < T` of the (sub)gradient in `θ` of
/// `‖M(x)(π(x, θ) − target(x))‖₂`, with `M = g(x)` or `I` per `mode` and a
/// zero contribution where the residual vanishes.
pub fn loss_gradient(
    trajs: &[Trajectory],
    policy: &MlpPolicy,
    target: &Policy,
    system: &DynamicsSystem,
    mode: LossMode,
) -> Result<Vec<f64>> {
    let (n, d) = (system.state_dim(), system.input_dim());
    check_dim("policy input dimension", n, policy.in_dim())?;
    check_dim("policy output dimension", d, policy.out_dim())?;
    check_dim("target input dimension", n, target.in_dim())?;
    check_dim("target output dimension", d, target.out_dim())?;
    let mut ws = Workspace::new(n, d);
    let mut grad = vec![0.0; policy.num_params()];
    let mut scratch = EvalScratch::default();
    for traj in trajs {
        for x in &traj.states[..traj.horizon()] {
            check_dim("state dimension", n, x.len())?;
            let mut t = vec![0.0; d];
            target.eval_into(x, &mut t, &mut scratch);
            let gain = (mode == LossMode::ModelBased)
                .then(|| system.input_gain(x))
                .transpose()?;
            let s = Sample {
                x: x.clone(),
                target: t,
                gain,
                hinge: None,
            };
            sample_loss_grad(policy, &s, mode, None, Some(&mut grad), &mut ws);
        }
    }
    Ok(grad)
}
