use rayon::prelude::*;

use super::config::{ExperimentConfig, LqConfig};
use super::evaluate::{evaluate, test_ics};
use super::records::ResultRecord;
use crate::dynamics::make_lti;
use crate::error::{Error, Result};
use crate::learning::{
    cmile, AdamLearner, CmileConfig, DivergenceHandling, IcDistribution, StabilityPenalty,
    TrainConfig,
};
use crate::linalg::{lqr, norm2, spectral_radius, DenseMatrix};
use crate::policies::Policy;
use crate::rng::{derive_seed, gaussian_vec, stream, tags};
use crate::stability::build_robust_lqr_certificate;

const STUDY: &str = "lq_stability";

/// Gaussian `(A, B)` with `A` rescaled to spectral radius `radius`.
pub fn random_unstable_pair(
    n: usize,
    d: usize,
    radius: f64,
    seed: u64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let mut s = stream(seed, &[tags::SYSTEM]);
    let a = DenseMatrix::from_row_major(n, n, gaussian_vec(&mut s, n * n, 1.0))?;
    let b = DenseMatrix::from_row_major(n, d, gaussian_vec(&mut s, n * d, 1.0))?;
    let rho = spectral_radius(&a)?;
    if !(rho > 0.0) {
        return Err(Error::precondition(format!(
            "sampled A with seed {seed} is nilpotent"
        )));
    }
    Ok((a.scale(radius / rho), b))
}

fn goal_errors(eval: &super::evaluate::Evaluation) -> Vec<f64> {
    eval.final_states().map(norm2).collect()
}

fn run_point(l: &LqConfig, trial_seed: u64, nu: f64) -> Result<Vec<ResultRecord>> {
    let (a, b) = random_unstable_pair(l.state_dim, l.input_dim, l.open_loop_radius, trial_seed)?;
    let q = DenseMatrix::identity(l.state_dim).scale(nu);
    let r = DenseMatrix::identity(l.input_dim);
    let (k, p_star) = lqr(&a, &b, &q, &r).map_err(|e| {
        Error::precondition(format!(
            "Riccati solve failed for the pair drawn with seed {trial_seed}: {e}"
        ))
    })?;
    let a_cl = a.add(&b.matmul(&k));
    let rho_cl = spectral_radius(&a_cl)?;
    let gamma = ((1.0 + rho_cl * rho_cl) / 2.0).sqrt();
    let certificate = build_robust_lqr_certificate(&a_cl, &p_star, gamma, l.certificate_eps)?;
    log::debug!("lq_stability seed {trial_seed} nu {nu}: closed-loop radius {rho_cl:.4}");

    let system = make_lti(a, b)?;
    let expert = Policy::linear(k);
    let dist = IcDistribution::Gaussian { std: l.ic_std };
    let ics = test_ics(dist, l.state_dim, trial_seed, l.test_rollouts);
    let mut out = vec![ResultRecord::from_sample(
        STUDY,
        trial_seed,
        "expert",
        nu,
        "goal_error",
        &goal_errors(&evaluate(&system, &expert, &ics, l.horizon)?),
    )?];

    for &budget in &l.budgets {
        for (variant, penalty) in [
            ("cmile", None),
            (
                "cmile_lyap",
                Some(StabilityPenalty {
                    certificate: certificate.clone(),
                    weight: l.penalty_weight,
                }),
            ),
        ] {
            let cfg = CmileConfig {
                system: system.clone(),
                expert: expert.clone(),
                total_trajectories: budget,
                epochs: l.epochs,
                alpha: l.alpha,
                horizon: l.horizon,
                trust_constants: Vec::new(),
                initial_conditions: dist,
                train: TrainConfig {
                    epochs: l.train_epochs,
                    learning_rate: l.learning_rate,
                    batch_size: l.batch_size,
                    seed: derive_seed(
                        trial_seed,
                        &[tags::POLICY_INIT, budget as u64, nu.to_bits()],
                    ),
                    stability_penalty: penalty,
                    loss_mode: l.loss_mode,
                    hidden: l.hidden,
                    activation: l.activation,
                    ..TrainConfig::default()
                },
                seed: derive_seed(trial_seed, &[budget as u64]),
                divergence: DivergenceHandling::Truncate,
                theory: None,
            };
            let outcome = cmile(&cfg, &AdamLearner)?;
            let run = evaluate(&system, &outcome.policy, &ics, l.horizon)?;
            let name = format!("{variant}_m{budget}");
            if run.diverged > 0 {
                log::warn!("lq_stability: {name} at nu = {nu} (seed {trial_seed}) diverged on {} test rollouts", run.diverged);
            }
            out.push(ResultRecord::from_sample(
                STUDY,
                trial_seed,
                &name,
                nu,
                "goal_error",
                &goal_errors(&run),
            )?);
        }
    }
    Ok(out)
}

/// LQR experts on a random unstable system, imitated by CMILe with and
/// without the Lyapunov penalty; the metric is `‖x_T‖₂` on test rollouts.
///
/// Algorithm labels are `expert`, `cmile_m{budget}` and
/// `cmile_lyap_m{budget}`; the parameter column holds `ν`.
pub fn run_lq_stability(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let cfg = cfg.effective();
    cfg.validate()?;
    let l = &cfg.lq_stability;
    let points: Vec<(u64, f64)> = l
        .nu
        .iter()
        .flat_map(|&nu| (0..l.trials as u64).map(move |t| (cfg.global.seed.wrapping_add(t), nu)))
        .collect();
    let per_point = points
        .par_iter()
        .map(|&(seed, nu)| run_point(l, seed, nu))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        let l = &mut c.lq_stability;
        l.trials = 1;
        l.state_dim = 3;
        l.input_dim = 2;
        l.nu = vec![1e-2];
        l.budgets = vec![4];
        l.epochs = 2;
        l.horizon = 6;
        l.hidden = 6;
        l.train_epochs = 3;
        l.test_rollouts = 8;
        c
    }

    #[test]
    fn pair_has_requested_radius() {
        let (a, b) = random_unstable_pair(10, 4, 3.638, 5).unwrap();
        assert!((spectral_radius(&a).unwrap() - 3.638).abs() < 1e-8);
        assert_eq!((b.rows(), b.cols()), (10, 4));
    }

    #[test]
    fn zero_penalty_matches_no_penalty() {
        let mut c = tiny();
        c.lq_stability.penalty_weight = 0.0;
        let recs = run_lq_stability(&c).unwrap();
        let names: Vec<_> = recs.iter().map(|r| r.algorithm.as_str()).collect();
        assert_eq!(names, ["expert", "cmile_m4", "cmile_lyap_m4"]);
        assert_eq!(
            (recs[1].median, recs[1].p20, recs[1].p80),
            (recs[2].median, recs[2].p20, recs[2].p80)
        );
    }

    #[test]
    fn expert_goal_error_matches_simulation() {
        let c = tiny();
        let l = &c.lq_stability;
        let recs = run_lq_stability(&c).unwrap();
        let seed = c.global.seed;
        let (a, b) =
            random_unstable_pair(l.state_dim, l.input_dim, l.open_loop_radius, seed).unwrap();
        let (k, _) = lqr(
            &a,
            &b,
            &DenseMatrix::identity(3).scale(1e-2),
            &DenseMatrix::identity(2),
        )
        .unwrap();
        let acl = a.add(&b.matmul(&k));
        let mut errs: Vec<f64> = test_ics(
            IcDistribution::Gaussian { std: l.ic_std },
            3,
            seed,
            l.test_rollouts,
        )
        .into_iter()
        .map(|mut x| {
            for _ in 0..l.horizon {
                x = acl.mul_vec(&x);
            }
            norm2(&x)
        })
        .collect();
        errs.sort_by(f64::total_cmp);
        let median = (errs[3] + errs[4]) / 2.0;
        assert!((recs[0].median - median).abs() <= 1e-9 * (1.0 + median));
    }
}
