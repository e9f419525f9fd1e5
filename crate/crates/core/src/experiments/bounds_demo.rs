use rand::Rng;

use super::config::ExperimentConfig;
use super::records::ResultRecord;
use crate::dynamics::{make_p_system, rollout_open, PSystemSpec};
use crate::error::{Error, Result};
use crate::rng::{stream, tags, uniform_vec};
use crate::stability::{disc_bound_inputs, discrepancy_sum, gronwall_bound, p_system_igs_params};

const STUDY: &str = "bounds_demo";

/// Input-perturbation discrepancy on the scalar p-system against the
/// exponential estimate and the IGS bound.
///
/// For each horizon `T` (parameter column) and magnitude `δ` (algorithm
/// column `u{δ}`), random initial conditions are rolled out with zero input
/// and with inputs `u_t ~ U[−δ, δ]`. The recorded metrics are the measured
/// discrepancy, the IGS bound fed with `Σ|u_t|` and the exponential estimate
/// fed with the imitation loss `Σ η|u_t|`.
pub fn run_bounds_demo(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let b = &cfg.bounds_demo;
    let system = make_p_system(&PSystemSpec::prop6(b.p, b.eta))?;
    let psi = p_system_igs_params(b.p, b.eta)?;
    let bounds = system.bounds();
    let (lip, gain) = match (bounds.lipschitz, bounds.gain_bound) {
        (Some(l), Some(g)) => (l, g),
        _ => {
            return Err(Error::precondition(
                "bounds demo needs Lipschitz and gain bounds",
            ))
        }
    };
    let seed = cfg.global.seed;
    let mut out = Vec::new();
    for &horizon in &b.horizons {
        for (mi, &mag) in b.magnitudes.iter().enumerate() {
            let mut measured = Vec::with_capacity(b.cases);
            let mut igs = Vec::with_capacity(b.cases);
            let mut gron = Vec::with_capacity(b.cases);
            for c in 0..b.cases {
                let mut s = stream(seed, &[tags::SAMPLER, horizon as u64, mi as u64, c as u64]);
                let xi = uniform_vec(&mut s, 1, b.ic_half_width);
                let inputs: Vec<Vec<f64>> = (0..horizon)
                    .map(|_| vec![mag * s.random_range(-1.0..=1.0)])
                    .collect();
                let nominal = rollout_open(&system, &xi, &vec![vec![0.0]; horizon])?;
                let perturbed = rollout_open(&system, &xi, &inputs)?;
                let total: f64 = inputs.iter().map(|u| u[0].abs()).sum();
                measured.push(discrepancy_sum(&nominal, &perturbed)?);
                igs.push(disc_bound_inputs(&psi, horizon, total)?);
                gron.push(gronwall_bound(lip, gain, horizon, gain * total)?);
            }
            let label = format!("u{mag:?}");
            let param = horizon as f64;
            out.push(ResultRecord::from_sample(
                STUDY, seed, &label, param, "measured", &measured,
            )?);
            out.push(ResultRecord::from_sample(
                STUDY,
                seed,
                &label,
                param,
                "igs_bound",
                &igs,
            )?);
            out.push(ResultRecord::from_sample(
                STUDY,
                seed,
                &label,
                param,
                "gronwall_bound",
                &gron,
            )?);
        }
    }
    Ok(out)
}
