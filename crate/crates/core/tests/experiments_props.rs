use igsil_core::dynamics::rollout_closed;
use igsil_core::experiments::{
    p_sweep_learner_config, p_sweep_setup, percentile, records_to_csv, run_lq_stability,
    run_p_sweep, summarize, Algorithm, ExperimentConfig, PSweepConfig,
};
use igsil_core::learning::{behavior_cloning, generalization_gap, AdamLearner, IcDistribution};
use igsil_core::stability::LossMode;
use proptest::prelude::*;

proptest! {
    #[test]
    fn percentiles_are_ordered(mut v in prop::collection::vec(-100.0f64..100.0, 1..60), q in 0.0f64..=1.0) {
        v.sort_by(f64::total_cmp);
        let (med, p20, p80) = summarize(&v).unwrap();
        prop_assert!(v[0] <= p20 && p20 <= med && med <= p80 && p80 <= v[v.len() - 1]);
        let x = percentile(&v, q);
        prop_assert!(x >= v[0] && x <= v[v.len() - 1]);
        prop_assert!(percentile(&v, (q + 0.1).min(1.0)) >= x);
    }
}

#[test]
fn summarize_rejects_bad_samples() {
    assert!(summarize(&[]).is_err());
    assert!(summarize(&[1.0, f64::NAN]).is_err());
}

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.p_sweep.trials = 2;
    cfg.p_sweep.p = vec![1.0, 2.0];
    cfg.p_sweep.dim = 3;
    cfg.p_sweep.m = 12;
    cfg.p_sweep.epochs = 3;
    cfg.p_sweep.horizon = 10;
    cfg.p_sweep.hidden = 8;
    cfg.p_sweep.train_epochs = 20;
    cfg.p_sweep.test_rollouts = 20;
    cfg.lq_stability.trials = 1;
    cfg.lq_stability.state_dim = 3;
    cfg.lq_stability.input_dim = 2;
    cfg.lq_stability.nu = vec![1e-2];
    cfg.lq_stability.budgets = vec![10];
    cfg.lq_stability.epochs = 5;
    cfg.lq_stability.horizon = 10;
    cfg.lq_stability.hidden = 8;
    cfg.lq_stability.train_epochs = 20;
    cfg.lq_stability.test_rollouts = 10;
    cfg
}

#[test]
fn studies_write_identical_csv_bytes() {
    let cfg = tiny();
    let a = records_to_csv(&run_p_sweep(&cfg).unwrap());
    let b = records_to_csv(&run_p_sweep(&cfg).unwrap());
    assert_eq!(a, b);
    assert_eq!(
        a.lines().filter(|l| l.contains("goal_deviation")).count(),
        2 * 2 * 4
    );
    let a = records_to_csv(&run_lq_stability(&cfg).unwrap());
    let b = records_to_csv(&run_lq_stability(&cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn generalization_gap_shrinks_with_data() {
    let s = PSweepConfig {
        dim: 2,
        horizon: 20,
        hidden: 8,
        train_epochs: 60,
        ..PSweepConfig::default()
    };
    let mut gaps = [vec![], vec![]];
    for trial in 0..10u64 {
        let (system, expert) = p_sweep_setup(&s, trial, 1.0).unwrap();
        let test: Vec<_> = (0..100)
            .map(|i| {
                let xi = IcDistribution::Gaussian { std: 1.0 }.sample(2, 1000 + trial, &[i]);
                rollout_closed(&system, &expert, &xi, s.horizon).unwrap()
            })
            .collect();
        for (slot, m) in [10usize, 200].into_iter().enumerate() {
            let s = PSweepConfig { m, ..s.clone() };
            let cfg = p_sweep_learner_config(&s, Algorithm::Bc, &system, &expert, trial, 1.0);
            let out = behavior_cloning(&cfg, &AdamLearner).unwrap();
            let train: Vec<_> = (0..m)
                .map(|i| {
                    let xi = cfg.initial_conditions.sample(2, cfg.seed, &[0, i as u64]);
                    rollout_closed(&system, &expert, &xi, s.horizon).unwrap()
                })
                .collect();
            gaps[slot].push(
                generalization_gap(
                    &train,
                    &test,
                    &system,
                    &out.policy,
                    &expert,
                    LossMode::ModelBased,
                )
                .unwrap(),
            );
        }
    }
    let med = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        percentile(v, 0.5)
    };
    let (small, large) = (med(&mut gaps[0]), med(&mut gaps[1]));
    assert!(large < small, "{large} vs {small}");
}
