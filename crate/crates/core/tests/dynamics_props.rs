use std::sync::Arc;

use igsil_core::dynamics::{
    make_contracting_example, make_lti, make_p_system, rollout_closed, rollout_open,
    ContractingKind, DynamicsSystem, PSystemSpec,
};
use igsil_core::linalg::DenseMatrix;
use igsil_core::policies::{random_mlp, Activation, AffinePolicy, Policy};
use proptest::prelude::*;

fn bundled_systems() -> Vec<DynamicsSystem> {
    let h = Arc::new(random_mlp(3, 5, 3, Activation::Tanh, 4).unwrap());
    vec![
        make_p_system(&PSystemSpec::prop6(1.5, 0.5)).unwrap(),
        make_p_system(&PSystemSpec::experiment(2.0, 3, None)).unwrap(),
        make_p_system(&PSystemSpec::experiment(3.0, 3, Some(h))).unwrap(),
        make_lti(
            DenseMatrix::from_rows(&[vec![1.2, 0.3], vec![-0.4, 0.9]]).unwrap(),
            DenseMatrix::from_rows(&[vec![1.0], vec![0.5]]).unwrap(),
        )
        .unwrap(),
        make_contracting_example(ContractingKind::LogSystem)
            .unwrap()
            .system,
        make_contracting_example(ContractingKind::GradientDescent {
            q: DenseMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(),
            eta: 0.4,
        })
        .unwrap()
        .system,
        make_contracting_example(ContractingKind::PiecewiseLinear {
            modes: vec![
                DenseMatrix::diagonal(&[0.5, 0.2]),
                DenseMatrix::diagonal(&[-0.3, 0.6]),
            ],
            normals: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            b: DenseMatrix::identity(2),
            p: DenseMatrix::identity(2),
        })
        .unwrap()
        .system,
    ]
}

fn pick(v: &[f64], n: usize) -> Vec<f64> {
    v.iter().cycle().take(n).copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_reproduces_states(
        raw_x in prop::collection::vec(-3.0f64..3.0, 3),
        seed in 0u64..1000,
        horizon in 1usize..40,
    ) {
        for sys in bundled_systems() {
            let n = sys.state_dim();
            let policy = Policy::Mlp(Arc::new(random_mlp(n, 4, sys.input_dim(), Activation::Tanh, seed).unwrap()));
            let traj = rollout_closed(&sys, &policy, &pick(&raw_x, n), horizon).unwrap();
            let replay = rollout_open(&sys, &traj.initial_condition, &traj.inputs).unwrap();
            for (a, b) in traj.states.iter().zip(&replay.states) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn control_affine_linearity(
        raw_x in prop::collection::vec(-4.0f64..4.0, 3),
        raw_u1 in prop::collection::vec(-2.0f64..2.0, 3),
        raw_u2 in prop::collection::vec(-2.0f64..2.0, 3),
        alpha in 0.0f64..=1.0,
    ) {
        for sys in bundled_systems() {
            let (n, d) = (sys.state_dim(), sys.input_dim());
            let x = pick(&raw_x, n);
            let (u1, u2) = (pick(&raw_u1, d), pick(&raw_u2, d));
            let mixed: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let lhs = sys.step(&x, &mixed).unwrap();
            let (s1, s2) = (sys.step(&x, &u1).unwrap(), sys.step(&x, &u2).unwrap());
            for i in 0..n {
                let rhs = alpha * s1[i] + (1.0 - alpha) * s2[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{} {} vs {}", sys.name(), lhs[i], rhs);
            }
        }
    }

    #[test]
    fn experiment_decomposition(
        x in prop::collection::vec(-3.0f64..3.0, 4),
        v in prop::collection::vec(-1.0f64..1.0, 4),
        p in 0.5f64..5.0,
        seed in 0u64..100,
    ) {
        let h = Arc::new(random_mlp(4, 6, 4, Activation::Tanh, seed).unwrap());
        let sys = make_p_system(&PSystemSpec::experiment(p, 4, Some(h.clone()))).unwrap();
        let expert = AffinePolicy::new(vec![(-1.0, Policy::Mlp(h))]).unwrap().into_policy();
        let star = expert.evaluate(&x).unwrap();
        let u: Vec<f64> = star.iter().zip(&v).map(|(a, b)| a + b).collect();
        let expert_step = sys.step(&x, &star).unwrap();
        let got = sys.step(&x, &u).unwrap();
        for i in 0..4 {
            let want = expert_step[i] + v[i] / (1.0 + x[i].abs().powf(p));
            prop_assert!((got[i] - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_is_a_fixed_point() {
    for sys in bundled_systems() {
        let (n, d) = (sys.state_dim(), sys.input_dim());
        let policies = [
            Policy::zero(n, d),
            Policy::Mlp(Arc::new(random_mlp(n, 7, d, Activation::Tanh, 1).unwrap())),
            Policy::Mlp(Arc::new(random_mlp(n, 7, d, Activation::Relu, 2).unwrap())),
            Policy::linear(
                DenseMatrix::from_row_major(d, n, (0..n * d).map(|i| i as f64 - 1.5).collect())
                    .unwrap(),
            ),
        ];
        for pi in &policies {
            let traj = rollout_closed(&sys, pi, &vec![0.0; n], 25).unwrap();
            assert!(
                traj.states.iter().all(|s| s.iter().all(|v| *v == 0.0)),
                "{}",
                sys.name()
            );
        }
    }
}

#[test]
fn expert_closed_loop_is_h_free() {
    let h = Arc::new(random_mlp(3, 8, 3, Activation::Tanh, 11).unwrap());
    let with_h = make_p_system(&PSystemSpec::experiment(2.0, 3, Some(h.clone()))).unwrap();
    let without = make_p_system(&PSystemSpec::experiment(2.0, 3, None)).unwrap();
    let expert = AffinePolicy::new(vec![(-1.0, Policy::Mlp(h))])
        .unwrap()
        .into_policy();
    let a = rollout_closed(&with_h, &expert, &[0.7, -1.2, 2.5], 30).unwrap();
    let b = rollout_closed(&without, &Policy::zero(3, 3), &[0.7, -1.2, 2.5], 30).unwrap();
    assert_eq!(a.states, b.states);
}

#[test]
fn trajectory_csv_round_trip() {
    let sys = make_p_system(&PSystemSpec::experiment(1.0, 2, None)).unwrap();
    let pi = Policy::Mlp(Arc::new(random_mlp(2, 3, 2, Activation::Tanh, 0).unwrap()));
    let t = rollout_closed(&sys, &pi, &[0.1, -0.3], 5).unwrap();
    let back = igsil_core::dynamics::Trajectory::from_csv(&t.to_csv()).unwrap();
    assert_eq!(back, t);
}
