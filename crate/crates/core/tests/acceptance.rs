//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit status
//! when any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use igsil_core::dynamics::{
    make_contracting_example, make_p_system, rollout_closed, rollout_open, ContractingKind,
    PSystemSpec, Trajectory,
};
use igsil_core::experiments::{
    percentile, random_unstable_pair, records_to_csv, run_lq_stability, run_p_sweep, Algorithm,
    ExperimentConfig, ResultRecord,
};
use igsil_core::learning::{
    behavior_cloning, cmile, empirical_loss, loss_gradient, AdamLearner, CermProblem, CmileConfig,
    DivergenceHandling, FitOutcome, IcDistribution, Learner, OracleLearner, TrainConfig,
};
use igsil_core::linalg::{dare_residual, dist2, lqr, symmetric_eigenvalues, DenseMatrix};
use igsil_core::policies::{
    demix_final, mix, random_mlp, residual_weight, Activation, AffinePolicy, MlpPolicy, Policy,
};
use igsil_core::rng;
use igsil_core::stability::{
    check_contraction_metric, check_igs_on_trajectories, check_lyapunov_decrement, disc_bound_ics,
    disc_bound_inputs, gronwall_bound, imitation_loss_with, p_system_certificate,
    p_system_igs_params, IgsCase, LossMode, SampleSpec,
};
use nalgebra::DMatrix;
use rand::Rng;

const P_VALUES: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 5.0];

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn eta_for(p: f64) -> f64 {
    0.9 * 4.0 / (5.0 + p)
}

fn h(x: f64, p: f64) -> f64 {
    let s = x.abs().powf(p);
    x * s / (1.0 + s)
}

fn lyapunov_suite() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for p in P_VALUES {
        let eta = eta_for(p);
        let start = Instant::now();
        let sys = make_p_system(&PSystemSpec::prop6(p, eta)).unwrap();
        let cert = p_system_certificate(p, eta).unwrap();
        let spec = SampleSpec::new(1_000_000, 17).with_tolerance(1e-9);
        let report = check_lyapunov_decrement(&cert, &sys, &spec, |_, s| {
            (
                vec![s.random_range(-10.0..=10.0)],
                vec![s.random_range(-10.0..=10.0)],
                vec![s.random_range(-10.0..=10.0)],
            )
        })
        .unwrap();

        let mut s = rng::stream(23, &[p.to_bits()]);
        let c = 2f64.powf(-(2.0 + p));
        let (mut deriv_bad, mut sign_bad) = (0usize, 0usize);
        for _ in 0..1_000_000 {
            let (x, y): (f64, f64) = (s.random_range(-10.0..=10.0), s.random_range(-10.0..=10.0));
            let e = (x - y).abs();
            if (x - y).signum() * (h(x, p) - h(y, p)) < c * e.min(e.powf(1.0 + p)) - 1e-12 {
                deriv_bad += 1;
            }
            if x != y && ((x - y) - eta * (h(x, p) - h(y, p))).signum() != (x - y).signum() {
                sign_bad += 1;
            }
        }
        let elapsed = start.elapsed();
        ok &=
            report.passed() && deriv_bad == 0 && sign_bad == 0 && elapsed < Duration::from_secs(30);
        notes.push(format!(
            "p={p}: {} decrement / {deriv_bad} increment / {sign_bad} sign violations, worst {:.2e}, {:.1}s",
            report.violations,
            report.worst_residual,
            elapsed.as_secs_f64()
        ));
    }
    Verdict::new(ok, notes.join("; "))
}

fn igs_falsification() -> Verdict {
    let start = Instant::now();
    let mut total = 0;
    let mut worst = f64::NEG_INFINITY;
    for p in P_VALUES {
        let eta = eta_for(p);
        let sys = make_p_system(&PSystemSpec::prop6(p, eta)).unwrap();
        let psi = p_system_igs_params(p, eta).unwrap();
        let report = check_igs_on_trajectories(&psi, &sys, &SampleSpec::new(2_000, 29), |_, s| {
            let t = s.random_range(1..=200usize);
            IgsCase {
                xi1: vec![s.random_range(-5.0..=5.0)],
                xi2: vec![s.random_range(-5.0..=5.0)],
                inputs: (0..t).map(|_| vec![s.random_range(-1.0..=1.0)]).collect(),
            }
        })
        .unwrap();
        total += report.violations;
        worst = worst.max(report.worst_residual);
    }
    let elapsed = start.elapsed();
    Verdict::new(
        total == 0 && elapsed < Duration::from_secs(60),
        format!(
            "10000 cases, {total} violations, worst residual {worst:.3e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn bound_dominance() -> Verdict {
    let mut s = rng::stream(31, &[]);
    let (mut input_bad, mut gron_bad, mut ic_bad, mut gron_checked) = (0, 0, 0, 0);
    for _ in 0..1_000 {
        let p = P_VALUES[s.random_range(0..P_VALUES.len())];
        let eta = s.random_range(0.05..0.99) * 4.0 / (5.0 + p);
        let sys = make_p_system(&PSystemSpec::prop6(p, eta)).unwrap();
        let psi = p_system_igs_params(p, eta).unwrap();
        let bounds = sys.bounds();
        let t = s.random_range(1..=200usize);
        let mag: f64 = s.random_range(0.0..=1.0);
        let xi: f64 = s.random_range(-5.0..=5.0);
        let inputs: Vec<Vec<f64>> = (0..t)
            .map(|_| vec![mag * s.random_range(-1.0..=1.0)])
            .collect();
        let free = rollout_open(&sys, &[xi], &vec![vec![0.0]; t]).unwrap();
        let driven = rollout_open(&sys, &[xi], &inputs).unwrap();
        let measured: f64 = (0..t)
            .map(|k| dist2(&free.states[k], &driven.states[k]))
            .sum();
        let loss: f64 = inputs.iter().map(|u| u[0].abs()).sum();
        if measured > disc_bound_inputs(&psi, t, loss).unwrap() + 1e-12 {
            input_bad += 1;
        }
        let (l, b) = (bounds.lipschitz.unwrap(), bounds.gain_bound.unwrap());
        if let Ok(g) = gronwall_bound(l, b, t, b * loss) {
            gron_checked += 1;
            if measured > g + 1e-12 {
                gron_bad += 1;
            }
        }
        let gap: f64 = s.random_range(-5.0..=5.0);
        let shifted = rollout_open(&sys, &[xi + gap], &vec![vec![0.0]; t]).unwrap();
        let ic_sum: f64 = (0..t)
            .map(|k| dist2(&free.states[k], &shifted.states[k]))
            .sum();
        if ic_sum > disc_bound_ics(&psi, t, gap.abs()).unwrap().1 + 1e-12 {
            ic_bad += 1;
        }
    }
    Verdict::new(
        input_bad + gron_bad + ic_bad == 0,
        format!("1000 cases: {input_bad} IGS-input, {gron_bad}/{gron_checked} exponential, {ic_bad} initial-condition violations"),
    )
}

fn contraction_checks() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;

    let log = make_contracting_example(ContractingKind::LogSystem).unwrap();
    let grid: Vec<f64> = (0..1000).map(|i| -10.0 + 20.0 * i as f64 / 999.0).collect();
    let metric = |x: f64| 2.0 / (1.0 + (-x.abs()).exp());
    let rho = grid
        .iter()
        .map(|&x| {
            let slope = 2.0 * x / (1.0 + x * x);
            slope * slope * metric((1.0 + x * x).ln()) / metric(x)
        })
        .fold(0.0, f64::max);
    let spec = SampleSpec::new(grid.len(), 0).with_tolerance(1e-8);
    let report =
        check_contraction_metric(&log.system, &log.metric, rho, &spec, |i, _| vec![grid[i]])
            .unwrap();
    ok &= rho < 1.0 && report.passed();
    notes.push(format!(
        "log system rho={rho:.4}: {} violations",
        report.violations
    ));

    let q = DenseMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
    let eta = 0.4;
    let gd =
        make_contracting_example(ContractingKind::GradientDescent { q: q.clone(), eta }).unwrap();
    let contraction = symmetric_eigenvalues(&DenseMatrix::identity(2).sub(&q.scale(eta)))
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max);
    let rho = contraction * contraction;
    let side = 32;
    let spec = SampleSpec::new(side * side, 0).with_tolerance(1e-8);
    let at = |k: usize| -10.0 + 20.0 * k as f64 / (side - 1) as f64;
    let report = check_contraction_metric(&gd.system, &gd.metric, rho, &spec, |i, _| {
        vec![at(i / side), at(i % side)]
    })
    .unwrap();
    ok &= rho < 1.0 && report.passed();
    notes.push(format!(
        "gradient descent rho={rho:.4}: {} violations on {} points",
        report.violations,
        side * side
    ));
    Verdict::new(ok, notes.join("; "))
}

fn oracle_radius(m: &DenseMatrix) -> f64 {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn riccati_suite() -> Verdict {
    let mut s = rng::stream(37, &[]);
    let (mut bad, mut slowest, mut worst_res) = (0, Duration::ZERO, 0.0f64);
    for i in 0..100u64 {
        let n = s.random_range(1..=10usize);
        let d = s.random_range(1..=4usize);
        let radius = s.random_range(0.5..3.0);
        let (a, b) = random_unstable_pair(n, d, radius, i).unwrap();
        let q = DenseMatrix::identity(n).scale(s.random_range(1e-3..1.0));
        let r = DenseMatrix::identity(d);
        let start = Instant::now();
        let (k, p) = lqr(&a, &b, &q, &r).unwrap();
        let elapsed = start.elapsed();
        slowest = slowest.max(elapsed);
        let residual = dare_residual(&a, &b, &q, &r, &p).unwrap();
        worst_res = worst_res.max(residual);
        let symmetric = p.asymmetry() <= 1e-10 * p.max_abs().max(1.0);
        let stable = oracle_radius(&a.add(&b.matmul(&k))) < 1.0;
        if !(residual < 1e-8) {
            eprintln!("instance {i}: n={n} d={d} radius={radius:.3} residual {residual:.3e} |P|={:.3e} rho_cl={:.6}", p.frobenius_norm(), oracle_radius(&a.add(&b.matmul(&k))));
        }
        if !(residual < 1e-8
            && symmetric
            && p.symmetrize().is_positive_definite()
            && stable
            && elapsed < Duration::from_secs(1))
        {
            bad += 1;
        }
    }
    Verdict::new(
        bad == 0,
        format!(
            "100 instances, {bad} failures, worst residual {worst_res:.2e}, slowest {:.1}ms",
            slowest.as_secs_f64() * 1e3
        ),
    )
}

fn gradient_oracle() -> Verdict {
    let mut worst = 0.0f64;
    let mut bad = 0;
    for i in 0..100u64 {
        let mut s = rng::stream(41, &[i]);
        let (n, hidden) = (s.random_range(1..=4usize), s.random_range(2..=12usize));
        let mode = if i % 2 == 0 {
            LossMode::ModelBased
        } else {
            LossMode::ModelFree
        };
        let sys =
            make_p_system(&PSystemSpec::experiment(s.random_range(0.5..5.0), n, None)).unwrap();
        let net = MlpPolicy::random(n, hidden, n, Activation::Tanh, 1000 + i).unwrap();
        let target = Policy::Mlp(Arc::new(
            random_mlp(n, 5, n, Activation::Tanh, 5000 + i).unwrap(),
        ));
        for j in 0..10 {
            let x = rng::uniform_vec(&mut s, n, 2.0);
            let traj = Trajectory {
                initial_condition: x.clone(),
                states: vec![x.clone(), x],
                inputs: vec![vec![0.0; n]],
            };
            let trajs = [traj];
            let g = loss_gradient(&trajs, &net, &target, &sys, mode).unwrap();
            let theta = net.params().to_vec();
            let loss = |t: &[f64]| {
                let pi = Policy::Mlp(Arc::new(net.with_params(t.to_vec()).unwrap()));
                imitation_loss_with(&sys, &trajs[0], &pi, &target, mode).unwrap()
            };
            let step = 1e-6;
            let fd: Vec<f64> = (0..theta.len())
                .map(|k| {
                    let (mut up, mut down) = (theta.clone(), theta.clone());
                    up[k] += step;
                    down[k] -= step;
                    (loss(&up) - loss(&down)) / (2.0 * step)
                })
                .collect();
            let err = dist2(&g, &fd) / igsil_core::linalg::norm2(&fd).max(1e-8);
            worst = worst.max(err);
            if !(err < 1e-4) {
                bad += 1;
                eprintln!("net {i} state {j}: relative error {err:.3e}");
            }
        }
    }
    Verdict::new(
        bad == 0,
        format!("1000 states on 100 networks, {bad} failures, worst relative error {worst:.2e}"),
    )
}

struct Scripted {
    script: Vec<Policy>,
    calls: std::sync::Mutex<usize>,
}

impl Learner for Scripted {
    fn fit(&self, _: &CermProblem<'_>) -> igsil_core::Result<FitOutcome> {
        let mut calls = self.calls.lock().unwrap();
        *calls += 1;
        Ok(FitOutcome {
            policy: self.script[*calls - 1].clone(),
            train_loss: 0.0,
        })
    }
}

fn algorithm_algebra() -> Verdict {
    let h = Arc::new(random_mlp(2, 6, 2, Activation::Tanh, 3).unwrap());
    let sys = make_p_system(&PSystemSpec::experiment(2.0, 2, Some(h.clone()))).unwrap();
    let expert = AffinePolicy::new(vec![(-1.0, Policy::Mlp(h))])
        .unwrap()
        .into_policy();
    let cfg = |m: usize, e: usize, alpha: f64| CmileConfig {
        system: sys.clone(),
        expert: expert.clone(),
        total_trajectories: m,
        epochs: e,
        alpha,
        horizon: 15,
        trust_constants: vec![],
        initial_conditions: IcDistribution::Gaussian { std: 1.0 },
        train: TrainConfig {
            epochs: 40,
            hidden: 8,
            ..TrainConfig::default()
        },
        seed: 5,
        divergence: DivergenceHandling::Abort,
        theory: None,
    };

    // weight of π★ inside `policy`, read off the expert's own leaves
    let star_weight = |policy: &Policy| -> Vec<f64> {
        expert
            .terms()
            .iter()
            .map(|(w, leaf)| policy.weight_of(leaf) / w)
            .collect()
    };
    let fixed = cmile(
        &cfg(20, 5, 0.3),
        &OracleLearner {
            policy: expert.clone(),
        },
    )
    .unwrap();
    let fixed_ok =
        star_weight(&fixed.policy) == [1.0] && star_weight(&fixed.last_data_policy) == [1.0];

    let single = cfg(20, 1, 1.0);
    let bc_ok = cmile(&single, &AdamLearner).unwrap().policy.to_json()
        == behavior_cloning(&single, &AdamLearner)
            .unwrap()
            .policy
            .to_json();

    let alpha = 0.25;
    let script: Vec<Policy> = (0..4)
        .map(|k| {
            Policy::Mlp(Arc::new(
                random_mlp(2, 5, 2, Activation::Tanh, 70 + k).unwrap(),
            ))
        })
        .collect();
    let learner = Scripted {
        script: script.clone(),
        calls: Default::default(),
    };
    let out = cmile(&cfg(8, 4, alpha), &learner).unwrap();
    let pi1 = mix(&expert, &script[0], alpha).unwrap();
    let mut base_err = 0.0f64;
    for roll in [&expert, &script[0], &out.policy] {
        let trajs: Vec<Trajectory> = (0..10)
            .map(|i| {
                rollout_closed(
                    &sys,
                    roll,
                    &IcDistribution::Gaussian { std: 1.0 }.sample(2, 8, &[i]),
                    15,
                )
                .unwrap()
            })
            .collect();
        for mode in [LossMode::ModelBased, LossMode::ModelFree] {
            let lhs = empirical_loss(&trajs, &sys, &pi1, &expert, mode).unwrap();
            let rhs = alpha * empirical_loss(&trajs, &sys, &script[0], &expert, mode).unwrap();
            base_err = base_err.max((lhs - rhs).abs());
        }
    }
    let bookkeeping_ok = star_weight(&out.last_data_policy) == [residual_weight(alpha, 3)];

    let prev = out.last_data_policy.clone();
    let w = residual_weight(alpha, 4);
    let feasible = AffinePolicy::new(vec![
        (w / alpha, expert.clone()),
        (1.0 - w / alpha, prev.clone()),
    ])
    .unwrap()
    .into_policy();
    let demixed = demix_final(&prev, &feasible, &expert, alpha, 4).unwrap();
    let expert_terms = expert.terms();
    let leaves: Vec<&Policy> = expert_terms
        .iter()
        .map(|(_, l)| l)
        .chain(&script[..3])
        .collect();
    let demix_err = leaves
        .iter()
        .map(|l| (demixed.weight_of(l) - prev.weight_of(l)).abs())
        .fold(0.0, f64::max);

    Verdict::new(
        fixed_ok && bc_ok && base_err <= 1e-10 && bookkeeping_ok && demix_err <= 1e-15,
        format!(
            "fixed point {fixed_ok}, single-step equals behavior cloning {bc_ok}, base-case error {base_err:.1e}, \
             bookkeeping {bookkeeping_ok}, de-mix weight error {demix_err:.1e}"
        ),
    )
}

/// Median over trials of the per-trial medians, keyed by `(algorithm, param, metric)`.
fn trial_medians(records: &[ResultRecord]) -> BTreeMap<(String, u64, String), f64> {
    let mut groups: BTreeMap<(String, u64, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.algorithm.clone(), r.param.to_bits(), r.metric.clone()))
            .or_default()
            .push(r.median);
    }
    groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            (k, percentile(&v, 0.5))
        })
        .collect()
}

fn p_trend_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.p_sweep.algorithms = vec![Algorithm::Bc, Algorithm::Cmile];
    cfg
}

fn p_trend(records: &[ResultRecord], elapsed: Duration) -> Verdict {
    let med = trial_medians(records);
    let get =
        |alg: &str, p: f64, metric: &str| med[&(alg.to_string(), p.to_bits(), metric.to_string())];
    let ps = [1.0, 3.0, 5.0];
    let mut failures = Vec::new();
    let mut table = Vec::new();
    for metric in ["goal_deviation", "imitation_loss"] {
        for alg in ["bc", "cmile"] {
            let v: Vec<f64> = ps.iter().map(|p| get(alg, *p, metric)).collect();
            table.push(format!(
                "{alg} {metric} {:.3}/{:.3}/{:.3}",
                v[0], v[1], v[2]
            ));
            if !v.windows(2).all(|w| w[0] <= w[1]) {
                failures.push(format!("{alg} {metric} not nondecreasing in p"));
            }
        }
        for p in ps {
            if get("cmile", p, metric) > get("bc", p, metric) {
                failures.push(format!("cmile > bc on {metric} at p={p}"));
            }
        }
    }
    let in_budget = elapsed < Duration::from_secs(30 * 60);
    if !in_budget {
        failures.push("over the runtime budget".into());
    }
    let detail = format!(
        "{}; {:.0}s{}",
        table.join(", "),
        elapsed.as_secs_f64(),
        if failures.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failures.join(", "))
        }
    );
    Verdict::new(failures.is_empty(), detail)
}

fn lq_trend(records: &[ResultRecord], elapsed: Duration) -> Verdict {
    let med = trial_medians(records);
    let get = |alg: &str, nu: f64| med[&(alg.to_string(), nu.to_bits(), "goal_error".to_string())];
    let nu = 1e-4;
    let (pen20, unpen20) = (get("cmile_lyap_m20", nu), get("cmile_m20", nu));
    let (pen200, unpen200) = (get("cmile_lyap_m200", nu), get("cmile_m200", nu));
    let (gap20, gap200) = (unpen20 - pen20, unpen200 - pen200);
    let low_data = pen20 <= unpen20;
    let shrinking = gap200 <= gap20;
    let other = 1e-2;
    Verdict::new(
        low_data && shrinking && elapsed < Duration::from_secs(20 * 60),
        format!(
            "nu=1e-4: budget 20 penalized {pen20:.3e} vs {unpen20:.3e}, gap {gap20:.3e}; budget 200 penalized \
             {pen200:.3e} vs {unpen200:.3e}, gap {gap200:.3e}; nu=1e-2 gaps {:.3e}/{:.3e}; {:.0}s",
            get("cmile_m20", other) - get("cmile_lyap_m20", other),
            get("cmile_m200", other) - get("cmile_lyap_m200", other),
            elapsed.as_secs_f64()
        ),
    )
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn report(index: usize, name: &str, verdict: &Verdict) {
    let tag = if verdict.passed { "PASS" } else { "FAIL" };
    println!("[{tag}] {index:>2}. {name}: {}", verdict.detail);
}

fn main() {
    let mut verdicts = Vec::new();
    let mut run = |index: usize, name: &str, verdict: Verdict| {
        report(index, name, &verdict);
        verdicts.push(verdict.passed);
    };
    run(1, "incremental Lyapunov decrement", lyapunov_suite());
    run(2, "IGS trajectory falsification", igs_falsification());
    run(3, "bound dominance", bound_dominance());
    run(4, "contraction metrics", contraction_checks());
    run(5, "Riccati suite", riccati_suite());
    run(6, "gradient oracle", gradient_oracle());
    run(7, "mixing algebra", algorithm_algebra());

    let p_cfg = p_trend_config();
    let (p_records, p_time) = timed(|| run_p_sweep(&p_cfg).unwrap());
    run(8, "p-system trends", p_trend(&p_records, p_time));

    let lq_cfg = ExperimentConfig::default();
    let (lq_records, lq_time) = timed(|| run_lq_stability(&lq_cfg).unwrap());
    run(9, "LQ stability trends", lq_trend(&lq_records, lq_time));

    let p_again = records_to_csv(&run_p_sweep(&p_cfg).unwrap());
    let lq_again = records_to_csv(&run_lq_stability(&lq_cfg).unwrap());
    let same_p = p_again == records_to_csv(&p_records);
    let same_lq = lq_again == records_to_csv(&lq_records);
    run(
        10,
        "determinism",
        Verdict::new(
            same_p && same_lq,
            format!(
                "p-sweep CSV identical {same_p} ({} bytes), LQ CSV identical {same_lq} ({} bytes)",
                p_again.len(),
                lq_again.len()
            ),
        ),
    );

    let failed = verdicts.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} of {} criteria passed",
        verdicts.len() - failed,
        verdicts.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
