//! `igsil`: simulate, certify, bound, train and run experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde_json::json;

use igsil_core::dynamics::{make_lti, make_p_system, rollout_closed, PSystemSpec};
use igsil_core::experiments::{
    p_sweep_learner_config, p_sweep_setup, records_to_csv, run_algorithm, run_study, Algorithm,
    ExperimentConfig, Study,
};
use igsil_core::learning::{audit_csv, AdamLearner};
use igsil_core::linalg::DenseMatrix;
use igsil_core::policies::Policy;
use igsil_core::rng::uniform_vec;
use igsil_core::stability::{
    check_igs_on_trajectories, check_lyapunov_decrement, disc_bound_ics, disc_bound_inputs,
    gronwall_bound, p_system_certificate, p_system_igs_params, IgsCase, SampleSpec,
};

const EXIT_PRECONDITION: u8 = 2;
const EXIT_VIOLATION: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "igsil",
    version,
    about = "Incremental-gain-stable imitation learning toolkit"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll a closed-loop system forward and print the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Falsification checks of the scalar p-system certificate and IGS bound.
    Certify(CertifyArgs),
    /// Evaluate the discrepancy bounds for given constants.
    Bounds(BoundsArgs),
    /// Train one learner on the p-system and write the policy and audit log.
    Train(TrainArgs),
    /// Run a study and write its results CSV.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Prop6,
    Experiment,
}

#[derive(Args)]
struct SimulateArgs {
    /// Linear dynamics: CSV file of A (requires --b).
    #[arg(long, requires = "b")]
    a: Option<PathBuf>,
    /// Linear dynamics: CSV file of B.
    #[arg(long, requires = "a")]
    b: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, value_enum, default_value = "prop6")]
    variant: Variant,
    /// State dimension of the experiment variant.
    #[arg(long, default_value_t = 10)]
    dim: usize,
    /// Policy JSON; the zero policy when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Initial state, comma separated; all ones when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    /// Random (x, y, u) triples for the decrement check.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Random trajectory pairs for the IGS check.
    #[arg(long, default_value_t = 1_000)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace the initial-condition constant of the IGS bound.
    #[arg(long)]
    zeta: Option<f64>,
    /// Replace the input-gain constant of the IGS bound.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    /// Accumulated input size `Σ‖u_t‖`.
    #[arg(long, default_value_t = 0.1)]
    loss: f64,
    /// Initial-condition gap.
    #[arg(long, default_value_t = 0.0)]
    gap: f64,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "cmile")]
    algorithm: AlgorithmArg,
    /// Exponent `p`; the first entry of `p_sweep.p` when omitted.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AlgorithmArg {
    Bc,
    Cmile,
    CmileAgg,
    Dagger,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Bc => Algorithm::Bc,
            AlgorithmArg::Cmile => Algorithm::Cmile,
            AlgorithmArg::CmileAgg => Algorithm::CmileAgg,
            AlgorithmArg::Dagger => Algorithm::Dagger,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum StudyArg {
    PSweep,
    LqStability,
    BoundsDemo,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    study: StudyArg,
    #[command(flatten)]
    config: ConfigArgs,
    /// Trials of the selected study.
    #[arg(long)]
    trials: Option<usize>,
    /// Trajectory budget of the p-system sweep.
    #[arg(long)]
    m: Option<usize>,
    /// Use the full-scale sizes instead of the desk-scale defaults.
    #[arg(long)]
    full_scale: bool,
    /// Results CSV; `results_<study>.csv` when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let precondition = error
            .chain()
            .filter_map(|c| c.downcast_ref::<igsil_core::Error>())
            .any(igsil_core::Error::is_precondition);
        Failure {
            code: if precondition { EXIT_PRECONDITION } else { 1 },
            error,
        }
    }
}

type CliResult = Result<(), Failure>;

fn usage(msg: &str) -> CliResult {
    Err(Failure {
        code: EXIT_USAGE,
        error: anyhow::anyhow!("{msg}"),
    })
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_toml_str(&read(path)?)?,
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = args.seed {
        cfg.global.seed = seed;
    }
    cfg.apply_env_seed()?;
    Ok(cfg)
}

fn simulate(args: SimulateArgs) -> CliResult {
    let system = match (&args.a, &args.b) {
        (Some(a), Some(b)) => make_lti(
            DenseMatrix::from_csv_str(&read(a)?)?,
            DenseMatrix::from_csv_str(&read(b)?)?,
        )?,
        _ => match args.variant {
            Variant::Prop6 => make_p_system(&PSystemSpec::prop6(args.p, args.eta))?,
            Variant::Experiment => make_p_system(&PSystemSpec::experiment(args.p, args.dim, None))?,
        },
    };
    let policy = match &args.policy {
        Some(path) => Policy::from_json(&read(path)?)?,
        None => Policy::zero(system.state_dim(), system.input_dim()),
    };
    let x0 = args.x0.unwrap_or_else(|| vec![1.0; system.state_dim()]);
    let traj = rollout_closed(&system, &policy, &x0, args.horizon)?;
    write_output(args.output.as_deref(), &traj.to_csv())?;
    Ok(())
}

fn certify(args: CertifyArgs) -> CliResult {
    let system = make_p_system(&PSystemSpec::prop6(args.p, args.eta))?;
    let cert = p_system_certificate(args.p, args.eta)?;
    let mut psi = p_system_igs_params(args.p, args.eta)?;
    if let Some(z) = args.zeta {
        psi.zeta = z;
    }
    if let Some(g) = args.gamma {
        psi.gamma = g;
    }
    let decrement = check_lyapunov_decrement(
        &cert,
        &system,
        &SampleSpec::new(args.samples, args.seed),
        |_, s| {
            (
                uniform_vec(s, 1, 10.0),
                uniform_vec(s, 1, 10.0),
                uniform_vec(s, 1, 10.0),
            )
        },
    )?;
    let igs = check_igs_on_trajectories(
        &psi,
        &system,
        &SampleSpec::new(args.cases, args.seed ^ 1),
        |_, s| {
            let horizon = s.random_range(1..=200);
            IgsCase {
                xi1: uniform_vec(s, 1, 5.0),
                xi2: uniform_vec(s, 1, 5.0),
                inputs: (0..horizon).map(|_| uniform_vec(s, 1, 1.0)).collect(),
            }
        },
    )?;
    let passed = decrement.passed() && igs.passed();
    println!(
        "{}",
        json!({ "passed": passed, "psi": psi, "lyapunov_decrement": decrement, "igs_trajectories": igs })
    );
    if passed {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VIOLATION,
            error: anyhow::anyhow!("certification found violations"),
        })
    }
}

fn bounds(args: BoundsArgs) -> CliResult {
    let system = make_p_system(&PSystemSpec::prop6(args.p, args.eta))?;
    let psi = p_system_igs_params(args.p, args.eta)?;
    let b = system.bounds();
    let (lip, gain) = (b.lipschitz.unwrap_or(1.0), b.gain_bound.unwrap_or(args.eta));
    let (per_step, summed) = disc_bound_ics(&psi, args.horizon, args.gap)?;
    println!(
        "{}",
        json!({
            "horizon": args.horizon,
            "gronwall": gronwall_bound(lip, gain, args.horizon, gain * args.loss)?,
            "igs_inputs": disc_bound_inputs(&psi, args.horizon, args.loss)?,
            "igs_initial_conditions": { "per_step": per_step, "summed": summed },
        })
    );
    Ok(())
}

fn train(args: TrainArgs) -> CliResult {
    let cfg = load_config(&args.config)?.effective();
    cfg.validate()?;
    let s = &cfg.p_sweep;
    let p = args.p.unwrap_or(s.p[0]);
    let algorithm = Algorithm::from(args.algorithm);
    let (system, expert) = p_sweep_setup(s, cfg.global.seed, p)?;
    let learner_cfg = p_sweep_learner_config(s, algorithm, &system, &expert, cfg.global.seed, p);
    let outcome = run_algorithm(algorithm, &learner_cfg, &AdamLearner)?;
    fs::create_dir_all(&args.out_dir)?;
    let policy_path = args.out_dir.join("policy.json");
    fs::write(&policy_path, outcome.policy.to_json())?;
    fs::write(args.out_dir.join("audit.csv"), audit_csv(&outcome.records))?;
    println!(
        "wrote {} ({} epochs)",
        policy_path.display(),
        outcome.records.len()
    );
    Ok(())
}

fn experiment(args: ExperimentArgs) -> CliResult {
    let mut cfg = load_config(&args.config)?;
    let study = match args.study {
        StudyArg::PSweep => Study::PSweep,
        StudyArg::LqStability => Study::LqStability,
        StudyArg::BoundsDemo => Study::BoundsDemo,
    };
    cfg.global.full_scale |= args.full_scale;
    if let Some(t) = args.trials {
        match study {
            Study::PSweep => cfg.p_sweep.trials = t,
            Study::LqStability => cfg.lq_stability.trials = t,
            Study::BoundsDemo => return usage("bounds_demo has no trials"),
        }
    }
    if let Some(m) = args.m {
        if study != Study::PSweep {
            return usage("--m applies to p_sweep only");
        }
        cfg.p_sweep.m = m;
    }
    let records = run_study(&cfg, study)?;
    let path = args
        .output
        .unwrap_or_else(|| PathBuf::from(format!("results_{}.csv", study.name())));
    fs::write(&path, records_to_csv(&records))
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Certify(a) => certify(a),
        Command::Bounds(a) => bounds(a),
        Command::Train(a) => train(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
