use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::Activation;
use crate::stability::LossMode;

/// Environment variable that replaces `global.seed` when set.
pub const SEED_ENV: &str = "IGSIL_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    PSweep,
    LqStability,
    BoundsDemo,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::PSweep => "p_sweep",
            Study::LqStability => "lq_stability",
            Study::BoundsDemo => "bounds_demo",
        }
    }
}

impl FromStr for Study {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p_sweep" => Ok(Study::PSweep),
            "lq_stability" => Ok(Study::LqStability),
            "bounds_demo" => Ok(Study::BoundsDemo),
            other => Err(Error::Parse(format!(
                "unknown study `{other}` (expected p_sweep, lq_stability or bounds_demo)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bc,
    Cmile,
    CmileAgg,
    Dagger,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bc => "bc",
            Algorithm::Cmile => "cmile",
            Algorithm::CmileAgg => "cmile_agg",
            Algorithm::Dagger => "dagger",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub seed: u64,
    /// Replace the desk-scale defaults with the published full-scale sizes.
    pub full_scale: bool,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            seed: 7,
            full_scale: false,
        }
    }
}

/// Tunable p-system sweep comparing the imitation learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PSweepConfig {
    pub trials: usize,
    pub p: Vec<f64>,
    pub dim: usize,
    /// Total trajectory budget `m`.
    pub m: usize,
    pub horizon: usize,
    /// Mixing epochs `E` (behavior cloning always uses one).
    pub epochs: usize,
    pub alpha: f64,
    pub hidden: usize,
    /// Width of the random network folded into the dynamics.
    pub expert_hidden: usize,
    pub train_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub test_rollouts: usize,
    pub ic_std: f64,
    pub loss_mode: LossMode,
    pub algorithms: Vec<Algorithm>,
}

impl Default for PSweepConfig {
    fn default() -> Self {
        PSweepConfig {
            trials: 5,
            p: vec![1.0, 3.0, 5.0],
            dim: 10,
            m: 100,
            horizon: 50,
            epochs: 25,
            alpha: 0.15,
            hidden: 32,
            expert_hidden: 32,
            train_epochs: 300,
            learning_rate: 0.01,
            batch_size: 512,
            test_rollouts: 500,
            ic_std: 1.0,
            loss_mode: LossMode::ModelBased,
            algorithms: vec![
                Algorithm::Bc,
                Algorithm::Cmile,
                Algorithm::CmileAgg,
                Algorithm::Dagger,
            ],
        }
    }
}

/// Unstable linear system under LQR experts with and without the Lyapunov
/// penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqConfig {
    pub trials: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    /// Open-loop spectral radius after rescaling.
    pub open_loop_radius: f64,
    /// State-cost weights `ν` in `Q = νI`.
    pub nu: Vec<f64>,
    /// Trajectory budgets `m`.
    pub budgets: Vec<usize>,
    pub horizon: usize,
    pub epochs: usize,
    pub alpha: f64,
    pub hidden: usize,
    pub activation: Activation,
    pub train_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub penalty_weight: f64,
    /// Regularizer `ε` of the robust certificate.
    pub certificate_eps: f64,
    pub test_rollouts: usize,
    pub ic_std: f64,
    pub loss_mode: LossMode,
}

impl Default for LqConfig {
    fn default() -> Self {
        LqConfig {
            trials: 3,
            state_dim: 10,
            input_dim: 4,
            open_loop_radius: 3.638,
            nu: vec![1e-4, 1e-2],
            budgets: vec![20, 200],
            horizon: 25,
            epochs: 10,
            alpha: 0.3,
            hidden: 32,
            activation: Activation::Relu,
            train_epochs: 300,
            learning_rate: 0.01,
            batch_size: 512,
            penalty_weight: 1.0,
            certificate_eps: 1e-3,
            test_rollouts: 100,
            ic_std: 2.0,
            loss_mode: LossMode::ModelBased,
        }
    }
}

/// Measured discrepancy against the exponential and the IGS bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsDemoConfig {
    pub p: f64,
    pub eta: f64,
    pub horizons: Vec<usize>,
    pub magnitudes: Vec<f64>,
    /// Random (initial condition, input sequence) draws per grid point.
    pub cases: usize,
    pub ic_half_width: f64,
}

impl Default for BoundsDemoConfig {
    fn default() -> Self {
        BoundsDemoConfig {
            p: 1.0,
            eta: 0.5,
            horizons: vec![4, 16, 64, 256],
            magnitudes: vec![0.0, 0.01, 0.1, 1.0],
            cases: 20,
            ic_half_width: 2.0,
        }
    }
}

/// Complete harness configuration: one flat TOML section per study.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub global: GlobalConfig,
    pub p_sweep: PSweepConfig,
    pub lq_stability: LqConfig,
    pub bounds_demo: BoundsDemoConfig,
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::precondition(format!("{name} must be positive")));
    }
    Ok(())
}

fn nonempty<T>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::precondition(format!("{name} must not be empty")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("invalid experiment config: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value`, where `value` is a TOML literal or a bare
    /// string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override `{assignment}` is not key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Parse(format!("override key `{path}` must be section.key")))?;
        let raw = raw.trim();
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut table = toml::Table::try_from(&*self).expect("config serializes");
        let sect = table
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| Error::Parse(format!("unknown config section `{section}`")))?;
        if !sect.contains_key(key) {
            return Err(Error::Parse(format!(
                "unknown key `{key}` in section `{section}`"
            )));
        }
        sect.insert(key.to_string(), value);
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Parse(format!("override `{assignment}`: {e}")))?;
        Ok(())
    }

    /// Replaces the seed from [`SEED_ENV`] when it is set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
            log::info!(
                "seed {seed} taken from {SEED_ENV} (config had {})",
                self.global.seed
            );
            self.global.seed = seed;
        }
        Ok(())
    }

    /// The configuration actually run: full-scale sizes when requested.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        if c.global.full_scale {
            c.p_sweep.m = 250;
            c.p_sweep.horizon = 100;
            c.p_sweep.hidden = 64;
            c.p_sweep.p = vec![1.0, 2.0, 3.0, 4.0, 5.0];
            c.lq_stability.nu = vec![1e-4, 1e-3, 1e-2];
            c.lq_stability.trials = 10;
            c.lq_stability.hidden = 64;
            c.lq_stability.train_epochs = 500;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.p_sweep;
        positive("p_sweep.trials", s.trials)?;
        positive("p_sweep.dim", s.dim)?;
        positive("p_sweep.m", s.m)?;
        positive("p_sweep.horizon", s.horizon)?;
        positive("p_sweep.epochs", s.epochs)?;
        positive("p_sweep.hidden", s.hidden)?;
        positive("p_sweep.expert_hidden", s.expert_hidden)?;
        positive("p_sweep.batch_size", s.batch_size)?;
        positive("p_sweep.test_rollouts", s.test_rollouts)?;
        nonempty("p_sweep.p", &s.p)?;
        nonempty("p_sweep.algorithms", &s.algorithms)?;
        if s.p.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::precondition("p_sweep.p entries must be positive"));
        }
        let l = &self.lq_stability;
        positive("lq_stability.trials", l.trials)?;
        positive("lq_stability.state_dim", l.state_dim)?;
        positive("lq_stability.input_dim", l.input_dim)?;
        positive("lq_stability.horizon", l.horizon)?;
        positive("lq_stability.epochs", l.epochs)?;
        positive("lq_stability.hidden", l.hidden)?;
        positive("lq_stability.batch_size", l.batch_size)?;
        positive("lq_stability.test_rollouts", l.test_rollouts)?;
        nonempty("lq_stability.nu", &l.nu)?;
        nonempty("lq_stability.budgets", &l.budgets)?;
        if l.nu.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::precondition(
                "lq_stability.nu entries must be positive",
            ));
        }
        if l.budgets.iter().any(|&b| b == 0 || b % l.epochs != 0) {
            return Err(Error::precondition(
                "lq_stability.budgets must be positive multiples of epochs",
            ));
        }
        if !(l.open_loop_radius > 1.0) {
            return Err(Error::precondition(
                "lq_stability.open_loop_radius must exceed 1",
            ));
        }
        let b = &self.bounds_demo;
        positive("bounds_demo.cases", b.cases)?;
        nonempty("bounds_demo.horizons", &b.horizons)?;
        nonempty("bounds_demo.magnitudes", &b.magnitudes)?;
        if b.horizons.contains(&0) || b.magnitudes.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::precondition(
                "bounds_demo horizons must be positive and magnitudes non-negative",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(
            ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap(),
            c
        );
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), c);
    }

    #[test]
    fn partial_file_and_overrides() {
        let mut c = ExperimentConfig::from_toml_str("[p_sweep]\nm = 20\np = [2.0]\n").unwrap();
        assert_eq!(
            (c.p_sweep.m, c.p_sweep.p.clone(), c.p_sweep.horizon),
            (20, vec![2.0], 50)
        );
        c.apply_override("p_sweep.trials=1").unwrap();
        c.apply_override("lq_stability.nu = [0.5]").unwrap();
        c.apply_override("p_sweep.loss_mode=model_free").unwrap();
        c.apply_override("p_sweep.algorithms=[\"bc\"]").unwrap();
        assert_eq!(c.p_sweep.trials, 1);
        assert_eq!(c.lq_stability.nu, vec![0.5]);
        assert_eq!(c.p_sweep.loss_mode, LossMode::ModelFree);
        assert_eq!(c.p_sweep.algorithms, vec![Algorithm::Bc]);
    }

    #[test]
    fn bad_overrides() {
        let mut c = ExperimentConfig::default();
        assert!(c.apply_override("p_sweep.nope=1").is_err());
        assert!(c.apply_override("nosection.m=1").is_err());
        assert!(c.apply_override("p_sweep.m=-3").is_err());
        assert!(c.apply_override("m").is_err());
        assert!(ExperimentConfig::from_toml_str("[p_sweep]\nbogus = 1\n").is_err());
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn validation_catches_zero_counts() {
        let mut c = ExperimentConfig::default();
        c.p_sweep.trials = 0;
        assert!(c.validate().unwrap_err().is_precondition());
        let mut c = ExperimentConfig::default();
        c.lq_stability.budgets = vec![15];
        assert!(c.validate().is_err());
    }

    #[test]
    fn full_scale_switch() {
        let mut c = ExperimentConfig::default();
        c.global.full_scale = true;
        let e = c.effective();
        assert_eq!((e.p_sweep.m, e.p_sweep.horizon), (250, 100));
        assert_eq!(
            ExperimentConfig::default().effective(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn study_names() {
        for s in [Study::PSweep, Study::LqStability, Study::BoundsDemo] {
            assert_eq!(s.name().parse::<Study>().unwrap(), s);
        }
        assert!("x".parse::<Study>().is_err());
    }
}
