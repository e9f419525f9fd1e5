//! Seeded desk-scale studies with CSV reporting.

mod bounds_demo;
mod config;
mod evaluate;
mod lq;
mod p_sweep;
mod records;

pub use bounds_demo::run_bounds_demo;
pub use config::{
    Algorithm, BoundsDemoConfig, ExperimentConfig, GlobalConfig, LqConfig, PSweepConfig, Study,
    SEED_ENV,
};
pub use lq::{random_unstable_pair, run_lq_stability};
pub use p_sweep::{
    p_sweep_learner_config, p_sweep_setup, run_algorithm, run_p_sweep, run_p_sweep_with,
    LearnerFactory,
};
pub use records::{percentile, records_to_csv, summarize, ResultRecord, CSV_HEADER};

use crate::error::Result;

/// Runs one study and returns its records in deterministic order.
pub fn run_study(cfg: &ExperimentConfig, study: Study) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    match study {
        Study::PSweep => run_p_sweep(cfg),
        Study::LqStability => run_lq_stability(cfg),
        Study::BoundsDemo => run_bounds_demo(cfg),
    }
}
