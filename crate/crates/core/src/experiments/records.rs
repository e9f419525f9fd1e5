use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "study,seed,algorithm,param,metric,median,p20,p80";

/// One summarized metric at one parameter point of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub study: String,
    pub seed: u64,
    pub algorithm: String,
    pub param: f64,
    pub metric: String,
    pub median: f64,
    pub p20: f64,
    pub p80: f64,
}

/// Linear-interpolation percentile (`q ∈ [0, 1]`) of already sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// `(median, p20, p80)` of `values`; NaN entries are rejected.
pub fn summarize(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::precondition("cannot summarize an empty sample"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::precondition("sample contains NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        percentile(&sorted, 0.5),
        percentile(&sorted, 0.2),
        percentile(&sorted, 0.8),
    ))
}

impl ResultRecord {
    pub fn from_sample(
        study: &str,
        seed: u64,
        algorithm: &str,
        param: f64,
        metric: &str,
        values: &[f64],
    ) -> Result<Self> {
        let (median, p20, p80) = summarize(values)?;
        Ok(ResultRecord {
            study: study.into(),
            seed,
            algorithm: algorithm.into(),
            param,
            metric: metric.into(),
            median,
            p20,
            p80,
        })
    }
}

/// Serializes records with shortest round-trip float formatting.
pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{:?},{},{:?},{:?},{:?}",
            r.study, r.seed, r.algorithm, r.param, r.metric, r.median, r.p20, r.p80
        )
        .unwrap();
    }
    out
}
