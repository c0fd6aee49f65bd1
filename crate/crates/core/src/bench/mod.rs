//! Metrics (TA, Rec_tr, Rec_ts, USR), the attack table and the pruning
//! sweep.

mod plot;
mod usurper;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use plot::sweep_svg;
pub use usurper::{usurper_success_rate, UsurperModel, UsurperReport};

use crate::attacks::{apply_attack, prune, AttackSpec};
use crate::dataio::{self, split_80_10_10, synth_blobs, Dataset, SplitDataset};
use crate::error::{MixerError, Result};
use crate::keygen::SecretKey;
use crate::rng::StreamId;
use crate::tensornet::{Classifier, Model};
use crate::trigger::{synth_set, Role};
use crate::verify::{compute_rho, DecisionRule};

/// Trigger count behind each recovery figure.
pub const DEFAULT_RECOVERY_N: usize = 1000;

/// Percentage of `test` classified correctly.
pub fn test_accuracy(model: &dyn Classifier, test: &Dataset) -> Result<f64> {
    crate::embed::accuracy(model, test)
}

/// `100·ρ` over `n` fresh measurement triggers built from `pool`. The
/// training split gives Rec_tr, the test split Rec_ts.
pub fn recovery(model: &dyn Classifier, key: &SecretKey, pool: &Dataset, n: usize, stream: &StreamId) -> Result<f64> {
    let set = synth_set(key, pool, n, Role::Measure, stream)?;
    Ok(100.0 * compute_rho(model, &set, key, DecisionRule::Plain)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub ta: Option<f64>,
    pub rec_tr: Option<f64>,
    pub rec_ts: Option<f64>,
    /// Set when the attack itself failed; the metrics are then absent.
    pub error: Option<String>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Evaluation settings shared by the table and the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub recovery_n: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            recovery_n: DEFAULT_RECOVERY_N,
            seed: 0,
        }
    }
}

impl EvalConfig {
    fn streams(&self) -> (StreamId, StreamId) {
        (
            StreamId::new(self.seed, "bench/rec_tr"),
            StreamId::new(self.seed, "bench/rec_ts"),
        )
    }

    /// TA, Rec_tr, Rec_ts. Every model sees the same trigger sets.
    pub fn evaluate(&self, model: &dyn Classifier, key: &SecretKey, split: &SplitDataset) -> Result<(f64, f64, f64)> {
        let (tr, ts) = self.streams();
        Ok((
            test_accuracy(model, &split.test)?,
            recovery(model, key, &split.train, self.recovery_n, &tr)?,
            recovery(model, key, &split.test, self.recovery_n, &ts)?,
        ))
    }
}

/// Host, watermarked and one row per attack on the watermarked model.
pub fn run_table(
    host: &Model,
    watermarked: &Model,
    key: &SecretKey,
    split: &SplitDataset,
    attacks: &[AttackSpec],
    eval: &EvalConfig,
) -> Result<Vec<MetricsRow>> {
    let (_, ts) = eval.streams();
    let mut rows = vec![MetricsRow {
        scenario: "host".into(),
        ta: Some(test_accuracy(host, &split.test)?),
        rec_tr: None,
        rec_ts: Some(recovery(host, key, &split.test, eval.recovery_n, &ts)?),
        error: None,
    }];
    let (ta, tr, ts) = eval.evaluate(watermarked, key, split)?;
    rows.push(MetricsRow {
        scenario: "watermarked".into(),
        ta: Some(ta),
        rec_tr: Some(tr),
        rec_ts: Some(ts),
        error: None,
    });
    for spec in attacks {
        let result = apply_attack(watermarked, spec, split).and_then(|m| eval.evaluate(&m, key, split));
        rows.push(match result {
            Ok((ta, tr, ts)) => MetricsRow {
                scenario: spec.to_string(),
                ta: Some(ta),
                rec_tr: Some(tr),
                rec_ts: Some(ts),
                error: None,
            },
            Err(e) => MetricsRow {
                scenario: spec.to_string(),
                ta: None,
                rec_tr: None,
                rec_ts: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(rows)
}

pub fn table_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("scenario,TA,Rec_tr,Rec_ts\n");
    for r in rows {
        match &r.error {
            Some(e) => {
                let _ = writeln!(
                    out,
                    "{},FAILED,FAILED,FAILED # {}",
                    r.scenario,
                    e.replace(['\n', ','], " ")
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    r.scenario,
                    cell(r.ta),
                    cell(r.rec_tr),
                    cell(r.rec_ts)
                );
            }
        }
    }
    out
}

pub fn table_text(rows: &[MetricsRow]) -> String {
    let mut out = format!("{:<14} {:>8} {:>8} {:>8}\n", "scenario", "TA", "Rec_tr", "Rec_ts");
    for r in rows {
        match &r.error {
            Some(e) => {
                let _ = writeln!(out, "{:<14} FAILED: {e}", r.scenario);
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:<14} {:>8} {:>8} {:>8}",
                    r.scenario,
                    cell(r.ta),
                    cell(r.rec_tr),
                    cell(r.rec_ts)
                );
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: f64,
    pub ta: f64,
    pub rec_tr: f64,
    pub rec_ts: f64,
}

/// Metrics at each pruning rate, each on an independently pruned copy.
pub fn run_pruning_sweep(
    model: &Model,
    key: &SecretKey,
    split: &SplitDataset,
    rates: &[f64],
    prune_seed: u64,
    eval: &EvalConfig,
) -> Result<Vec<SweepPoint>> {
    let base = StreamId::new(prune_seed, "sweep/prune");
    rates
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let pruned = prune(model, k, &base.child(i))?;
            let (ta, rec_tr, rec_ts) = eval.evaluate(&pruned, key, split)?;
            Ok(SweepPoint { k, ta, rec_tr, rec_ts })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("k,TA,Rec_tr,Rec_ts\n");
    for p in points {
        let _ = writeln!(out, "{},{:.2},{:.2},{:.2}", p.k, p.ta, p.rec_tr, p.rec_ts);
    }
    out
}

/// Largest swept rate up to which TA stays at or above `ta_floor` and
/// both recoveries at or above `rec_floor` (None if the first point fails).
pub fn sweep_knee(points: &[SweepPoint], ta_floor: f64, rec_floor: f64) -> Option<f64> {
    points
        .iter()
        .take_while(|p| p.ta >= ta_floor && p.rec_tr >= rec_floor && p.rec_ts >= rec_floor)
        .last()
        .map(|p| p.k)
}

/// Rates at which TA keeps 90% of its unattacked value but Rec_ts has
/// fallen below 80.
pub fn intertwining_violations(points: &[SweepPoint]) -> Vec<f64> {
    let Some(base) = points.iter().find(|p| p.k == 0.0).or(points.first()) else {
        return Vec::new();
    };
    points
        .iter()
        .filter(|p| p.ta >= 0.9 * base.ta && p.rec_ts < 80.0)
        .map(|p| p.k)
        .collect()
}

/// Where the experiment data came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataSource {
    Mnist { corpus: usize },
    Blobs,
}

/// Desk-scale data: the first `corpus` MNIST training images (and the full
/// test set) when the IDX files are present, synthetic 28×28 blobs
/// otherwise.
pub fn desk_split(data_dir: Option<&Path>, corpus: usize, seed: u64) -> Result<(SplitDataset, DataSource)> {
    let dir = dataio::resolve_data_dir(data_dir);
    if dataio::mnist_available(&dir) {
        let (train, test) = dataio::load_mnist(&dir)?;
        let train = dataio::head(&train, corpus)?;
        return Ok((split_80_10_10(&train, test, seed)?, DataSource::Mnist { corpus }));
    }
    if corpus < 10 {
        return Err(MixerError::Config(format!("corpus of {corpus} is too small")));
    }
    let per_class = corpus / 10;
    let train = synth_blobs(10, per_class, 28, 28, 1, seed)?;
    let test = synth_blobs(10, 100, 28, 28, 1, seed.wrapping_add(1))?;
    Ok((split_80_10_10(&train, test, seed)?, DataSource::Blobs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(k: f64, ta: f64, rec: f64) -> SweepPoint {
        SweepPoint {
            k,
            ta,
            rec_tr: rec,
            rec_ts: rec,
        }
    }

    #[test]
    fn knee_and_violations() {
        let pts = [
            pt(0.0, 99.0, 100.0),
            pt(0.2, 95.0, 99.0),
            pt(0.4, 70.0, 75.0),
            pt(0.6, 30.0, 10.0),
        ];
        assert_eq!(sweep_knee(&pts, 60.0, 70.0), Some(0.4));
        assert!(intertwining_violations(&pts).is_empty());
        let bad = [pt(0.0, 99.0, 100.0), pt(0.2, 95.0, 50.0)];
        assert_eq!(intertwining_violations(&bad), vec![0.2]);
    }

    #[test]
    fn failed_rows_are_marked() {
        let rows = vec![
            MetricsRow {
                scenario: "host".into(),
                ta: Some(99.0),
                rec_tr: None,
                rec_ts: Some(10.0),
                error: None,
            },
            MetricsRow {
                scenario: "int8".into(),
                ta: None,
                rec_tr: None,
                rec_ts: None,
                error: Some("boom".into()),
            },
        ];
        let csv = table_csv(&rows);
        assert!(csv.contains("host,99.00,-,10.00"));
        assert!(csv.contains("int8,FAILED"));
    }
}
