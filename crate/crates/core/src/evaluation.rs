//! Scoring segmentations against ground truth.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::pipeline::{segment, SegmentConfig};
use crate::rng::{derive_seed, STREAM_EXPERIMENT};
use crate::simulate::{gen_dataset, DgpSpec};

/// Scaled Hausdorff distance between two change-point sets.
///
/// Two empty sets are at distance 0; an empty set against a non-empty one
/// is at distance 1.
pub fn hausdorff(est: &[usize], truth: &[usize], n: usize) -> f64 {
    match (est.is_empty(), truth.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    let one_sided = |a: &[usize], b: &[usize]| {
        a.iter()
            .map(|&x| b.iter().map(|&y| x.abs_diff(y)).min().unwrap_or(0))
            .max()
            .unwrap_or(0)
    };
    one_sided(est, truth).max(one_sided(truth, est)) as f64 / n.max(1) as f64
}

/// Counts of `K_hat - K` in the buckets `<= -2, -1, 0, 1, >= 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KDistribution {
    pub counts: [usize; 5],
}

impl KDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Share of exact estimates.
    pub fn exact_rate(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.counts[2] as f64 / total as f64
        }
    }
}

pub fn k_distribution(diffs: &[i64]) -> KDistribution {
    let mut counts = [0; 5];
    for &d in diffs {
        counts[(d.clamp(-2, 2) + 2) as usize] += 1;
    }
    KDistribution { counts }
}

/// Scores of one stage on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageScore {
    pub k_diff: i64,
    pub hausdorff: f64,
    pub estimated: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub chi: Option<StageScore>,
    pub xi: Option<StageScore>,
    pub runtime_secs: f64,
    /// Set when generation or segmentation failed.
    pub error: Option<String>,
}

/// Aggregates for one stage over the successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub distribution: KDistribution,
    pub mean_hausdorff: f64,
}

impl StageSummary {
    fn from_scores<'a>(scores: impl Iterator<Item = &'a StageScore>) -> Self {
        let (diffs, dh): (Vec<i64>, Vec<f64>) = scores.map(|s| (s.k_diff, s.hausdorff)).unzip();
        let mean_hausdorff = if dh.is_empty() { 0.0 } else { dh.iter().sum::<f64>() / dh.len() as f64 };
        Self { distribution: k_distribution(&diffs), mean_hausdorff }
    }
}

/// Report for one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec: DgpSpec,
    pub replicates: Vec<ReplicateRecord>,
    pub chi: StageSummary,
    pub xi: StageSummary,
    pub failures: usize,
    pub mean_runtime_secs: f64,
}

impl EvalReport {
    pub fn from_records(spec: DgpSpec, replicates: Vec<ReplicateRecord>) -> Self {
        let chi = StageSummary::from_scores(replicates.iter().filter_map(|r| r.chi.as_ref()));
        let xi = StageSummary::from_scores(replicates.iter().filter_map(|r| r.xi.as_ref()));
        let failures = replicates.iter().filter(|r| r.error.is_some()).count();
        let mean_runtime_secs = if replicates.is_empty() {
            0.0
        } else {
            replicates.iter().map(|r| r.runtime_secs).sum::<f64>() / replicates.len() as f64
        };
        Self { spec, replicates, chi, xi, failures, mean_runtime_secs }
    }

    /// The same report with every timing zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.replicates {
            r.runtime_secs = 0.0;
        }
        out.mean_runtime_secs = 0.0;
        out
    }
}

/// Cells, replicate count and the method settings of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Data-generating templates; each replicate overrides `seed`.
    pub cells: Vec<DgpSpec>,
    pub replicates: usize,
    pub seed: u64,
    pub method: SegmentConfig,
}

fn score(est: Vec<usize>, truth: &[usize], n: usize) -> StageScore {
    StageScore {
        k_diff: est.len() as i64 - truth.len() as i64,
        hausdorff: hausdorff(&est, truth, n),
        estimated: est,
    }
}

/// Runs generate, segment and score for one replicate.
pub fn run_replicate(spec: &DgpSpec, method: &SegmentConfig, replicate: usize) -> ReplicateRecord {
    let start = Instant::now();
    let outcome = (|| -> Result<_> {
        let data = gen_dataset(spec)?;
        let res = segment(&data.x, method)?;
        Ok((data, res))
    })();
    let runtime_secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok((data, res)) => ReplicateRecord {
            replicate,
            seed: spec.seed,
            chi: (!method.no_factor).then(|| score(res.chi_points.locations(), &data.truth.chi_changes, spec.n)),
            xi: Some(score(res.xi_points.locations(), &data.truth.xi_changes, spec.n)),
            runtime_secs,
            error: None,
        },
        Err(e) => {
            log::warn!("replicate {replicate} (seed {}) failed: {e}", spec.seed);
            ReplicateRecord { replicate, seed: spec.seed, chi: None, xi: None, runtime_secs, error: Some(e.to_string()) }
        }
    }
}

/// Seeded Monte Carlo over every cell; replicates run in parallel with
/// seeds derived from `(cell, replicate)`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Vec<EvalReport> {
    cfg.cells
        .iter()
        .enumerate()
        .map(|(c, template)| {
            let records = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| {
                    let spec = DgpSpec {
                        seed: derive_seed(cfg.seed, &[STREAM_EXPERIMENT, c as u64, r as u64]),
                        ..template.clone()
                    };
                    run_replicate(&spec, &cfg.method, r)
                })
                .collect();
            EvalReport::from_records(template.clone(), records)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff(&[100, 500], &[100, 500], 1000), 0.0);
        assert_eq!(hausdorff(&[100], &[120], 1000), 0.02);
        assert_eq!(hausdorff(&[100, 900], &[120], 1000), 0.78);
        assert_eq!(hausdorff(&[], &[], 1000), 0.0);
        assert_eq!(hausdorff(&[], &[5], 1000), 1.0);
        assert_eq!(hausdorff(&[5], &[], 1000), 1.0);
    }

    #[test]
    fn k_distribution_examples() {
        assert_eq!(k_distribution(&[-3, -1, 0, 0, 2]).counts, [1, 1, 2, 0, 1]);
        assert_eq!(k_distribution(&[0, 0, 0]).exact_rate(), 1.0);
        let empty = k_distribution(&[]);
        assert_eq!(empty.counts, [0; 5]);
        assert_eq!(empty.total(), 0);
    }

    #[test]
    fn failed_replicates_are_recorded() {
        let mut spec = DgpSpec::m3(100, 5, 1, true, 1);
        spec.p = 0;
        let rec = run_replicate(&spec, &SegmentConfig::default(), 0);
        assert!(rec.error.is_some());
        let report = EvalReport::from_records(spec, vec![rec]);
        assert_eq!(report.failures, 1);
        assert_eq!(report.xi.distribution.total(), 0);
    }
}
