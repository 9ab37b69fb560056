//! Structure-recovery metrics comparing an estimated graph against the
//! ground truth that generated the data.
//!
//! Every estimated edge falls into exactly one bucket: correct direction
//! (`E`), reversed (`R`), or false positive (`FP`, not in the true skeleton);
//! true edges matched by neither direction are missing (`M`). The derived
//! ratios are the true positive rate `E / s0`, the false discovery rate
//! `(R + FP) / P`, the structural Hamming distance `R + M + FP`, and the
//! Jaccard index `E / (P + s0 - E)` of the two edge sets.

use thiserror::Error;

use crate::graph::DagGraph;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("graphs have different node counts: {estimated} vs {truth}")]
    NodeCountMismatch { estimated: usize, truth: usize },
    #[error("cannot aggregate an empty list of reports")]
    EmptyInput,
}

/// Counts are reals so that averages over replicates fit the same type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    /// Estimated edge count.
    pub p: f64,
    /// Correctly directed edges.
    pub e: f64,
    /// Estimated edges whose reverse is a true edge.
    pub r: f64,
    /// True edges missing from the estimated skeleton.
    pub m: f64,
    /// Estimated edges absent from the true skeleton.
    pub fp: f64,
    pub tpr: f64,
    pub fdr: f64,
    pub shd: f64,
    pub ji: f64,
    /// True edge count.
    pub s0: f64,
}

pub const CSV_HEADER: &str = "P,E,R,M,FP,TPR,FDR,SHD,JI";

impl MetricsReport {
    /// Completes a report from the four free counts; the remaining metrics
    /// are determined by the identities. Ratios with a zero denominator are
    /// reported as 0.
    pub fn from_counts(p: f64, e: f64, r: f64, s0: f64) -> MetricsReport {
        let m = s0 - e - r;
        let fp = p - e - r;
        let tpr = if s0 > 0.0 { e / s0 } else { 0.0 };
        let fdr = if p > 0.0 { (r + fp) / p } else { 0.0 };
        let shd = r + m + fp;
        let ji_denom = p + s0 - e;
        let ji = if ji_denom > 0.0 { e / ji_denom } else { 0.0 };
        MetricsReport { p, e, r, m, fp, tpr, fdr, shd, ji, s0 }
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.p, self.e, self.r, self.m, self.fp, self.tpr, self.fdr, self.shd, self.ji
        )
    }

    fn as_array(&self) -> [f64; 10] {
        [self.p, self.e, self.r, self.m, self.fp, self.tpr, self.fdr, self.shd, self.ji, self.s0]
    }

    fn from_array(a: [f64; 10]) -> MetricsReport {
        MetricsReport {
            p: a[0],
            e: a[1],
            r: a[2],
            m: a[3],
            fp: a[4],
            tpr: a[5],
            fdr: a[6],
            shd: a[7],
            ji: a[8],
            s0: a[9],
        }
    }
}

/// Scores `estimated` against `truth`.
pub fn evaluate(estimated: &DagGraph, truth: &DagGraph) -> Result<MetricsReport, MetricsError> {
    if estimated.p() != truth.p() {
        return Err(MetricsError::NodeCountMismatch {
            estimated: estimated.p(),
            truth: truth.p(),
        });
    }
    let mut e = 0u64;
    let mut r = 0u64;
    for (j, i) in estimated.edges() {
        if truth.has_edge(j, i) {
            e += 1;
        } else if truth.has_edge(i, j) {
            r += 1;
        }
    }
    let p = estimated.edge_count() as f64;
    let s0 = truth.edge_count() as f64;
    Ok(MetricsReport::from_counts(p, e as f64, r as f64, s0))
}

/// Component-wise arithmetic mean and population variance.
pub fn aggregate(
    reports: &[MetricsReport],
) -> Result<(MetricsReport, MetricsReport), MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = reports.len() as f64;
    let mut mean = [0.0; 10];
    for rep in reports {
        for (acc, v) in mean.iter_mut().zip(rep.as_array()) {
            *acc += v / n;
        }
    }
    let mut var = [0.0; 10];
    for rep in reports {
        for ((acc, v), mu) in var.iter_mut().zip(rep.as_array()).zip(mean) {
            *acc += (v - mu) * (v - mu) / n;
        }
    }
    Ok((MetricsReport::from_array(mean), MetricsReport::from_array(var)))
}
