//! Benchmark evaluation: gIoU (mean of per-sample IoUs) and cIoU (cumulative
//! intersection over cumulative union) with per-category and per-split
//! breakdowns.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::manifest::{DatasetManifest, ReasoningKind, Split};
use crate::maskops::{rle_iou, IouResult, MaskError, RleMask};
use crate::predict::{compose_query, select_mask, MaskPredictor};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty evaluation: no samples")]
    EmptyEvaluation,
    #[error("record {0:?} is not in the val split")]
    NotValidationSplit(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// One evaluation unit: ground truth against prediction for a record.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub record_id: String,
    pub gt: RleMask,
    pub pred: RleMask,
    pub category: String,
    pub split_descriptor: String,
}

impl EvalSample {
    fn iou(&self) -> Result<IouResult, MaskError> {
        rle_iou(&self.gt, &self.pred)
    }
}

/// Mean of per-sample IoU values (both-empty samples score 1.0).
pub fn compute_giou(samples: &[EvalSample]) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let mut sum = 0.0;
    for s in samples {
        sum += s.iou()?.iou;
    }
    Ok(sum / samples.len() as f64)
}

/// Cumulative intersection over cumulative union; 1.0 when the total union
/// is zero.
pub fn compute_ciou(samples: &[EvalSample]) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for s in samples {
        let r = s.iou()?;
        inter += r.intersection;
        union += r.union;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricPair {
    pub giou: f64,
    pub ciou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CategoryMetrics {
    pub giou: f64,
    pub ciou: f64,
    pub count: usize,
}

/// Evaluation report, emitted as JSON and as an aligned text table.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub overall: MetricPair,
    #[serde(rename = "perCategory")]
    pub per_category: BTreeMap<String, CategoryMetrics>,
    #[serde(rename = "perSplit")]
    pub per_split: BTreeMap<String, MetricPair>,
    pub samples: usize,
    pub failures: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table: one row per split descriptor and per category.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .per_category
            .keys()
            .chain(self.per_split.keys())
            .map(|k| k.len())
            .chain(["overall".len()])
            .max()
            .unwrap_or(8)
            .max(8);
        let _ = writeln!(out, "{:<name_w$}  {:>7}  {:>7}  {:>7}", "set", "gIoU", "cIoU", "count");
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>7.4}  {:>7.4}  {:>7}",
            "overall", self.overall.giou, self.overall.ciou, self.samples
        );
        for (k, v) in &self.per_split {
            let _ = writeln!(out, "{k:<name_w$}  {:>7.4}  {:>7.4}  {:>7}", v.giou, v.ciou, "");
        }
        for (k, v) in &self.per_category {
            let _ = writeln!(
                out,
                "{k:<name_w$}  {:>7.4}  {:>7.4}  {:>7}",
                v.giou, v.ciou, v.count
            );
        }
        out
    }
}

fn split_descriptor(zero_shot_category: bool, zero_shot_domain: bool, kind: ReasoningKind) -> String {
    let kind = match kind {
        ReasoningKind::None => "none",
        ReasoningKind::Template => "template",
        ReasoningKind::Easy => "easy",
        ReasoningKind::Hard => "hard",
    };
    format!("zsCat={zero_shot_category},zsDom={zero_shot_domain},reasoning={kind}")
}

fn aggregate(samples: &[EvalSample], failures: Vec<String>) -> Result<EvalReport, MetricsError> {
    let overall = MetricPair {
        giou: compute_giou(samples)?,
        ciou: compute_ciou(samples)?,
    };
    let mut by_category: BTreeMap<String, Vec<&EvalSample>> = BTreeMap::new();
    let mut by_split: BTreeMap<String, Vec<&EvalSample>> = BTreeMap::new();
    for s in samples {
        by_category.entry(s.category.clone()).or_default().push(s);
        by_split
            .entry(s.split_descriptor.clone())
            .or_default()
            .push(s);
    }
    let subset = |group: &[&EvalSample]| -> Result<MetricPair, MetricsError> {
        let owned: Vec<EvalSample> = group.iter().map(|s| (*s).clone()).collect();
        Ok(MetricPair {
            giou: compute_giou(&owned)?,
            ciou: compute_ciou(&owned)?,
        })
    };
    let mut per_category = BTreeMap::new();
    for (k, group) in &by_category {
        let pair = subset(group)?;
        per_category.insert(
            k.clone(),
            CategoryMetrics {
                giou: pair.giou,
                ciou: pair.ciou,
                count: group.len(),
            },
        );
    }
    let mut per_split = BTreeMap::new();
    for (k, group) in &by_split {
        per_split.insert(k.clone(), subset(group)?);
    }
    Ok(EvalReport {
        overall,
        per_category,
        per_split,
        samples: samples.len(),
        failures,
    })
}

/// Runs the predictor over every (val-split) record and aggregates. Predictor
/// failures and responses with no mask token score IoU 0 against the ground
/// truth and stay in the sample count. Record-level work runs in parallel
/// when the predictor declares itself concurrent; aggregation is a
/// deterministic order-independent reduction either way.
pub fn evaluate_benchmark(
    m: &DatasetManifest,
    predictor: &dyn MaskPredictor,
) -> Result<EvalReport, MetricsError> {
    if m.records.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    if let Some(bad) = m.records.iter().find(|r| r.split != Split::Val) {
        return Err(MetricsError::NotValidationSplit(bad.id.clone()));
    }

    let predict_one = |record: &crate::manifest::AffordanceRecord| {
        let query = compose_query(record);
        let pred = predictor
            .predict(&query)
            .and_then(|resp| select_mask(&resp).cloned());
        let (pred_mask, failure) = match pred {
            Ok(mask) if mask.size == record.mask.size => (mask, None),
            Ok(mask) => (
                RleMask::empty(record.mask.height(), record.mask.width()),
                Some(format!(
                    "{}: predicted mask size {:?} != gt size {:?}",
                    record.id, mask.size, record.mask.size
                )),
            ),
            Err(e) => (
                RleMask::empty(record.mask.height(), record.mask.width()),
                Some(format!("{}: {e}", record.id)),
            ),
        };
        let sample = EvalSample {
            record_id: record.id.clone(),
            gt: record.mask.clone(),
            pred: pred_mask,
            category: record.category.clone(),
            split_descriptor: split_descriptor(
                record.zero_shot_category,
                record.zero_shot_domain,
                record.reasoning_kind,
            ),
        };
        (sample, failure)
    };

    let results: Vec<(EvalSample, Option<String>)> = if predictor.concurrent() {
        m.records.par_iter().map(predict_one).collect()
    } else {
        m.records.iter().map(predict_one).collect()
    };

    let mut samples = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (sample, failure) in results {
        samples.push(sample);
        failures.extend(failure);
    }
    // no failure is ever dropped: a failed sample stays in `samples` with an
    // empty prediction, which scores IoU 0 against a nonempty gt
    aggregate(&samples, failures)
}
