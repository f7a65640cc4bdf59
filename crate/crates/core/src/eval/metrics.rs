//! Patient-level ROC and lesion-level precision-recall summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Max candidate confidence, 0 without candidates.
pub fn patient_score(confidences: &[f64]) -> f64 {
    confidences.iter().copied().fold(0.0, f64::max)
}

/// Area under the ROC curve as the Mann-Whitney statistic:
/// P(score⁺ > score⁻) + ½·P(tie), computed from midranks.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::invalid("auroc: labels and scores differ in length"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("auroc needs both positive and negative cases"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, kept integral.
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the midrank (i + j + 2) / 2.
        let k = order[i..=j].iter().filter(|&&o| labels[o]).count() as u64;
        rank2_pos += k * (i + j + 2) as u64;
        i = j + 1;
    }
    let p = pos as u64;
    let u2 = rank2_pos - p * (p + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// `None` for the origin, where nothing is called positive.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC operating points at each distinct score, from (0, 0) to (1, 1).
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<RocPoint>> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 || labels.len() != scores.len() {
        return Err(Error::invalid("roc curve needs matching inputs with both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: None, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &o) in order.iter().enumerate() {
        if labels[o] {
            tp += 1;
        } else {
            fp += 1;
        }
        if k + 1 == order.len() || scores[order[k + 1]] != scores[o] {
            points.push(RocPoint { threshold: Some(scores[o]), fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64 });
        }
    }
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at each distinct confidence, in descending order.
/// `detections` are `(confidence, is_true_positive)` pooled over cases;
/// `lesions` counts all ground-truth lesions, so misses cap the recall.
pub fn pr_curve(detections: &[(f64, bool)], lesions: usize) -> Result<Vec<PrPoint>> {
    if lesions == 0 {
        return Err(Error::invalid("precision-recall needs at least one ground-truth lesion"));
    }
    let mut sorted = detections.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (k, &(c, hit)) in sorted.iter().enumerate() {
        tp += hit as usize;
        if k + 1 == sorted.len() || sorted[k + 1].0 != c {
            points.push(PrPoint {
                threshold: c,
                precision: tp as f64 / (k + 1) as f64,
                recall: tp as f64 / lesions as f64,
            });
        }
    }
    Ok(points)
}

/// Step-integrated area under the precision-recall curve:
/// Σ (R_k − R_{k−1})·P_k with R_0 = 0.
pub fn average_precision(detections: &[(f64, bool)], lesions: usize) -> Result<f64> {
    let curve = pr_curve(detections, lesions)?;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in &curve {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Ok(ap)
}
