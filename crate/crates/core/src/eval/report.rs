//! Per-case evaluation and the pooled metrics report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Array;

use super::candidates::{extract_candidates, ExtractConfig};
use super::components::Grid;
use super::matching::{match_lesions, CandidateMatch, DICE_THRESHOLD};
use super::metrics::{auroc, average_precision, patient_score, pr_curve, roc_curve, PrPoint, RocPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub extract: ExtractConfig,
    pub dice_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { extract: ExtractConfig::default(), dice_threshold: DICE_THRESHOLD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    /// Whether the case has any ground-truth lesion.
    pub label: bool,
    pub score: f64,
    pub lesions: usize,
    pub candidates: Vec<CandidateMatch>,
    pub lesion_matched: Vec<bool>,
}

fn spatial(a: &Array<f32>, what: &str) -> Result<[usize; 3]> {
    a.shape()
        .try_into()
        .map_err(|_| Error::invalid(format!("{what} must be (H, W, D), got {:?}", a.shape())))
}

/// Extracts candidates from `map` and matches them against the connected
/// components of `gt` (voxels > 0.5).
pub fn evaluate_case(id: &str, map: &Array<f32>, gt: &Array<f32>, cfg: &EvalConfig) -> Result<CaseRecord> {
    let dims = spatial(map, "detection map")?;
    if spatial(gt, "ground-truth mask")? != dims {
        return Err(Error::shape("evaluate_case", map.shape(), gt.shape()));
    }
    if map.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!("detection map for {id} has values outside [0, 1]")));
    }
    let cands = extract_candidates(map.data(), dims, &cfg.extract);
    let mask: Vec<bool> = gt.data().iter().map(|&v| v > 0.5).collect();
    let lesions = Grid::new(dims, cfg.extract.connectivity).components(&mask);
    let m = match_lesions(&cands, &lesions, cfg.dice_threshold);
    let confidences: Vec<f64> = cands.iter().map(|c| c.confidence).collect();
    Ok(CaseRecord {
        id: id.to_owned(),
        label: !lesions.is_empty(),
        score: patient_score(&confidences),
        lesions: lesions.len(),
        candidates: m.candidates,
        lesion_matched: m.lesion_matched,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` unless both positive and negative cases are present.
    pub auroc: Option<f64>,
    /// `None` when the pool has no ground-truth lesion.
    pub ap: Option<f64>,
    pub per_case: Vec<CaseRecord>,
    pub pr_curve: Vec<PrPoint>,
    pub roc_curve: Vec<RocPoint>,
}

impl Metrics {
    pub fn from_cases(per_case: Vec<CaseRecord>) -> Self {
        let labels: Vec<bool> = per_case.iter().map(|c| c.label).collect();
        let scores: Vec<f64> = per_case.iter().map(|c| c.score).collect();
        let detections: Vec<(f64, bool)> = per_case
            .iter()
            .flat_map(|c| c.candidates.iter().map(|m| (m.confidence, m.lesion.is_some())))
            .collect();
        let lesions: usize = per_case.iter().map(|c| c.lesions).sum();
        Self {
            auroc: auroc(&labels, &scores).ok(),
            ap: average_precision(&detections, lesions).ok(),
            pr_curve: pr_curve(&detections, lesions).unwrap_or_default(),
            roc_curve: roc_curve(&labels, &scores).unwrap_or_default(),
            per_case,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `roc.csv` and `pr.csv` into `dir`.
    pub fn write_curves_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut roc = String::from("threshold,fpr,tpr\n");
        for p in &self.roc_curve {
            let t = p.threshold.map(|t| t.to_string()).unwrap_or_default();
            writeln!(roc, "{t},{},{}", p.fpr, p.tpr).expect("string write");
        }
        let mut pr = String::from("threshold,precision,recall\n");
        for p in &self.pr_curve {
            writeln!(pr, "{},{},{}", p.threshold, p.precision, p.recall).expect("string write");
        }
        fs::write(dir.join("roc.csv"), roc)?;
        fs::write(dir.join("pr.csv"), pr)?;
        Ok(())
    }
}
