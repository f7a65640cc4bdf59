//! Candidate-to-lesion matching by overlap.

use serde::{Deserialize, Serialize};

use super::candidates::Candidate;

pub const DICE_THRESHOLD: f64 = 0.1;

/// Dice overlap of two sorted voxel lists.
pub fn dice(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    2.0 * inter as f64 / (a.len() + b.len()) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateMatch {
    pub confidence: f64,
    /// Index of the matched ground-truth lesion; `None` is a false positive.
    pub lesion: Option<usize>,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matches {
    pub candidates: Vec<CandidateMatch>,
    pub lesion_matched: Vec<bool>,
}

impl Matches {
    pub fn true_positives(&self) -> usize {
        self.candidates.iter().filter(|c| c.lesion.is_some()).count()
    }
}

/// Greedy matching in descending confidence: each candidate takes the
/// unmatched lesion it overlaps best if that dice is at least `threshold`.
/// Equal dice goes to the lower lesion index.
pub fn match_lesions(cands: &[Candidate], lesions: &[Vec<usize>], threshold: f64) -> Matches {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| cands[b].confidence.total_cmp(&cands[a].confidence).then(a.cmp(&b)));
    let mut lesion_matched = vec![false; lesions.len()];
    let mut candidates = Vec::with_capacity(cands.len());
    for i in order {
        let best = lesions
            .iter()
            .enumerate()
            .filter(|(g, _)| !lesion_matched[*g])
            .map(|(g, l)| (g, dice(&cands[i].voxels, l)))
            .fold(None::<(usize, f64)>, |acc, (g, d)| match acc {
                Some((_, bd)) if bd >= d => acc,
                _ => Some((g, d)),
            });
        let (lesion, d) = match best {
            Some((g, d)) if d >= threshold => {
                lesion_matched[g] = true;
                (Some(g), d)
            }
            Some((_, d)) => (None, d),
            None => (None, 0.0),
        };
        candidates.push(CandidateMatch { confidence: cands[i].confidence, lesion, dice: d });
    }
    Matches { candidates, lesion_matched }
}
