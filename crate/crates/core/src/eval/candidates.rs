//! Lesion candidates from a detection map.

use serde::{Deserialize, Serialize};

use super::components::{Connectivity, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    /// Candidate extent, as a fraction of its peak.
    pub rel_threshold: f64,
    /// Stop once the highest remaining value is below this.
    pub min_peak: f64,
    pub connectivity: Connectivity,
    /// After a candidate is taken, also clear the voxels reachable from it
    /// along non-increasing paths, so a blob's sub-threshold tail is not
    /// picked up again as a ring-shaped candidate.
    pub clear_tails: bool,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { rel_threshold: 0.4, min_peak: 0.05, connectivity: Connectivity::TwentySix, clear_tails: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Sorted flat voxel indices.
    pub voxels: Vec<usize>,
    pub confidence: f64,
}

/// Repeatedly takes the highest remaining value `p`, the connected region
/// of voxels `≥ rel_threshold·p` around it, and zeroes that region.
///
/// Candidates come out in non-increasing confidence order and are
/// voxel-disjoint. Ties between equal peaks go to the lower flat index.
pub fn extract_candidates(map: &[f32], dims: [usize; 3], cfg: &ExtractConfig) -> Vec<Candidate> {
    let grid = Grid::new(dims, cfg.connectivity);
    assert_eq!(map.len(), grid.len(), "detection map does not match grid");
    let value = |i: usize| map[i] as f64;
    // Values of voxels not yet cleared never change, so the next peak is the
    // next uncleared voxel in descending order.
    let mut order: Vec<usize> = (0..map.len()).filter(|&i| value(i) >= cfg.min_peak).collect();
    order.sort_by(|&a, &b| value(b).total_cmp(&value(a)).then(a.cmp(&b)));
    let mut cleared = vec![false; map.len()];
    let mut out = Vec::new();
    for &peak in &order {
        if cleared[peak] {
            continue;
        }
        let p = value(peak);
        let cut = cfg.rel_threshold * p;
        let mut voxels = grid.flood(&[peak], &mut cleared, |_, v| value(v) >= cut);
        if cfg.clear_tails {
            grid.flood(&voxels, &mut cleared, |u, v| value(v) > 0.0 && value(v) <= value(u));
        }
        voxels.sort_unstable();
        out.push(Candidate { voxels, confidence: p });
    }
    out
}
