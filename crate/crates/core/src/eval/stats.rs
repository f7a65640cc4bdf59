//! Paired significance testing with multiple-comparison control.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest sample size evaluated with the exact null distribution.
pub const EXACT_MAX_N: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Ranks of `|d|` with midranks for ties, doubled so they stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        for &o in &order[i..=j] {
            ranks[o] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped; exact
/// null distribution for up to [`EXACT_MAX_N`] nonzero differences, normal
/// approximation with tie-corrected variance beyond.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Result<Wilcoxon> {
    let nz: Vec<f64> = deltas.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::invalid("wilcoxon: all differences are zero"));
    }
    if nz.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("wilcoxon: non-finite difference"));
    }
    let n = nz.len();
    if n < 5 {
        return Err(Error::invalid(format!("wilcoxon needs at least 5 nonzero differences, got {n}")));
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total2: u64 = ranks.iter().sum();
    let w_plus = w2 as f64 / 2.0;

    if n <= EXACT_MAX_N {
        // counts[s]: sign assignments whose doubled positive-rank sum is s.
        let mut counts = vec![0u64; total2 as usize + 1];
        counts[0] = 1;
        for &r in &ranks {
            for s in (r as usize..counts.len()).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let lower: u64 = counts[..=w2 as usize].iter().sum();
        let upper: u64 = counts[w2 as usize..].iter().sum();
        let tail = 2 * lower.min(upper);
        let p_value = (tail as f64 / (1u64 << n) as f64).min(1.0);
        return Ok(Wilcoxon { w_plus, n, p_value, exact: true });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = (w_plus - mean) / var.sqrt();
    let p_value = erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    Ok(Wilcoxon { w_plus, n, p_value, exact: false })
}

/// Holm's step-down procedure: with p-values sorted ascending, reject while
/// `p_(i) ≤ α / (m − i + 1)` and stop at the first failure. Flags are
/// returned in input order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut reject = vec![false; m];
    for (i, &o) in order.iter().enumerate() {
        if p_values[o] <= alpha / (m - i) as f64 {
            reject[o] = true;
        } else {
            break;
        }
    }
    reject
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_positive_differences() {
        let w = wilcoxon_signed_rank(&[0.3, 1.2, 0.5, 2.0, 0.9, 0.1]).unwrap();
        assert!(w.exact);
        assert_eq!(w.p_value, 0.03125);
        assert_eq!(w.w_plus, 21.0);
    }

    #[test]
    fn symmetric_differences_give_p_one() {
        let w = wilcoxon_signed_rank(&[1.0, -1.0, 2.0, -2.0, 3.0, -3.0]).unwrap();
        assert_eq!(w.p_value, 1.0);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(wilcoxon_signed_rank(&[0.0; 8]).is_err());
        assert!(wilcoxon_signed_rank(&[1.0, 2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn holm_examples() {
        assert_eq!(holm_bonferroni(&[0.004], 0.005), vec![true]);
        assert_eq!(holm_bonferroni(&[0.001, 0.0026, 0.03], 0.005), vec![true, false, false]);
        assert_eq!(holm_bonferroni(&[1.0, 1.0], 0.005), vec![false, false]);
    }
}
