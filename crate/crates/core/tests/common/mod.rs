//! Independent reference implementations shared by the test binaries.
#![allow(dead_code)]

use cswin::attention::CSwinBlock;
use cswin::{Array64, ParamStore64, Tensor64};

/// Reference multi-head attention over the whole grid with the block's
/// grouped parameters, written with explicit loops.
pub fn full_window_reference(store: &ParamStore64, x: &Array64, dim: usize, heads: usize) -> Vec<f64> {
    let [n, h, w, d, c] = x.shape().try_into().unwrap();
    assert_eq!(c, dim);
    let tokens = h * w * d;
    let (cg, hg) = (dim / 3, heads / 3);
    let dk = cg / hg;
    let p = |name: &str| store.by_name(&format!("blk.{name}")).unwrap().clone();
    let (wqkv, bqkv, wo, bo) = (p("qkv.weight"), p("qkv.bias"), p("proj.weight"), p("proj.bias"));
    let coord = |t: usize| [t / (w * d), (t / d) % w, t % d];
    let mut out = vec![0.0; n * tokens * dim];
    for b in 0..n {
        let xt = |t: usize, ch: usize| x.data()[(b * tokens + t) * c + ch];
        let proj = |t: usize, col: usize| -> f64 { bqkv.data()[col] + (0..c).map(|i| xt(t, i) * wqkv.at(&[i, col])).sum::<f64>() };
        let mut concat = vec![0.0; tokens * dim];
        for (g, name) in ["h", "v", "l"].iter().enumerate() {
            let table = p(&format!("attn_{name}.rel_bias"));
            let log_tau = p(&format!("attn_{name}.log_tau"));
            for head in 0..hg {
                let tau = log_tau.data()[head].exp().max(0.01);
                let base = g * 3 * cg + head * dk;
                let q: Vec<Vec<f64>> = (0..tokens).map(|t| (0..dk).map(|e| proj(t, base + e)).collect()).collect();
                let k: Vec<Vec<f64>> = (0..tokens).map(|t| (0..dk).map(|e| proj(t, base + cg + e)).collect()).collect();
                let v: Vec<Vec<f64>> = (0..tokens).map(|t| (0..dk).map(|e| proj(t, base + 2 * cg + e)).collect()).collect();
                for i in 0..tokens {
                    let ci = coord(i);
                    let logits: Vec<f64> = (0..tokens)
                        .map(|j| {
                            let cj = coord(j);
                            let off = ((ci[0] + h - 1 - cj[0]) * (2 * w - 1) + ci[1] + w - 1 - cj[1]) * (2 * d - 1)
                                + ci[2]
                                + d
                                - 1
                                - cj[2];
                            let dot: f64 = q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum();
                            let nq = q[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                            let nk = k[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                            dot / (nq * nk) / tau + table.at(&[head, off])
                        })
                        .collect();
                    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                    for e in 0..dk {
                        concat[i * dim + g * cg + head * dk + e] =
                            (0..tokens).map(|j| (logits[j] - m).exp() / z * v[j][e]).sum();
                    }
                }
            }
        }
        for t in 0..tokens {
            for o in 0..dim {
                out[(b * tokens + t) * dim + o] =
                    bo.data()[o] + (0..dim).map(|i| concat[t * dim + i] * wo.at(&[i, o])).sum::<f64>();
            }
        }
    }
    out
}


/// Dependency matrix `dep[o][i]`: whether perturbing input token `i` moves
/// output token `o`, by finite differences over every token.
pub fn dependency(block: &CSwinBlock, store: &ParamStore64, x: &Array64) -> Vec<Vec<bool>> {
    let p = store.bind_frozen();
    let base = block.attention(&p, &Tensor64::constant(x.clone())).unwrap();
    let c = x.shape()[4];
    let tokens = x.len() / c;
    let mut dep = vec![vec![false; tokens]; tokens];
    for i in 0..tokens {
        let mut xp = x.clone();
        for ch in 0..c {
            xp.data_mut()[i * c + ch] += 1e-3;
        }
        let out = block.attention(&p, &Tensor64::constant(xp)).unwrap();
        for (o, row) in dep.iter_mut().enumerate() {
            row[i] = (0..c).any(|ch| out.data()[o * c + ch] != base.data()[o * c + ch]);
        }
    }
    dep
}


pub const DIMS: [usize; 3] = [16, 16, 16];

pub fn coords(i: usize, [_, w, d]: [usize; 3]) -> [f64; 3] {
    [(i / (w * d)) as f64, ((i / d) % w) as f64, (i % d) as f64]
}

pub fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Gaussian bump with exactly `peak` at `center` (a voxel), zero beyond `cutoff`.
pub fn blob(map: &mut [f32], center: [f64; 3], peak: f32, sigma: f64, cutoff: f64) {
    for (i, v) in map.iter_mut().enumerate() {
        let r2 = dist2(coords(i, DIMS), center);
        if r2 <= cutoff * cutoff {
            *v = (peak as f64 * (-r2 / (2.0 * sigma * sigma)).exp()) as f32;
        }
    }
}

pub fn at_least(map: &[f32], cut: f64, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    (0..map.len()).filter(|&i| keep(i) && map[i] as f64 >= cut).collect()
}


pub fn pair_count_auroc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for i in 0..labels.len() {
        if labels[i] {
            p += 1;
        } else {
            n += 1;
        }
    }
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] && !labels[j] {
                twice += if scores[i] > scores[j] { 2 } else if scores[i] == scores[j] { 1 } else { 0 };
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}


/// Average precision by enumerating every distinct threshold and counting
/// directly which detections clear it.
pub fn enumerated_ap(dets: &[(f64, bool)], lesions: usize) -> f64 {
    let mut thresholds: Vec<f64> = dets.iter().map(|d| d.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for t in thresholds {
        let kept = dets.iter().filter(|d| d.0 >= t).count();
        let tp = dets.iter().filter(|d| d.0 >= t && d.1).count();
        let recall = tp as f64 / lesions as f64;
        ap += (recall - prev) * (tp as f64 / kept as f64);
        prev = recall;
    }
    ap
}


pub fn enumerated_wilcoxon(deltas: &[f64]) -> f64 {
    let nz: Vec<f64> = deltas.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    let rank = |i: usize| {
        let a = nz[i].abs();
        let less = nz.iter().filter(|d| d.abs() < a).count() as f64;
        let equal = nz.iter().filter(|d| d.abs() == a).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = (0..n).map(rank).collect();
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let observed: f64 = (0..n).filter(|&i| nz[i] > 0.0).map(|i| ranks[i]).sum();
    let extreme = (0u32..1 << n)
        .filter(|signs| {
            let w: f64 = (0..n).filter(|&i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
            (w - mean).abs() >= (observed - mean).abs()
        })
        .count();
    extreme as f64 / (1u64 << n) as f64
}
