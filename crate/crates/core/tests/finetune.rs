//! Dice-focal objective against loop oracles, end-to-end gradients through
//! the network, and small training runs.

use cswin::finetune::{soft_dice, DiceFocal, DICE_SMOOTH};
use cswin::gradcheck::{directional_check, grad_check, GradCheckConfig};
use cswin::unet::{CSwinUNet, UNetConfig};
use cswin::{rng, Array32, Array64, Tensor64};
use rand::Rng;

fn random_logits(shape: &[usize], seed: u64) -> Array64 {
    let mut r = rng::rng(seed);
    Array64::from_fn(shape, |_| r.random_range(-2.0..2.0))
}

fn random_target(shape: &[usize], seed: u64, p: f64) -> Array32 {
    let mut r = rng::rng(seed);
    Array32::from_fn(shape, |_| if r.random_bool(p) { 1.0 } else { 0.0 })
}

/// Direct loop evaluation of λ·GDL + (1−λ)·focal for two classes.
fn loop_oracle(logits: &Array64, target: &Array32, lambda: f64, gamma: f64) -> f64 {
    let s = logits.shape();
    let (n, vox) = (s[0], s[2..].iter().product::<usize>());
    let mut vol = [0.0f64; 2];
    let mut probs = vec![[0.0f64; 2]; n * vox];
    let mut labels = vec![0usize; n * vox];
    for b in 0..n {
        for v in 0..vox {
            let z = [logits.data()[(2 * b) * vox + v], logits.data()[(2 * b + 1) * vox + v]];
            let m = z[0].max(z[1]);
            let e = [(z[0] - m).exp(), (z[1] - m).exp()];
            probs[b * vox + v] = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
            let c = target.data()[b * vox + v] as usize;
            labels[b * vox + v] = c;
            vol[c] += 1.0;
        }
    }
    let mut w = [0.0; 2];
    for c in 0..2 {
        w[c] = if vol[c] > 0.0 { 1.0 / (vol[c] * vol[c]) } else { f64::INFINITY };
    }
    let finite_max = w.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max);
    for c in 0..2 {
        if !w[c].is_finite() {
            w[c] = finite_max;
        }
    }
    let total = w[0] + w[1];
    let (mut num, mut den) = (0.0, 0.0);
    for c in 0..2 {
        let mut inter = 0.0;
        let mut sum = 0.0;
        for i in 0..n * vox {
            let t = if labels[i] == c { 1.0 } else { 0.0 };
            inter += probs[i][c] * t;
            sum += probs[i][c] + t;
        }
        num += w[c] / total * inter;
        den += w[c] / total * sum;
    }
    let gdl = 1.0 - (2.0 * num + DICE_SMOOTH) / (den + DICE_SMOOTH);
    let mut focal = 0.0;
    for i in 0..n * vox {
        let p = probs[i][labels[i]];
        focal += -(1.0 - p).powf(gamma) * p.ln();
    }
    focal /= (n * vox) as f64;
    lambda * gdl + (1.0 - lambda) * focal
}

#[test]
fn matches_loop_oracle() {
    for (seed, lambda, gamma, p) in [(1, 0.5, 2.0, 0.2), (2, 0.3, 0.5, 0.05), (3, 1.0, 2.0, 0.5), (4, 0.7, 1.5, 0.0)] {
        let logits = random_logits(&[2, 2, 3, 4, 2], seed);
        let target = random_target(&[2, 3, 4, 2], seed + 10, p);
        let loss = DiceFocal { lambda, gamma }.from_logits(&Tensor64::constant(logits.clone()), &target).unwrap();
        let want = loop_oracle(&logits, &target, lambda, gamma);
        assert!((loss.item() - want).abs() < 1e-5, "seed {seed}: {} vs {want}", loss.item());
    }
}

#[test]
fn perfect_prediction_has_near_zero_loss() {
    let target = random_target(&[2, 4, 4, 2], 5, 0.3);
    let probs = Array64::from_fn(&[2, 2, 4, 4, 2], |i| {
        let (b, c, v) = (i / 64, (i / 32) % 2, i % 32);
        let t = target.data()[b * 32 + v] as usize;
        if t == c { 1.0 } else { 0.0 }
    });
    let loss = DiceFocal::default().from_probs(&Tensor64::constant(probs.clone()), &target).unwrap();
    assert!(loss.item().abs() < 1e-3, "{}", loss.item());
    assert!(loss.item() >= 0.0);
    assert_eq!(soft_dice(&probs.cast(), &target), Some(1.0));
}

#[test]
fn gamma_zero_lambda_zero_is_cross_entropy() {
    let logits = random_logits(&[2, 2, 3, 3, 1], 8);
    let target = random_target(&[2, 3, 3, 1], 9, 0.4);
    let t = Tensor64::constant(logits.clone());
    let loss = DiceFocal { lambda: 0.0, gamma: 0.0 }.from_logits(&t, &target).unwrap();
    // Same data as (voxels, classes) rows for the classification loss.
    let rows = t.reshape(&[2, 2, 9]).unwrap().permute(&[0, 2, 1]).unwrap().reshape(&[18, 2]).unwrap();
    let labels: Vec<usize> = target.data().iter().map(|&v| v as usize).collect();
    let ce = rows.cross_entropy(&labels).unwrap();
    assert!((loss.item() - ce.item()).abs() < 1e-6);
}

#[test]
fn empty_foreground_is_finite() {
    let logits = random_logits(&[1, 2, 4, 4, 2], 3);
    let target = Array32::zeros(&[1, 4, 4, 2]);
    let t = Tensor64::param(logits);
    let loss = DiceFocal::default().from_logits(&t, &target).unwrap();
    assert!(loss.item().is_finite() && loss.item() > 0.0);
    loss.backward().unwrap();
    assert!(t.grad().unwrap().all_finite());
}

#[test]
fn invalid_settings_are_rejected() {
    assert!(DiceFocal { lambda: 1.5, gamma: 2.0 }.validate().is_err());
    assert!(DiceFocal { lambda: 0.5, gamma: -1.0 }.validate().is_err());
    let logits = Tensor64::constant(random_logits(&[1, 2, 2, 2, 2], 1));
    assert!(DiceFocal::default().from_logits(&logits, &Array32::full(&[1, 2, 2, 2], 0.5)).is_err());
}

#[test]
fn loss_gradients_match_finite_differences() {
    let target = random_target(&[2, 3, 2, 2], 21, 0.3);
    for (lambda, gamma) in [(0.5, 2.0), (0.0, 0.0), (1.0, 2.0), (0.4, 0.5)] {
        let mut store = cswin::ParamStore64::new(0);
        let id = store.insert("logits", random_logits(&[2, 2, 3, 2, 2], 22)).unwrap();
        let loss = DiceFocal { lambda, gamma };
        let report = grad_check(&mut store, |p| loss.from_logits(p.get(id), &target), &GradCheckConfig::default())
            .unwrap();
        assert!(report.passes(1e-6), "{:?}", report.worst());
    }
}

#[test]
fn end_to_end_gradient_on_a_32_cube() {
    let cfg = UNetConfig {
        feature_size: 3,
        depths: [1, 1, 1, 1],
        heads: [3, 3, 3, 3],
        input_shape: [32, 32, 32],
        mlp_ratio: 2,
        ..UNetConfig::default()
    };
    let (mut store, model) = CSwinUNet::build::<f64>(&cfg, 4).unwrap();
    let mut r = rng::rng(6);
    let x = Tensor64::constant(Array64::from_fn(&[1, 3, 32, 32, 32], |_| r.random_range(-1.0..1.0)));
    let target = random_target(&[1, 32, 32, 32], 7, 0.1);
    let loss = DiceFocal::default();
    let report = directional_check(
        &mut store,
        |p| loss.from_logits(&model.logits(p, &x)?, &target),
        // A whole-tensor direction moves many LeakyReLU inputs at once, so
        // a small step keeps kink crossings out of the difference quotient.
        &GradCheckConfig { eps: 1e-7, ..GradCheckConfig::default() },
    )
    .unwrap();
    assert!(report.passes(1e-3), "{:?}", report.worst());
}
