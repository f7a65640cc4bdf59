//! Encoder resolution ladder, decoder outputs, parameter accounting, skip
//! wiring and checkpoint round trips.

use cswin::unet::{CSwinUNet, Checkpoint, SkipMask, UNetConfig};
use cswin::{rng, Array32, Array64, ParamStore32, Tensor32, Tensor64};
use rand::Rng;

fn tiny(input_shape: [usize; 3]) -> UNetConfig {
    UNetConfig {
        feature_size: 6,
        depths: [1, 1, 1, 1],
        heads: [3, 3, 3, 3],
        input_shape,
        mlp_ratio: 2,
        ..UNetConfig::default()
    }
}

fn input64(cfg: &UNetConfig, n: usize, seed: u64) -> Tensor64 {
    let mut r = rng::rng(seed);
    let [h, w, d] = cfg.input_shape;
    Tensor64::constant(Array64::from_fn(&[n, cfg.in_channels, h, w, d], |_| r.random_range(-1.0..1.0)))
}

#[test]
fn default_encoder_ladder() {
    let cfg = UNetConfig::default();
    let mut store = ParamStore32::new(0);
    let model = CSwinUNet::new(&mut store, &cfg).unwrap();
    let mut r = rng::rng(1);
    let x = Tensor32::constant(Array32::from_fn(&[1, 3, 160, 160, 32], |_| r.random_range(-1.0..1.0)));
    let feats = model.encode(&store.bind_frozen(), &x).unwrap();
    let shapes: Vec<&[usize]> = feats.stages.iter().map(|t| t.shape()).collect();
    assert_eq!(
        shapes,
        [&[1, 48, 40, 40, 8][..], &[1, 96, 20, 20, 4], &[1, 192, 10, 10, 2], &[1, 384, 5, 5, 1]]
    );
    assert_eq!(feats.embed.shape(), &[1, 48, 80, 80, 16]);
}

#[test]
fn cube_input_reaches_one_voxel() {
    let cfg = tiny([32, 32, 32]);
    let (store, model) = CSwinUNet::build::<f64>(&cfg, 2).unwrap();
    let feats = model.encode(&store.bind_frozen(), &input64(&cfg, 1, 3)).unwrap();
    let extents: Vec<usize> = feats.stages.iter().map(|t| t.shape()[2]).collect();
    assert_eq!(extents, [8, 4, 2, 1]);
    for t in &feats.stages {
        assert_eq!(t.shape()[2..], [t.shape()[2]; 3]);
    }
}

#[test]
fn indivisible_input_is_rejected() {
    let cfg = tiny([32, 48, 32]);
    let err = CSwinUNet::build::<f32>(&cfg, 0).unwrap_err();
    assert!(err.to_string().contains("multiples of [32, 32, 32]"), "{err}");
}

/// Closed-form parameter count from the declared layer shapes.
fn analytic_count(cfg: &UNetConfig) -> usize {
    let f = cfg.feature_size;
    let conv = |cin: usize, cout: usize, kvol: usize, bias: bool| cin * cout * kvol + if bias { cout } else { 0 };
    let res = |cin: usize, cout: usize| conv(cin, cout, 27, false) + conv(cout, cout, 27, false) + if cin != cout { cin * cout } else { 0 };
    let extents = cfg.extents();
    let strides = cfg.strides();
    let mut total = conv(cfg.in_channels, f, 343, true);
    for i in 0..4 {
        let c = f << i;
        let cin = if i == 0 { f } else { c / 2 };
        total += conv(cin, c, 27, true) + 2 * c;
        let grid = extents[i + 2];
        let hg = cfg.heads[i] / 3;
        let mut block = 2 * c + (3 * c * c + 3 * c) + (c * c + c) + 2 * c;
        let r = cfg.mlp_ratio * c;
        block += c * r + r + r * c + c;
        for axis in 0..3 {
            let mut win = grid;
            win[axis] = win[axis].min(cfg.stripe_widths[i]);
            let table: usize = win.iter().map(|e| 2 * e - 1).product();
            block += hg * table + if cfg.use_cosine { hg } else { 0 };
        }
        total += cfg.depths[i] * block;
    }
    let widths = [f, f, f, 2 * f, 4 * f, 8 * f];
    let inputs = [cfg.in_channels, f, f, 2 * f, 4 * f];
    for l in 0..5 {
        total += res(inputs[l], widths[l]);
        let kvol: usize = strides[l].iter().product();
        total += widths[l + 1] * widths[l] * kvol + res(2 * widths[l], widths[l]);
    }
    total += res(8 * f, 8 * f);
    total + conv(f, 2, 1, true)
}

#[test]
fn parameter_count_matches_layer_shapes() {
    for cfg in [tiny([32, 32, 32]), UNetConfig::desk(), UNetConfig { use_cosine: false, ..UNetConfig::default() }] {
        let mut store = ParamStore32::new(0);
        CSwinUNet::new(&mut store, &cfg).unwrap();
        assert_eq!(store.num_elements(), analytic_count(&cfg), "{cfg:?}");
    }
}

#[test]
fn probabilities_are_normalized_and_shaped_like_the_input() {
    for cfg in [tiny([32, 32, 32]), UNetConfig { depth_strides: Some([2, 2, 1, 1, 1]), ..tiny([32, 64, 4]) }] {
        let (store, model) = CSwinUNet::build::<f64>(&cfg, 4).unwrap();
        let x = input64(&cfg, 2, 5);
        let probs = model.forward(&store.bind_frozen(), &x).unwrap();
        let [h, w, d] = cfg.input_shape;
        assert_eq!(probs.shape(), &[2, 2, h, w, d]);
        let vox = h * w * d;
        for b in 0..2 {
            for v in 0..vox {
                let (p0, p1) = (probs.data()[2 * b * vox + v], probs.data()[(2 * b + 1) * vox + v]);
                assert!((p0 + p1 - 1.0).abs() < 1e-6);
                assert!(p1.is_finite() && (0.0..=1.0).contains(&p1));
            }
        }
        let map = model.detection_map(&store.bind_frozen(), &x).unwrap();
        assert_eq!(map.shape(), &[2, h, w, d]);
    }
}

#[test]
fn forward_and_gradients_are_bit_reproducible() {
    let cfg = UNetConfig::desk();
    let run = || {
        let (store, model) = CSwinUNet::build::<f32>(&cfg, 11).unwrap();
        let mut r = rng::rng(12);
        let [h, w, d] = cfg.input_shape;
        let x = Tensor32::constant(Array32::from_fn(&[1, 3, h, w, d], |_| r.random_range(-1.0..1.0)));
        let p = store.bind();
        let y = model.forward(&p, &x).unwrap();
        y.narrow(1, 1, 1).unwrap().mean().unwrap().backward().unwrap();
        (y.value().clone(), p.grads())
    };
    let (y1, g1) = run();
    let (y2, g2) = run();
    assert_eq!(y1, y2);
    assert_eq!(g1, g2);
    assert!(g1.iter().all(Option::is_some), "every parameter takes part in the forward pass");
}

#[test]
fn every_skip_connection_is_live() {
    let cfg = UNetConfig::desk();
    let (store, model) = CSwinUNet::build::<f32>(&cfg, 21).unwrap();
    let mut r = rng::rng(22);
    let [h, w, d] = cfg.input_shape;
    let x = Tensor32::constant(Array32::from_fn(&[1, 3, h, w, d], |_| r.random_range(-1.0..1.0)));
    let p = store.bind_frozen();
    let feats = model.encode(&p, &x).unwrap();
    let base = model.decode(&p, &x, &feats, SkipMask::default()).unwrap();
    for level in 0..6 {
        let mut mask = SkipMask::default();
        mask.0[level] = true;
        let out = model.decode(&p, &x, &feats, mask).unwrap();
        assert!(out.value().max_abs_diff(base.value()) > 1e-4, "level {level} has no effect");
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let cfg = tiny([32, 32, 32]);
    let (store, _) = CSwinUNet::build::<f32>(&cfg, 31).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ckpt = Checkpoint::from_store("unet", &cfg, &store).unwrap();
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.config_as::<UNetConfig>().unwrap(), cfg);
    let again = dir.path().join("again.ckpt");
    loaded.save(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let (mut fresh, _) = CSwinUNet::build::<f32>(&cfg, 99).unwrap();
    loaded.restore(&mut fresh).unwrap();
    for ((n1, a), (n2, b)) in store.iter().zip(fresh.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(a, b);
    }
}

#[test]
fn mismatched_architecture_names_the_layers() {
    let (store, _) = CSwinUNet::build::<f32>(&tiny([32, 32, 32]), 1).unwrap();
    let ckpt = Checkpoint::from_store("unet", &tiny([32, 32, 32]), &store).unwrap();
    let other = UNetConfig { depths: [1, 2, 1, 1], ..tiny([32, 32, 32]) };
    let (mut target, _) = CSwinUNet::build::<f32>(&other, 1).unwrap();
    let err = ckpt.restore_prefix(&mut target, "encoder.").unwrap_err();
    match err {
        cswin::Error::ArchitectureMismatch(names) => {
            assert!(!names.is_empty());
            assert!(names.iter().all(|n| n.starts_with("encoder.stage2.block1.")), "{names:?}");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (store, _) = CSwinUNet::build::<f32>(&tiny([32, 32, 32]), 1).unwrap();
    let bytes = Checkpoint::from_store("unet", &0u8, &store).unwrap().to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2], "x").is_err());
    assert!(Checkpoint::from_bytes(b"NOTACKPT00000000000000", "x").is_err());
}
