//! Acceptance run: one pass/fail line per criterion, written straight to
//! stdout so the lines survive test-output capture.
//!
//! The training criteria run at desk scale on synthetic phantoms and take
//! several minutes; they run in sequence inside a single test so their
//! timings are not skewed by other tests sharing the CPU.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use cswin::attention::{BlockConfig, CSwinBlock, NormPlacement};
use cswin::data::{generate, preprocess, preprocess_mask, PhantomConfig, PreprocessConfig, Sample};
use cswin::eval::{
    auroc, average_precision, evaluate_case, extract_candidates, holm_bonferroni, wilcoxon_signed_rank, EvalConfig,
    ExtractConfig, Metrics,
};
use cswin::finetune::{finetune, finetune_with, DiceFocal, FinetuneConfig, Finetuned, Init};
use cswin::gradcheck::{run_suite, SuiteConfig};
use cswin::rng;
use cswin::ssl::{awl_combine, contrastive_loss, pretrain, rotation_loss, SslConfig, Weighting};
use cswin::unet::UNetConfig;
use cswin::{Array32, Array64, ParamStore64, Tensor64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{
    at_least, blob, coords, dependency, dist2, enumerated_ap, enumerated_wilcoxon, full_window_reference,
    pair_count_auroc, DIMS,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Debug>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:?}"))
}

fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn random64(shape: &[usize], seed: u64) -> Array64 {
    let mut r = rng::rng(seed);
    Array64::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn sample(cfg: &PhantomConfig, seed: u64, i: usize) -> Sample {
    let pre = PreprocessConfig::desk();
    let p = generate(cfg, seed, i).unwrap();
    let image = preprocess(&p.volume, &pre).unwrap().volume.data;
    let m = preprocess_mask(&p.mask, &pre).unwrap();
    let [_, h, w, d] = m.shape();
    Sample { id: format!("case{i:04}"), image, mask: Some(m.data.reshaped(&[h, w, d]).unwrap()), warnings: vec![] }
}

fn corpus(n: usize, seed: u64) -> Vec<Sample> {
    (0..n).map(|i| sample(&PhantomConfig::default(), seed, i)).collect()
}

fn images(samples: &[Sample]) -> Vec<Array32> {
    samples.iter().map(|s| s.image.clone()).collect()
}

fn evaluate(model: &Finetuned, val: &[Sample]) -> Result<Metrics, String> {
    let cfg = EvalConfig::default();
    let mut cases = Vec::with_capacity(val.len());
    for s in val {
        let map = ok(model.predict(&s.image))?;
        cases.push(ok(evaluate_case(&s.id, &map, s.mask.as_ref().unwrap(), &cfg))?);
    }
    Ok(Metrics::from_cases(cases))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let entries = ok(run_suite(&SuiteConfig::default()))?;
    let seconds = start.elapsed().as_secs_f64();
    let worst = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
    ensure!(failed.is_empty(), "failed checks {failed:?}");
    ensure!(worst < 1e-4, "max relative error {worst:.2e}");
    ensure!(seconds < 300.0, "suite took {seconds:.0} s");
    Ok(format!("{} checks, max rel err {worst:.2e}, {seconds:.0} s", entries.len()))
}

fn stripe_oracle() -> Outcome {
    let block_cfg = |dim, heads, sw| BlockConfig {
        dim,
        heads,
        sw,
        grid: [4, 4, 4],
        use_cosine: true,
        mlp_ratio: 2,
        norm: NormPlacement::Pre,
    };
    let build = |cfg, seed| {
        let mut store = ParamStore64::new(seed);
        let block = CSwinBlock::new(&mut store.builder("blk"), cfg).unwrap();
        (store, block)
    };
    let mut worst = 0.0f64;
    for (sw, heads) in [(4, 3), (5, 6)] {
        let (store, block) = build(block_cfg(12, heads, sw), 101);
        let x = random64(&[2, 4, 4, 4, 12], 102);
        let out = ok(block.attention(&store.bind_frozen(), &Tensor64::constant(x.clone())))?;
        let oracle = full_window_reference(&store, &x, 12, heads);
        let err = out.data().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure!(err < 1e-5, "sw={sw}: max abs err {err:.2e}");
        worst = worst.max(err);
    }
    let (store, block) = build(block_cfg(6, 3, 1), 103);
    let dep = dependency(&block, &store, &random64(&[1, 4, 4, 4, 6], 104));
    let coord = |t: usize| [t / 16, (t / 4) % 4, t % 4];
    for (o, row) in dep.iter().enumerate() {
        for (i, &moved) in row.iter().enumerate() {
            let (a, b) = (coord(o), coord(i));
            let cross = a[0] == b[0] || a[1] == b[1] || a[2] == b[2];
            ensure!(moved == cross, "sw=1: output {a:?} vs input {b:?} dependency {moved}");
        }
    }
    Ok(format!("full-window err {worst:.1e}, sw=1 support exactly cross-shaped"))
}

fn closed_forms() -> Outcome {
    let l = ok(contrastive_loss(&Tensor64::constant(Array64::full(&[4, 384], 0.3)), 0.5))?.item();
    ensure!((l - 3f64.ln()).abs() < 1e-6, "symmetric contrastive loss {l}");
    let r = ok(rotation_loss(&Tensor64::constant(Array64::zeros(&[8, 4])), &[0, 1, 2, 3, 3, 2, 1, 0]))?.item();
    ensure!((r - 4f64.ln()).abs() < 1e-6, "chance rotation loss {r}");
    let losses = [0.8, 2.5, 1.3];
    let s = |v: f64| Tensor64::scalar(v);
    let unit = ok(awl_combine([&s(losses[0]), &s(losses[1]), &s(losses[2])], &Tensor64::constant(Array64::full(&[3], 1.0))))?.item();
    let want = 0.5 * losses.iter().sum::<f64>() + 8f64.ln();
    ensure!((unit - want).abs() < 1e-6, "weighted loss at unit coefficients {unit} vs {want}");
    let mut store = ParamStore64::new(0);
    let id = ok(store.insert("c", ok(Array64::new(&[3], vec![0.6, 1.4, 2.2]))?))?;
    let p = store.bind();
    ok(ok(awl_combine([&s(losses[0]), &s(losses[1]), &s(losses[2])], p.get(id)))?.backward())?;
    let g = p.grads()[id.index()].clone().ok_or("no coefficient gradient")?;
    let mut worst = 0.0f64;
    for t in 0..3 {
        let c = store.get(id).data()[t];
        worst = worst.max((g.data()[t] - (-losses[t] / c.powi(3) + 2.0 * c / (1.0 + c * c))).abs());
    }
    ensure!(worst < 1e-6, "coefficient derivative off by {worst:.2e}");
    Ok(format!("ln3 {:.1e}, ln4 {:.1e}, unit {:.1e}, derivative {worst:.1e}", (l - 3f64.ln()).abs(), (r - 4f64.ln()).abs(), (unit - want).abs()))
}

fn postprocessing() -> Outcome {
    let cfg = ExtractConfig::default();
    let mut map = vec![0f32; DIMS.iter().product()];
    blob(&mut map, [8.0, 7.0, 8.0], 0.9, 2.5, 100.0);
    let c = extract_candidates(&map, DIMS, &cfg);
    ensure!(c.len() == 1, "one blob gave {} candidates", c.len());
    ensure!(c[0].confidence == 0.9f32 as f64, "confidence {}", c[0].confidence);
    ensure!(c[0].voxels == at_least(&map, 0.4 * (0.9f32 as f64), |_| true), "one-blob extent differs");

    let mut map = vec![0f32; DIMS.iter().product()];
    let (a, b) = ([4.0, 4.0, 8.0], [11.0, 11.0, 8.0]);
    blob(&mut map, a, 0.9, 1.5, 4.0);
    blob(&mut map, b, 0.5, 1.5, 4.0);
    let c = extract_candidates(&map, DIMS, &cfg);
    ensure!(c.len() == 2, "two blobs gave {} candidates", c.len());
    ensure!((c[0].confidence, c[1].confidence) == (0.9f32 as f64, 0.5f32 as f64), "confidences {:?}", (c[0].confidence, c[1].confidence));
    let near = |p: [f64; 3]| move |i: usize| dist2(coords(i, DIMS), p) <= 16.0;
    ensure!(c[0].voxels == at_least(&map, 0.4 * (0.9f32 as f64), near(a)), "first extent differs");
    ensure!(c[1].voxels == at_least(&map, 0.4 * (0.5f32 as f64), near(b)), "second extent differs");
    let first: BTreeSet<_> = c[0].voxels.iter().collect();
    ensure!(c[1].voxels.iter().all(|v| !first.contains(v)), "candidates overlap");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise: Vec<f32> = (0..64 * 64 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
    let start = Instant::now();
    let found = extract_candidates(&noise, [64, 64, 64], &cfg).len();
    let seconds = start.elapsed().as_secs_f64();
    ensure!(seconds < 1.0, "64^3 random map took {seconds:.2} s");
    Ok(format!("1 and 2 candidates as predicted, 64^3 noise map: {found} candidates in {:.0} ms", seconds * 1e3))
}

fn metrics() -> Outcome {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(8..40);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| ((rng.random_range(0.0..1.0f64) + if l { 0.3 } else { 0.0 }) * 10.0).round() / 10.0)
            .collect();
        let a = ok(auroc(&labels, &scores))?;
        ensure!(a == pair_count_auroc(&labels, &scores), "auroc set {seed}: {a} vs pair counting");
    }
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let lesions = rng.random_range(1..8);
        let mut hits = 0;
        let dets: Vec<(f64, bool)> = (0..rng.random_range(1..14))
            .map(|_| {
                let hit = hits < lesions && rng.random_bool(0.5);
                hits += hit as usize;
                ((rng.random_range(0.0..1.0f64) * 8.0).round() / 8.0, hit)
            })
            .collect();
        let ap = ok(average_precision(&dets, lesions))?;
        ensure!(ap == enumerated_ap(&dets, lesions), "ap scenario {seed}: {ap} vs enumeration");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3000);
    let mut exact = 0;
    for n in 5..=12 {
        for _ in 0..4 {
            let deltas: Vec<f64> = (0..n).map(|_| (rng.random_range(-3.0..4.0f64) * 2.0).round() / 2.0).collect();
            if deltas.iter().filter(|&&d| d != 0.0).count() < 5 {
                continue;
            }
            let w = ok(wilcoxon_signed_rank(&deltas))?;
            ensure!(w.exact, "n={n} fell back to the normal approximation");
            ensure!(w.p_value == enumerated_wilcoxon(&deltas), "wilcoxon {deltas:?}: {} vs enumeration", w.p_value);
            exact += 1;
        }
    }
    let holm = holm_bonferroni(&[0.03, 0.001, 0.0026], 0.005);
    ensure!(holm == vec![false, true, false], "holm {holm:?}");
    Ok(format!("20 auroc sets, 10 ap scenarios, {exact} wilcoxon sets exact; holm matches"))
}

fn overfit() -> Outcome {
    let one = vec![sample(&PhantomConfig { negative_fraction: 0.0, ..Default::default() }, 1, 0)];
    let cfg = FinetuneConfig {
        model: UNetConfig::desk(),
        epochs: 150,
        batch_size: 1,
        lr: 1e-2,
        warmup_epochs: 10,
        ..Default::default()
    };
    let start = Instant::now();
    let mut reached = None;
    let run = ok(finetune_with(&one, &one, &cfg, |r| {
        if reached.is_none() && r.val_dice.is_some_and(|d| d > 0.8) {
            reached = Some(r.epoch);
        }
    }))?;
    let dice = run.history.last().and_then(|r| r.val_dice).unwrap_or(0.0);
    let seconds = start.elapsed().as_secs_f64();
    let step = reached.ok_or(format!("soft dice {dice:.3} after {} steps", cfg.epochs))?;
    ensure!(seconds < 1800.0, "took {seconds:.0} s");
    Ok(format!("soft dice > 0.8 at step {step}, {dice:.3} at step {}, {seconds:.0} s", cfg.epochs))
}

fn rotation_pretext() -> Outcome {
    let all = corpus(48, 7);
    let (train, held) = all.split_at(32);
    let start = Instant::now();
    let run = ok(pretrain(&images(train), &SslConfig::desk()))?;
    let acc = ok(run.rotation_accuracy(&images(held), 99))?;
    let seconds = start.elapsed().as_secs_f64();
    ensure!(acc > 0.9, "held-out rotation accuracy {acc:.3}");
    ensure!(seconds < 1800.0, "took {seconds:.0} s");
    Ok(format!("held-out rotation accuracy {acc:.3} on {} images, {seconds:.0} s", held.len()))
}

fn transfer(dir: &Path) -> Outcome {
    let all = corpus(64, 3);
    let (train, val) = all.split_at(16);
    let start = Instant::now();
    let pre = ok(pretrain(&images(&all), &SslConfig::desk()))?;
    let path = dir.join("transfer.ckpt");
    ok(ok(pre.checkpoint())?.save(&path))?;
    let pretrain_s = start.elapsed().as_secs_f64();
    let mut ap = Vec::new();
    for init in [Init::Random, Init::Pretrained(path.clone())] {
        let t = Instant::now();
        let cfg = FinetuneConfig { model: UNetConfig::desk(), init, epochs: 30, lr: 1e-2, warmup_epochs: 2, ..Default::default() };
        let m = evaluate(&ok(finetune(train, &[], &cfg))?, val)?;
        ap.push(m.ap.ok_or("no lesions in the validation split")?);
        ensure!(t.elapsed().as_secs_f64() + pretrain_s < 1800.0, "run took {:.0} s", t.elapsed().as_secs_f64() + pretrain_s);
    }
    ensure!(ap[1] > ap[0], "pretrained AP {:.4} not above random AP {:.4}", ap[1], ap[0]);
    Ok(format!(
        "16 labeled / 48 val: random AP {:.4}, pretrained AP {:.4}, {:.0} s",
        ap[0],
        ap[1],
        start.elapsed().as_secs_f64()
    ))
}

/// Short pretraining followed by finetuning from it; returns the metrics JSON
/// and both checkpoints' bytes.
fn pipeline(
    ssl: &SslConfig,
    train: &[Sample],
    val: &[Sample],
    init_path: &Path,
) -> Result<(String, Vec<u8>, Vec<u8>, Finetuned), String> {
    let pre = ok(pretrain(&images(train), ssl))?;
    ensure!(pre.history.iter().all(|r| r.loss.is_finite()), "pretraining loss diverged");
    let pre_ckpt = ok(pre.checkpoint())?;
    ok(pre_ckpt.save(init_path))?;
    let cfg = FinetuneConfig {
        model: ssl.model.clone(),
        init: Init::Pretrained(init_path.to_path_buf()),
        loss: DiceFocal::default(),
        epochs: 6,
        lr: 1e-2,
        warmup_epochs: 1,
        ..Default::default()
    };
    let ft = ok(finetune(train, &[], &cfg))?;
    ensure!(ft.history.iter().all(|r| r.train_loss.is_finite()), "finetuning loss diverged");
    let json = ok(evaluate(&ft, val)?.to_json())?;
    Ok((json, ok(pre_ckpt.to_bytes())?, ok(ok(ft.checkpoint())?.to_bytes())?, ft))
}

fn short_ssl(model: UNetConfig, weighting: Weighting) -> SslConfig {
    SslConfig { model, weighting, epochs: 4, warmup_epochs: 1, seed: 11, ..SslConfig::desk() }
}

fn ablations(dir: &Path) -> Outcome {
    let all = corpus(16, 5);
    let (train, val) = all.split_at(8);
    let base = UNetConfig::desk();
    let arms = [
        ("baseline", short_ssl(base.clone(), Weighting::Awl)),
        ("dot-product attention", short_ssl(UNetConfig { use_cosine: false, ..base.clone() }, Weighting::Awl)),
        ("fixed stripe width 2", short_ssl(UNetConfig { stripe_widths: [2; 4], ..base.clone() }, Weighting::Awl)),
        ("equal loss weights", short_ssl(base, Weighting::Equal)),
    ];
    let mut keys: Option<BTreeSet<String>> = None;
    let mut aps = Vec::new();
    for (name, ssl) in &arms {
        let (json, ..) = pipeline(ssl, train, val, &dir.join("ablation.ckpt")).map_err(|e| format!("{name}: {e}"))?;
        let path = dir.join(format!("{}.json", name.replace(' ', "_")));
        ok(std::fs::write(&path, &json))?;
        let value: serde_json::Value = ok(serde_json::from_slice(&ok(std::fs::read(&path))?))?;
        let fields: BTreeSet<String> = value.as_object().ok_or("metrics JSON is not an object")?.keys().cloned().collect();
        ensure!(keys.as_ref().is_none_or(|k| *k == fields), "{name}: metrics fields {fields:?} differ");
        keys = Some(fields);
        aps.push(format!("{name} AP {}", value["ap"].as_f64().map_or("n/a".into(), |v| format!("{v:.3}"))));
    }
    Ok(format!("4 arms trained and wrote metrics JSON: {}", aps.join(", ")))
}

fn reproducibility(dir: &Path) -> Outcome {
    let all = corpus(8, 9);
    let (train, val) = all.split_at(4);
    let ssl = SslConfig { epochs: 2, seed: 21, ..short_ssl(UNetConfig::desk(), Weighting::Awl) };
    let path = dir.join("repro.ckpt");
    let (json_a, pre_a, ft_a, _) = pipeline(&ssl, train, val, &path)?;
    let (json_b, pre_b, ft_b, _) = pipeline(&ssl, train, val, &path)?;
    ensure!(pre_a == pre_b, "pretraining checkpoints differ");
    ensure!(ft_a == ft_b, "finetuning checkpoints differ");
    ensure!(json_a == json_b, "metrics JSON differs");
    let (_, pre_c, ..) = pipeline(&SslConfig { seed: 22, ..ssl }, train, val, &path)?;
    ensure!(pre_c != pre_a, "a different seed gave the same checkpoint");
    Ok(format!("checkpoints ({} and {} bytes) and metrics JSON bit-identical", pre_a.len(), ft_a.len()))
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 gradient suite", Box::new(gradient_suite)),
        ("2 stripe attention oracle", Box::new(stripe_oracle)),
        ("3 closed-form loss values", Box::new(closed_forms)),
        ("4 postprocessing oracle", Box::new(postprocessing)),
        ("5 metrics oracles", Box::new(metrics)),
        ("6a overfit one phantom", Box::new(overfit)),
        ("6b rotation pretext on held-out phantoms", Box::new(rotation_pretext)),
        ("6c pretrained vs random init", Box::new(|| transfer(dir.path()))),
        ("7 ablation arms", Box::new(|| ablations(dir.path()))),
        ("8 reproducibility", Box::new(|| reproducibility(dir.path()))),
    ];
    let mut failed = Vec::new();
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => emit(&format!("PASS  criterion {name}: {detail}")),
            Err(why) => {
                emit(&format!("FAIL  criterion {name}: {why}"));
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
