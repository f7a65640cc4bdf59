//! Command-line driver for the synthetic-data pipeline.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cswin::data::{synth, Case, Dataset, PhantomConfig, PreprocessConfig, Sample, Volume};
use cswin::eval::{evaluate_case, EvalConfig, Metrics};
use cswin::finetune::{finetune_with, FinetuneConfig, Init};
use cswin::gradcheck::{run_suite, SuiteConfig};
use cswin::ssl::{pretrain_with, SslConfig};
use cswin::unet::{CSwinUNet, Checkpoint, UNetConfig};
use cswin::{Array32, Error};

#[derive(Parser)]
#[command(name = "cswin", version, about = "Train and evaluate the CSwin UNet lesion detector on synthetic phantoms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantom volumes, masks and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Self-supervised pretraining; writes a checkpoint with encoder, heads and coefficients.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch records as JSON lines.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Leave out this validation fold.
        #[arg(long)]
        fold: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Supervised training; the chosen fold is used for validation.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pretraining checkpoint for the encoder.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write detection maps for the cases of a manifest.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only this fold; all cases otherwise.
        #[arg(long)]
        fold: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Lesion-level and patient-level metrics for a prediction index.
    Eval {
        /// `predictions.json` written by `predict`.
        #[arg(long)]
        predictions: PathBuf,
        /// Metrics JSON; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for `roc.csv` and `pr.csv`.
        #[arg(long)]
        curves: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference checks of every layer and loss.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PretrainJob {
    preprocess: PreprocessConfig,
    pretrain: SslConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FinetuneJob {
    preprocess: PreprocessConfig,
    finetune: FinetuneConfig,
    /// Share of the training cases that keep their labels, taken in id order.
    labeled_fraction: f64,
}

impl Default for FinetuneJob {
    fn default() -> Self {
        Self { preprocess: PreprocessConfig::default(), finetune: FinetuneConfig::default(), labeled_fraction: 1.0 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PredictJob {
    preprocess: PreprocessConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionEntry {
    id: String,
    map: PathBuf,
    mask: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionIndex {
    checkpoint: PathBuf,
    cases: Vec<PredictionEntry>,
}

/// A failure with its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Config(String),
    Diverged { step: usize, loss: f64 },
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Config(_) => 4,
            Failure::Diverged { .. } => 5,
            Failure::Other(_) => 1,
        }
    }

    fn report(&self) -> serde_json::Value {
        let (kind, message) = match self {
            Failure::Usage(m) => ("usage", m.clone()),
            Failure::Io(m) => ("io", m.clone()),
            Failure::Config(m) => ("config", m.clone()),
            Failure::Diverged { step, loss } => ("diverged", format!("training diverged at step {step}: loss = {loss}")),
            Failure::Other(m) => ("error", m.clone()),
        };
        let mut err = serde_json::json!({ "kind": kind, "message": message, "exit_code": self.code() });
        if let Failure::Diverged { step, .. } = self {
            err["step"] = serde_json::json!(step);
        }
        serde_json::json!({ "error": err })
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Format { .. } => Failure::Io(e.to_string()),
            Error::InvalidArgument(_) | Error::ArchitectureMismatch(_) => Failure::Config(e.to_string()),
            Error::Diverged { step, loss } => Failure::Diverged { step, loss },
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome<T> = Result<T, Failure>;

fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Outcome<C> {
    let Some(path) = path else { return Ok(C::default()) };
    let text = fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| Failure::Other(e.to_string()))?;
    text.push(b'\n');
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Outcome<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Appends one JSON line per record.
struct History(Option<BufWriter<File>>);

impl History {
    fn open(path: Option<&Path>) -> Outcome<Self> {
        match path {
            Some(p) => {
                ensure_parent(p)?;
                Ok(Self(Some(BufWriter::new(File::create(p)?))))
            }
            None => Ok(Self(None)),
        }
    }

    fn push(&mut self, record: &impl Serialize) {
        if let Some(w) = &mut self.0 {
            // A failed history write must not abort a training run.
            let _ = serde_json::to_writer(&mut *w, record).map(|_| writeln!(w));
        }
    }

    fn finish(self) -> Outcome<()> {
        if let Some(mut w) = self.0 {
            w.flush()?;
        }
        Ok(())
    }
}

fn samples(ds: &Dataset, cases: &[&Case], pre: &PreprocessConfig) -> Outcome<Vec<Sample>> {
    let out = cases.iter().map(|c| ds.sample(c, pre)).collect::<cswin::Result<Vec<_>>>()?;
    for s in &out {
        for w in &s.warnings {
            eprintln!("warning: {}: {w}", s.id);
        }
    }
    Ok(out)
}

fn check_grid(pre: &PreprocessConfig, model: &UNetConfig) -> Outcome<()> {
    if pre.output_shape != model.input_shape {
        return Err(Failure::Config(format!(
            "preprocess output_shape {:?} does not match model input_shape {:?}",
            pre.output_shape, model.input_shape
        )));
    }
    Ok(())
}

fn run(cmd: Command) -> Outcome<serde_json::Value> {
    match cmd {
        Command::Synth { out, count, common } => {
            let cfg: PhantomConfig = load_config(common.config.as_deref())?;
            let seed = common.seed.unwrap_or(0);
            let ds = synth(count, seed, &cfg, &out)?;
            let positives = ds.cases.iter().filter(|c| c.label == Some(true)).count();
            Ok(serde_json::json!({ "manifest": out.join("manifest.json"), "cases": ds.cases.len(), "positives": positives, "seed": seed }))
        }
        Command::Pretrain { data, out, history, fold, common } => {
            let mut job: PretrainJob = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                job.pretrain.seed = s;
            }
            check_grid(&job.preprocess, &job.pretrain.model)?;
            let ds = Dataset::load(&data)?;
            let cases: Vec<&Case> = match fold {
                Some(f) => ds.split(f).0,
                None => ds.cases.iter().collect(),
            };
            let images: Vec<Array32> = samples(&ds, &cases, &job.preprocess)?.into_iter().map(|s| s.image).collect();
            let mut log = History::open(history.as_deref())?;
            let run = pretrain_with(&images, &job.pretrain, |r| log.push(r))?;
            log.finish()?;
            ensure_parent(&out)?;
            run.checkpoint()?.save(&out)?;
            Ok(serde_json::json!({ "checkpoint": out, "volumes": images.len(), "final": run.history.last() }))
        }
        Command::Finetune { data, out, init, fold, history, common } => {
            let mut job: FinetuneJob = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                job.finetune.seed = s;
            }
            if let Some(p) = init {
                job.finetune.init = Init::Pretrained(p);
            }
            if !(job.labeled_fraction > 0.0 && job.labeled_fraction <= 1.0) {
                return Err(Failure::Config(format!("labeled_fraction must be in (0, 1], got {}", job.labeled_fraction)));
            }
            check_grid(&job.preprocess, &job.finetune.model)?;
            let ds = Dataset::load(&data)?;
            let (mut train, val) = ds.split(fold);
            train.sort_by(|a, b| a.id.cmp(&b.id));
            train.truncate(((train.len() as f64 * job.labeled_fraction).ceil() as usize).max(1));
            let train = samples(&ds, &train, &job.preprocess)?;
            let val = samples(&ds, &val, &job.preprocess)?;
            let mut log = History::open(history.as_deref())?;
            let run = finetune_with(&train, &val, &job.finetune, |r| log.push(r))?;
            log.finish()?;
            ensure_parent(&out)?;
            run.checkpoint()?.save(&out)?;
            Ok(serde_json::json!({ "checkpoint": out, "train": train.len(), "val": val.len(), "final": run.history.last() }))
        }
        Command::Predict { checkpoint, data, out, fold, common } => {
            let job: PredictJob = load_config(common.config.as_deref())?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            if ckpt.kind != cswin::finetune::CHECKPOINT_KIND {
                return Err(Failure::Config(format!("{} holds a {} checkpoint, not a segmentation model", checkpoint.display(), ckpt.kind)));
            }
            let model_cfg: UNetConfig = ckpt.config_as()?;
            check_grid(&job.preprocess, &model_cfg)?;
            let (mut store, model) = CSwinUNet::build::<f32>(&model_cfg, 0)?;
            ckpt.restore(&mut store)?;
            let ds = Dataset::load(&data)?;
            let cases: Vec<&Case> = match fold {
                Some(f) => ds.split(f).1,
                None => ds.cases.iter().collect(),
            };
            fs::create_dir_all(&out)?;
            let spacing = job.preprocess.output_spacing();
            let mut entries = Vec::with_capacity(cases.len());
            for s in samples(&ds, &cases, &job.preprocess)? {
                let map = cswin::finetune::predict(&model, &store, &s.image)?;
                let [h, w, d] = [map.shape()[0], map.shape()[1], map.shape()[2]];
                let map_file = PathBuf::from(format!("{}_map.json", s.id));
                Volume::new(map.reshaped(&[1, h, w, d])?, spacing, vec!["probability".into()])?.write(&out.join(&map_file))?;
                let mask_file = match s.mask {
                    Some(m) => {
                        let f = PathBuf::from(format!("{}_gt.json", s.id));
                        let mut v = Volume::new(m.reshaped(&[1, h, w, d])?, spacing, vec!["lesion".into()])?;
                        v.preprocessed = true;
                        v.write(&out.join(&f))?;
                        Some(f)
                    }
                    None => None,
                };
                entries.push(PredictionEntry { id: s.id, map: map_file, mask: mask_file });
            }
            let index = out.join("predictions.json");
            let n = entries.len();
            write_json(&index, &PredictionIndex { checkpoint, cases: entries })?;
            Ok(serde_json::json!({ "predictions": index, "cases": n }))
        }
        Command::Eval { predictions, out, curves, common } => {
            let cfg: EvalConfig = load_config(common.config.as_deref())?;
            let text = fs::read(&predictions).map_err(|e| Failure::Io(format!("{}: {e}", predictions.display())))?;
            let index: PredictionIndex = serde_json::from_slice(&text)
                .map_err(|e| Failure::Io(format!("malformed file {}: {e}", predictions.display())))?;
            let root = predictions.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut records = Vec::with_capacity(index.cases.len());
            for e in &index.cases {
                let mask = e.mask.as_ref().ok_or_else(|| Failure::Config(format!("case {} has no ground truth", e.id)))?;
                let map = Volume::read(&root.join(&e.map))?;
                let gt = Volume::read(&root.join(mask))?;
                let [_, h, w, d] = map.shape();
                let spatial = gt.spatial();
                records.push(evaluate_case(&e.id, &map.data.reshaped(&[h, w, d])?, &gt.data.reshaped(&spatial)?, &cfg)?);
            }
            let metrics = Metrics::from_cases(records);
            if let Some(dir) = curves {
                fs::create_dir_all(&dir)?;
                metrics.write_curves_csv(&dir)?;
            }
            match out {
                Some(p) => {
                    ensure_parent(&p)?;
                    fs::write(&p, metrics.to_json()? + "\n")?;
                    Ok(serde_json::json!({ "metrics": p, "auroc": metrics.auroc, "ap": metrics.ap }))
                }
                None => serde_json::to_value(&metrics).map_err(|e| Failure::Other(e.to_string())),
            }
        }
        Command::Gradcheck { out, common } => {
            let mut cfg: SuiteConfig = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let entries = run_suite(&cfg)?;
            let passed = entries.iter().all(|e| e.passed);
            let report = serde_json::json!({ "passed": passed, "tolerance": cfg.tolerance, "checks": entries });
            if let Some(p) = out {
                ensure_parent(&p)?;
                write_json(&p, &report)?;
            }
            if !passed {
                let failing: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
                return Err(Failure::Other(format!("gradient checks failed: {}", failing.join(", "))));
            }
            Ok(report)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::Usage(e.render().to_string().trim().to_owned());
            eprintln!("{}", f.report());
            return ExitCode::from(f.code());
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.report());
            ExitCode::from(f.code())
        }
    }
}
