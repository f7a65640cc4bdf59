//! Dataset manifests: a JSON list of image/mask volume pairs with labels.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::label_hash;
use crate::tensor::Array;

use super::phantom::{generate, PhantomConfig};
use super::preprocess::{preprocess, preprocess_mask, PreprocessConfig};
use super::volume::Volume;

pub const FOLDS: usize = 5;

/// Cross-validation fold of a case, a fixed function of its id.
pub fn fold_of(id: &str) -> usize {
    (label_hash(id) % FOLDS as u64) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    pub id: String,
    /// Header paths, relative to the manifest directory.
    pub volume: PathBuf,
    pub mask: Option<PathBuf>,
    pub label: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub cases: Vec<Case>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomConfig>,
    #[serde(skip)]
    pub root: PathBuf,
}

/// A loaded, preprocessed case ready for a model.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// `(C, H, W, D)`.
    pub image: Array<f32>,
    /// `(H, W, D)` binary lesion mask, if the case has one.
    pub mask: Option<Array<f32>>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn load(manifest: &Path) -> Result<Self> {
        let text = fs::read(manifest)?;
        let mut ds: Dataset = serde_json::from_slice(&text)
            .map_err(|e| Error::Format { path: manifest.display().to_string(), reason: e.to_string() })?;
        ds.root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(ds)
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        fs::write(manifest, json)?;
        Ok(())
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn case(&self, id: &str) -> Option<&Case> {
        self.cases.iter().find(|c| c.id == id)
    }

    /// Reads and preprocesses one case.
    pub fn sample(&self, case: &Case, cfg: &PreprocessConfig) -> Result<Sample> {
        let pre = preprocess(&Volume::read(&self.path(&case.volume))?, cfg)?;
        let mask = match &case.mask {
            Some(p) => {
                let m = preprocess_mask(&Volume::read(&self.path(p))?, cfg)?;
                let [_, h, w, d] = m.shape();
                let binary = m.channel(0).iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
                Some(Array::new(&[h, w, d], binary)?)
            }
            None => None,
        };
        Ok(Sample { id: case.id.clone(), image: pre.volume.data, mask, warnings: pre.warnings })
    }

    /// Cases in `fold` (validation) and the rest (training).
    pub fn split(&self, fold: usize) -> (Vec<&Case>, Vec<&Case>) {
        self.cases.iter().partition(|c| fold_of(&c.id) != fold)
    }
}

/// Generates `n` phantoms under `out`, plus `manifest.json` listing them.
pub fn synth(n: usize, seed: u64, cfg: &PhantomConfig, out: &Path) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("synth needs at least one phantom"));
    }
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut cases = Vec::with_capacity(n);
    for i in 0..n {
        let p = generate(cfg, seed, i)?;
        let id = format!("case{i:04}");
        let volume = PathBuf::from(format!("{id}.json"));
        let mask = PathBuf::from(format!("{id}_mask.json"));
        p.volume.write(&out.join(&volume))?;
        p.mask.write(&out.join(&mask))?;
        cases.push(Case { id, volume, mask: Some(mask), label: Some(p.label()) });
    }
    let ds = Dataset { cases, seed: Some(seed), phantom: Some(cfg.clone()), root: out.to_path_buf() };
    ds.save(&out.join("manifest.json"))?;
    Ok(ds)
}
