//! Volumes on disk: a JSON header next to a raw little-endian f32 payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Array;

pub const DTYPE: &str = "f32le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    /// `[C, H, W, D]`.
    pub shape: [usize; 4],
    pub spacing_mm: [f64; 3],
    pub channels: Vec<String>,
    pub dtype: String,
    /// Set once a volume has been through [`super::preprocess`].
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub preprocessed: bool,
}

/// Channel-major `(C, H, W, D)` intensities with physical voxel spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub data: Array<f32>,
    pub spacing_mm: [f64; 3],
    pub channels: Vec<String>,
    pub preprocessed: bool,
}

impl Volume {
    pub fn new(data: Array<f32>, spacing_mm: [f64; 3], channels: Vec<String>) -> Result<Self> {
        if data.ndim() != 4 || data.shape()[0] != channels.len() {
            return Err(Error::invalid(format!(
                "volume of shape {:?} does not match {} channel names",
                data.shape(),
                channels.len()
            )));
        }
        if spacing_mm.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing_mm:?}")));
        }
        Ok(Self { data, spacing_mm, channels, preprocessed: false })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.data.shape().try_into().expect("4-D volume")
    }

    /// `(H, W, D)`.
    pub fn spatial(&self) -> [usize; 3] {
        let [_, h, w, d] = self.shape();
        [h, w, d]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.data.len() / self.channels.len();
        &self.data.data()[c * n..(c + 1) * n]
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            shape: self.shape(),
            spacing_mm: self.spacing_mm,
            channels: self.channels.clone(),
            dtype: DTYPE.to_owned(),
            preprocessed: self.preprocessed,
        }
    }

    /// Payload path for a header path: same stem, `.raw` extension.
    pub fn payload_path(header: &Path) -> PathBuf {
        header.with_extension("raw")
    }

    /// Writes `<stem>.json` (the given path) and `<stem>.raw`.
    pub fn write(&self, header_path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(&self.header())?;
        json.push(b'\n');
        fs::write(header_path, json)?;
        let mut raw = Vec::with_capacity(4 * self.data.len());
        for v in self.data.data() {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(Self::payload_path(header_path), raw)?;
        Ok(())
    }

    pub fn read(header_path: &Path) -> Result<Self> {
        let shown = header_path.display().to_string();
        let bad = |reason: String| Error::Format { path: shown.clone(), reason };
        let header: VolumeHeader =
            serde_json::from_slice(&fs::read(header_path)?).map_err(|e| bad(e.to_string()))?;
        if header.dtype != DTYPE {
            return Err(bad(format!("unsupported dtype {}", header.dtype)));
        }
        let raw = fs::read(Self::payload_path(header_path))?;
        let n: usize = header.shape.iter().product();
        if raw.len() != 4 * n {
            return Err(bad(format!("payload has {} bytes, header needs {}", raw.len(), 4 * n)));
        }
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let data = Array::new(&header.shape, values).map_err(|e| bad(e.to_string()))?;
        let mut v = Self::new(data, header.spacing_mm, header.channels).map_err(|e| bad(e.to_string()))?;
        v.preprocessed = header.preprocessed;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_write_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::new(
            Array::from_fn(&[2, 3, 2, 2], |i| i as f32 * 0.25 - 1.0),
            [0.5, 0.5, 3.6],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let p1 = dir.path().join("one.json");
        v.write(&p1).unwrap();
        let back = Volume::read(&p1).unwrap();
        assert_eq!(back, v);
        let p2 = dir.path().join("two.json");
        back.write(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(fs::read(p1.with_extension("raw")).unwrap(), fs::read(p2.with_extension("raw")).unwrap());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::new(Array::zeros(&[1, 2, 2, 2]), [1.0; 3], vec!["x".into()]).unwrap();
        let p = dir.path().join("v.json");
        v.write(&p).unwrap();
        fs::write(p.with_extension("raw"), [0u8; 5]).unwrap();
        assert!(matches!(Volume::read(&p), Err(Error::Format { .. })));
    }
}
