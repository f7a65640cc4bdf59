//! Volume files, preprocessing, synthetic phantoms and dataset manifests.

mod dataset;
mod phantom;
mod preprocess;
mod volume;

pub use dataset::{fold_of, synth, Case, Dataset, Sample, FOLDS};
pub use phantom::{generate, Ellipsoid, Lesion, Phantom, PhantomConfig, CHANNELS, MASK_CHANNEL};
pub use preprocess::{center_crop, preprocess, preprocess_mask, resample, resize, PreprocessConfig, Preprocessed};
pub use volume::{Volume, VolumeHeader, DTYPE};
