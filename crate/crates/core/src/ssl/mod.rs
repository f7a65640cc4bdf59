//! Self-supervised pretraining: paired-view augmentation, contrastive,
//! restoration and rotation pretext tasks, and their weighted combination.

mod augment;
mod losses;
mod model;
mod pretrain;

pub use augment::{
    augment, augment_view, augment_view_rotated, cutout_box, rotate90, shuffle_patch, AugmentConfig, AugmentedPair, View,
};
pub use losses::{
    awl_coefficients, awl_combine, awl_raw_for_unit, contrastive_loss, effective_weights, restoration_loss,
    rotation_loss, AWL_EPS,
};
pub use model::{SslModel, SslOutputs};
pub use pretrain::{
    checkpoint_model, pretrain, pretrain_with, rotation_accuracy, PretrainRecord, Pretrained, SslConfig, Weighting,
    CHECKPOINT_KIND,
};
