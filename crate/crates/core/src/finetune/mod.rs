//! Segmentation finetuning: the dice-focal objective and the training loop.

mod loss;
mod train;

pub use loss::{class_weights, focal, generalized_dice, soft_dice, DiceFocal, DICE_SMOOTH};
pub use train::{
    finetune, finetune_with, init_model, predict, validate, EpochRecord, Finetuned, FinetuneConfig, Init,
    CHECKPOINT_KIND,
};
