//! Datasets, augmentation, training and inference.

mod augment;
mod config;
mod data;
mod step;
mod train;

pub use augment::{
    augment, sample_rng, AugmentOp, AugmentationSpec, Augmenter, PluginOp, NATIVE_OPS, PLUGIN_OPS,
};
pub use config::{
    default_batch_size, lr_at_epoch, ModelConfig, RunConfigFile, SelectionMetric, TrainConfig,
    DEFAULT_EPOCHS, DEFAULT_LR_INITIAL, DEFAULT_LR_REDUCED, DEFAULT_LR_SWITCH_EPOCH,
    DEFAULT_WORKING_SIZE,
};
pub use data::{
    build_manifest, load_sample, DatasetManifest, ManifestEntry, Split, SplitAssignment,
    SplitRules, IMAGE_EXTENSIONS, MANIFEST_FILE,
};
pub use step::train_step;
pub use train::{
    epoch_dir, predict, predict_batched, predict_checkpoint, select_best, train,
    train_with_progress, working_probs, working_probs_batch, CheckpointRecord, TrainOutcome,
    BEST_DIR, RECORDS_FILE,
};
