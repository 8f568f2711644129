//! Desk-scale reference models: synthetic datasets, builders, training and
//! the binary artifact envelope.

mod build;
mod dataset;
pub mod format;
mod train;

pub use build::{build_retina_model, build_toy_cnn, toy_cnn_param_count, RetinaConfig, ToyCnnConfig};
pub use dataset::{generate_dataset, Dataset, DatasetKind, DatasetSpec, GroundTruth, Targets};
pub use format::{load_dataset, load_model, save_dataset, save_model};
pub use train::{accuracy, train, OptimizerKind, TrainConfig, TrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
