//! Synthetic data, the differentiable model family, training and zoo assembly.

pub mod dataset;
pub mod network;
pub mod persist;
pub mod spec;
pub mod train;
pub mod zoo;

pub use dataset::{gen_dataset, DatasetConfig, Sample, SyntheticDataset};
pub use network::{argmax, ModelMeta, TrainedModel, Weights};
pub use persist::{zoo_load, zoo_save, ZOO_FORMAT_VERSION};
pub use spec::{Activation, Architecture, ModelSpec, SpecMixture, TrainingParams};
pub use train::{accuracy, train_model, train_model_at};
pub use zoo::{build_zoo, Role, Zoo, ZooConfig};
