//! Conditional adversarial segmentation network: layers, generator,
//! discriminator, objective, optimizer, training and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod networks;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Preset, TrainConfig};
pub use gradcheck::{grad_check, GradCheck};
pub use loss::{pix2pix_losses, GanLosses};
pub use networks::{patch_map_dims, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Parameterized};
pub use optim::Adam;
pub use tensor::Tensor;
pub use train::{segment, train, Checkpoint, EpochRecord, Segmentation, Trainer};
