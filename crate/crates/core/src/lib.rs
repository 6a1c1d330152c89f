//! Unsupervised object co-localization from GAN discriminators: models,
//! losses, training, CAM extraction, box post-processing and scoring.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod localization;
pub mod losses;
pub mod models;
pub mod render;
pub mod saliency;
pub mod training;

pub use checkpoint::Checkpoint;
pub use config::{ExperimentConfig, GanConfig, Variant};
pub use error::{Error, Result};
pub use localization::{BBox, BinaryMask, BoxSelection, Connectivity, LocalizeOptions};
pub use models::{DiscriminatorReadout, Gan};
pub use saliency::SaliencyMap;
pub use training::{AugmentationPolicy, Trainer};

pub use coloc_autograd as autograd;
