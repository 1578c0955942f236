//! Conditional-GAN single-image dehazing: atmospheric scattering model,
//! UR-Net generators, SPP discriminator, losses, multi-scale fusion, training,
//! evaluation and dataset handling.
//!
//! Images live in the `[-1, 1]` network domain inside the models and on the
//! `[0, 255]` byte scale for files and metrics.

pub mod checkpoint;
pub mod dataset;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod haze;
pub mod image;
pub mod losses;
pub mod multiscale;
pub mod nn;
pub mod optim;
pub mod params;
pub mod resize;
pub mod trainer;

pub use candle_core::{DType, Device, Tensor};

pub use checkpoint::{Checkpoint, CheckpointMeta, Phase};
pub use dataset::{build_manifest, epoch_order, read_image, write_image, MatchRule, Pair, PairManifest, PairSource, Split};
pub use discriminator::{Discriminator, DiscriminatorSpec};
pub use error::{Error, Result};
pub use evaluation::{evaluate_dataset, Dehazer, Identity, MetricsReport, MetricsRow};
pub use generator::{Generator, GeneratorOutput, GeneratorSpec};
pub use haze::{DepthMap, HazeMap, HazeSampler, ScatteringParams, SyntheticDepth, TransmissionMap};
pub use image::{Domain, Image, Plane};
pub use losses::{LossBreakdown, LossWeights};
pub use multiscale::{MultiScaleGenerator, MultiScaleSpec};
pub use nn::NoiseSource;
pub use optim::{Adam, AdamConfig};
pub use params::ParamStore;
pub use trainer::{Architecture, ModelConfig, RunStatus, StepRecord, TrainConfig, TrainObserver, Trainer};
