//! Run configuration file (TOML).
//!
//! Every section is optional and falls back to the canonical defaults; unknown
//! keys are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dehaze_core::checkpoint::json_digest;
use dehaze_core::generator::GeneratorSpec;
use dehaze_core::haze::HazeSampler;
use dehaze_core::multiscale::MultiScaleSpec;
use dehaze_core::{DiscriminatorSpec, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    /// One UR-Net-K generator.
    #[default]
    Single,
    /// UR-Net-7*, 6*, 5* pyramid with learned fusion.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub architecture: ArchitectureKind,
    /// Number of U-type residual units of the single-scale generator.
    pub depth: usize,
    /// Omit the subtraction in the outermost unit (single-scale only).
    pub star: bool,
    /// Divides every canonical width (generators and discriminators).
    pub width_divisor: usize,
    /// Full generator override for single-scale models.
    pub generator: Option<GeneratorSpec>,
    /// Full override for multi-scale models.
    pub multi_scale: Option<MultiScaleSpec>,
    /// Full discriminator override.
    pub discriminator: Option<DiscriminatorSpec>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            architecture: ArchitectureKind::Single,
            depth: 7,
            star: false,
            width_divisor: 1,
            generator: None,
            multi_scale: None,
            discriminator: None,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self) -> anyhow::Result<ModelConfig> {
        if self.width_divisor == 0 {
            bail!("model.width_divisor must be at least 1");
        }
        let disc = self
            .discriminator
            .clone()
            .unwrap_or_else(|| DiscriminatorSpec::default().scaled_widths(self.width_divisor));
        let config = match self.architecture {
            ArchitectureKind::Single => {
                let gen = self
                    .generator
                    .clone()
                    .unwrap_or_else(|| GeneratorSpec::canonical(self.depth, self.star).scaled_widths(self.width_divisor));
                ModelConfig::single(gen, disc)
            }
            ArchitectureKind::Multi => {
                let spec = self
                    .multi_scale
                    .clone()
                    .unwrap_or_else(|| MultiScaleSpec::canonical(self.width_divisor));
                ModelConfig::multi(spec, disc)
            }
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Tab-separated training manifest.
    pub train_manifest: Option<PathBuf>,
    /// Optional validation manifest, scored after every epoch.
    pub val_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Where checkpoints, logs and reports go.
    pub output_dir: PathBuf,
    /// Overrides `train.seed` when set.
    pub seed: Option<u64>,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synthesize: HazeSampler,
    /// Save a resumable checkpoint every this many steps (0 = epoch ends only).
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("run"),
            seed: None,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            synthesize: HazeSampler::default(),
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let mut config: RunConfig = toml::from_str(text)?;
        config.normalize();
        Ok(config)
    }

    /// Loads a config file; relative data paths are resolved against the file's
    /// directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut config.output_dir);
        if let Some(p) = config.data.train_manifest.as_mut() {
            fix(p);
        }
        if let Some(p) = config.data.val_manifest.as_mut() {
            fix(p);
        }
        Ok(config)
    }

    fn normalize(&mut self) {
        if let Some(seed) = self.seed.take() {
            self.train.seed = seed;
        }
    }

    /// Digest of the normalized configuration (defaults filled in).
    pub fn config_hash(&self) -> anyhow::Result<String> {
        Ok(json_digest(self)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
