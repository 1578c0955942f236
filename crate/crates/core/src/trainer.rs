//! Optimization loop: alternating generator/discriminator updates, fixed-size
//! pretraining, input-size-flexibility fine-tuning (IFF), checkpoint/resume and
//! inference.

use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{json_digest, Checkpoint, CheckpointMeta, Phase, FORMAT_VERSION};
use crate::dataset::{epoch_order, PairSource};
use crate::discriminator::{Discriminator, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::evaluation::Dehazer;
use crate::generator::{Generator, GeneratorSpec};
use crate::image::{Domain, Image};
use crate::losses::{discriminator_loss, scalar, total_generator_loss, GeneratorTerms, LossBreakdown, LossWeights};
use crate::multiscale::{build_discriminators, build_pyramid, multiscale_loss, MultiScaleGenerator, MultiScaleSpec, SCALES};
use crate::nn::NoiseSource;
use crate::optim::{Adam, AdamConfig, Moments};
use crate::params::ParamStore;
use crate::resize::{pyramid_size, resize_image};

/// Stream keys separating the random streams of the two phases and of
/// inference from each other.
const IFF_ORDER_SALT: u64 = 0x1ff0_5a17;
const DISCRIMINATOR_SEED_SALT: u64 = 0xd15c_0000;

/// Which generator the model uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// One UR-Net-K at native scale with one discriminator.
    Single(GeneratorSpec),
    /// Three-scale pyramid with fusion and four discriminators.
    Multi(MultiScaleSpec),
}

/// Everything that determines the parameter layout; its digest ties
/// checkpoints to configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub discriminator: DiscriminatorSpec,
}

impl ModelConfig {
    pub fn single(spec: GeneratorSpec, discriminator: DiscriminatorSpec) -> Self {
        Self {
            architecture: Architecture::Single(spec),
            discriminator,
        }
    }

    pub fn multi(spec: MultiScaleSpec, discriminator: DiscriminatorSpec) -> Self {
        Self {
            architecture: Architecture::Multi(spec),
            discriminator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.architecture {
            Architecture::Single(g) => g.validate()?,
            Architecture::Multi(m) => m.validate()?,
        }
        self.discriminator.validate()
    }

    pub fn config_hash(&self) -> Result<String> {
        json_digest(self)
    }

    pub fn is_multi_scale(&self) -> bool {
        matches!(self.architecture, Architecture::Multi(_))
    }

    /// Smallest native side a training pair may have.
    pub fn min_training_side(&self) -> usize {
        let d = self.discriminator.min_input_size();
        match self.architecture {
            Architecture::Single(_) => d,
            // The quarter-scale output must still fit its discriminator.
            Architecture::Multi(_) => (1..=4 * d).find(|&s| pyramid_size(s, s, 2).0 >= d).unwrap_or(4 * d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// The discriminator is updated on every `d_update_period`-th step.
    pub d_update_period: usize,
    /// Epochs per phase.
    pub max_epochs: usize,
    /// `(height, width)` of pretraining inputs; `None` disables pretraining.
    pub pretrain_size: Option<(usize, usize)>,
    pub iff_enabled: bool,
    /// Longest side allowed during IFF; larger images are downscaled.
    pub iff_max_side: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Generator weight decay; `None` means "multi-scale models only".
    pub weight_decay: Option<bool>,
    /// Optional global gradient-norm clip for both networks.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 1,
            d_update_period: 4,
            max_epochs: 1,
            pretrain_size: Some((256, 256)),
            iff_enabled: true,
            iff_max_side: 1024,
            seed: 0,
            weights: LossWeights::default(),
            weight_decay: None,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Adam::new(self.adam())?;
        self.weights.validate()?;
        if self.batch_size != 1 {
            return Err(Error::InvalidArgument(format!(
                "batch_size must be 1 (images of different sizes cannot be batched), got {}",
                self.batch_size
            )));
        }
        if self.d_update_period == 0 || self.max_epochs == 0 || self.iff_max_side == 0 {
            return Err(Error::InvalidArgument(
                "d_update_period, max_epochs and iff_max_side must be positive".into(),
            ));
        }
        if let Some((h, w)) = self.pretrain_size {
            if h == 0 || w == 0 {
                return Err(Error::InvalidArgument(format!("pretrain_size {h}x{w} must be positive")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidArgument(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    fn weight_decay_for(&self, model: &ModelConfig) -> bool {
        self.weight_decay.unwrap_or_else(|| model.is_multi_scale())
    }
}

/// Where the training loop stands; everything needed to resume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    /// Steps taken so far, across phases.
    pub iteration: u64,
    /// Completed epochs in the current phase.
    pub epoch: u64,
    /// Pairs consumed in the current epoch.
    pub cursor: usize,
    pub phase: Phase,
    pub d_updates: u64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: u64,
    pub epoch: u64,
    pub phase: Phase,
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub d_updated: bool,
    pub losses: LossBreakdown,
    /// Seconds spent on the step; excluded from reproducibility comparisons.
    pub wall_time: f64,
}

impl StepRecord {
    /// The record with timing removed, for determinism comparisons.
    pub fn without_timing(&self) -> StepRecord {
        StepRecord {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

/// Hooks called by the epoch loops.
pub trait TrainObserver {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    /// Called after each completed epoch; the trainer is consistent and
    /// checkpointable here.
    fn on_epoch_end(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }

    fn should_stop(&self) -> bool {
        false
    }
}

impl TrainObserver for () {}

impl TrainObserver for Vec<StepRecord> {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Outcome of an epoch loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    Stopped,
}

#[derive(Debug, Clone)]
enum Model {
    Single(Generator),
    Multi(MultiScaleGenerator),
}

pub struct Trainer {
    model_config: ModelConfig,
    train_config: TrainConfig,
    g_store: ParamStore,
    d_store: ParamStore,
    model: Model,
    discriminators: Vec<Discriminator>,
    opt_g: Adam,
    opt_d: Adam,
    progress: Progress,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("model_config", &self.model_config)
            .field("progress", &self.progress)
            .field("generator_params", &self.g_store.num_elements())
            .field("discriminator_params", &self.d_store.num_elements())
            .finish()
    }
}

impl Trainer {
    /// Fresh, seeded initialization.
    pub fn new(model_config: ModelConfig, train_config: TrainConfig) -> Result<Self> {
        Self::with_dtype(model_config, train_config, DType::F32)
    }

    pub fn with_dtype(model_config: ModelConfig, train_config: TrainConfig, dtype: DType) -> Result<Self> {
        model_config.validate()?;
        train_config.validate()?;
        let seed = train_config.seed;
        let mut g_store = ParamStore::new(dtype, Device::Cpu, seed);
        let mut d_store = ParamStore::new(dtype, Device::Cpu, seed ^ DISCRIMINATOR_SEED_SALT);
        let (model, discriminators) = match &model_config.architecture {
            Architecture::Single(spec) => (
                Model::Single(Generator::new(spec, &mut g_store, "g")?),
                vec![Discriminator::new(&model_config.discriminator, &mut d_store, "d")?],
            ),
            Architecture::Multi(spec) => (
                Model::Multi(MultiScaleGenerator::new(spec, &mut g_store, "g")?),
                build_discriminators(&model_config.discriminator, &mut d_store, "d")?,
            ),
        };
        let phase = if train_config.pretrain_size.is_some() {
            Phase::Pretrain
        } else {
            Phase::Iff
        };
        Ok(Self {
            opt_g: Adam::new(train_config.adam())?,
            opt_d: Adam::new(train_config.adam())?,
            model_config,
            train_config,
            g_store,
            d_store,
            model,
            discriminators,
            progress: Progress {
                iteration: 0,
                epoch: 0,
                cursor: 0,
                phase,
                d_updates: 0,
            },
        })
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_config
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    /// Replaces the training configuration (e.g. for fine-tuning with different
    /// epochs); the optimizer moments are kept.
    pub fn set_train_config(&mut self, config: TrainConfig) -> Result<()> {
        config.validate()?;
        let steps_g = self.opt_g.steps();
        let steps_d = self.opt_d.steps();
        let mut opt_g = Adam::new(config.adam())?;
        opt_g.restore(steps_g, self.opt_g.moments().clone());
        let mut opt_d = Adam::new(config.adam())?;
        opt_d.restore(steps_d, self.opt_d.moments().clone());
        self.opt_g = opt_g;
        self.opt_d = opt_d;
        self.train_config = config;
        Ok(())
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn generator_store(&self) -> &ParamStore {
        &self.g_store
    }

    pub fn discriminator_store(&self) -> &ParamStore {
        &self.d_store
    }

    pub fn discriminators(&self) -> &[Discriminator] {
        &self.discriminators
    }

    pub fn dtype(&self) -> DType {
        self.g_store.dtype()
    }

    /// One training step on a (haze, clear) pair in the `[-1, 1]` domain.
    ///
    /// The generator is updated on every step; the discriminator on steps whose
    /// 1-based index is a multiple of `d_update_period`.
    pub fn train_step(&mut self, haze: &Image, clear: &Image) -> Result<(LossBreakdown, bool)> {
        haze.expect_domain(Domain::UnitSigned)?;
        clear.expect_domain(Domain::UnitSigned)?;
        haze.check_same_shape(clear, "Trainer::train_step")?;
        let step_index = self.progress.iteration + 1;
        let noise = NoiseSource::for_step(self.train_config.seed, step_index);
        let dtype = self.dtype();
        let device = Device::Cpu;
        let weights = self.train_config.weights;
        let wsq = if self.train_config.weight_decay_for(&self.model_config) {
            Some(self.g_store.weight_sq_norm()?)
        } else {
            None
        };

        // Generator objective, plus the (condition, real, detached fake)
        // triples the discriminator objective needs.
        let (g_total, mut breakdown, d_inputs) = match &self.model {
            Model::Single(gen) => {
                let h = haze.to_tensor(dtype, &device)?;
                let c = clear.to_tensor(dtype, &device)?;
                let out = gen.forward(&h, &noise)?;
                let d_fake = self.discriminators[0].discriminate(&h, &out.dehazed)?;
                let terms = GeneratorTerms::compute(&h, &c, &out.dehazed, &out.i_r, &out.j_g, &d_fake, weights.thresh)?;
                let mut parts = terms.values()?;
                let mut total = terms.weighted(&weights)?;
                if let Some(w) = &wsq {
                    parts.weight_decay = scalar(w)?;
                    total = (total + (w * weights.lambda_wd)?)?;
                }
                let breakdown = total_generator_loss(&parts, &weights)?;
                (total, breakdown, vec![(h, c, out.dehazed.detach())])
            }
            Model::Multi(gen) => {
                let hp = build_pyramid(haze)?.to_tensors(dtype, &device)?;
                let cp = build_pyramid(clear)?.to_tensors(dtype, &device)?;
                let out = gen.forward(&hp, &noise)?;
                let (total, breakdown) = multiscale_loss(&out, &hp, &cp, &self.discriminators, &weights, wsq.as_ref())?;
                let mut triples: Vec<_> = (0..SCALES)
                    .map(|k| (hp.levels[k].clone(), cp.levels[k].clone(), out.scales[k].dehazed.detach()))
                    .collect();
                triples.push((hp.levels[0].clone(), cp.levels[0].clone(), out.hf_fusion.detach()));
                (total, breakdown, triples)
            }
        };
        breakdown.check_finite()?;

        // Discriminator objective on the pre-update generator output; it is
        // logged every step and optimized only on the update cadence.
        let mut d_total: Option<Tensor> = None;
        for ((cond, real, fake), disc) in d_inputs.iter().zip(&self.discriminators) {
            let d_real = disc.discriminate(cond, real)?;
            let d_fake = disc.discriminate(cond, fake)?;
            let l = discriminator_loss(&d_real, &d_fake)?;
            d_total = Some(match d_total {
                Some(acc) => (acc + l)?,
                None => l,
            });
        }
        let d_total = d_total.expect("at least one discriminator");
        breakdown.adversarial_d = scalar(&d_total)?;
        breakdown.check_finite()?;

        let mut g_grads = g_total.backward()?;
        self.clip(&mut g_grads, &self.g_store)?;
        self.opt_g.step(&self.g_store, &g_grads)?;

        let d_due = step_index % self.train_config.d_update_period as u64 == 0;
        if d_due {
            let mut d_grads = d_total.backward()?;
            self.clip(&mut d_grads, &self.d_store)?;
            self.opt_d.step(&self.d_store, &d_grads)?;
            self.progress.d_updates += 1;
        }
        self.progress.iteration = step_index;
        Ok((breakdown, d_due))
    }

    fn clip(&self, grads: &mut GradStore, store: &ParamStore) -> Result<()> {
        let Some(max_norm) = self.train_config.grad_clip else {
            return Ok(());
        };
        let mut sq = 0.0;
        for (_, var) in store.iter() {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += scalar(&g.sqr()?.sum_all()?)?;
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient norm".into()));
        }
        if norm > max_norm {
            let factor = max_norm / norm;
            for (_, var) in store.iter() {
                if let Some(g) = grads.remove(var.as_tensor()) {
                    grads.insert(var.as_tensor(), (g * factor)?);
                }
            }
        }
        Ok(())
    }

    /// Fixed-size pretraining: every pair is bicubically resized to
    /// `pretrain_size` and `max_epochs` epochs are run (resuming mid-epoch if
    /// the trainer was restored from a checkpoint).
    pub fn pretrain_fixed_size(&mut self, data: &dyn PairSource, observer: &mut dyn TrainObserver) -> Result<RunStatus> {
        let (th, tw) = self
            .train_config
            .pretrain_size
            .ok_or_else(|| Error::InvalidArgument("pretraining requires pretrain_size".into()))?;
        let min = self.model_config.min_training_side();
        if th < min || tw < min {
            return Err(Error::Undersized {
                what: "pretrain_size",
                height: th,
                width: tw,
                min_height: min,
                min_width: min,
            });
        }
        if self.progress.phase != Phase::Pretrain {
            return Err(Error::InvalidArgument("pretraining cannot follow fine-tuning".into()));
        }
        self.run_phase(data, observer, self.train_config.seed, |pair_haze, pair_clear| {
            Ok(Some((resize_image(pair_haze, th, tw)?, resize_image(pair_clear, th, tw)?)))
        })
    }

    /// Input-size-flexibility fine-tuning at native sizes. Images whose longest
    /// side exceeds `iff_max_side` are downscaled; images too small for the
    /// discriminator are skipped with a warning.
    pub fn finetune_iff(&mut self, data: &dyn PairSource, observer: &mut dyn TrainObserver) -> Result<RunStatus> {
        if self.progress.phase == Phase::Pretrain {
            self.progress.phase = Phase::Iff;
            self.progress.epoch = 0;
            self.progress.cursor = 0;
        }
        let min = self.model_config.min_training_side();
        let cap = self.train_config.iff_max_side;
        self.run_phase(data, observer, self.train_config.seed ^ IFF_ORDER_SALT, move |haze, clear| {
            let (h, w) = haze.dims();
            let (h, w, haze, clear) = if h.max(w) > cap {
                let s = cap as f64 / h.max(w) as f64;
                let (nh, nw) = (((h as f64 * s).round() as usize).max(1), ((w as f64 * s).round() as usize).max(1));
                (nh, nw, resize_image(haze, nh, nw)?, resize_image(clear, nh, nw)?)
            } else {
                (h, w, haze.clone(), clear.clone())
            };
            if h < min || w < min {
                return Ok(None);
            }
            Ok(Some((haze, clear)))
        })
    }

    fn run_phase(
        &mut self,
        data: &dyn PairSource,
        observer: &mut dyn TrainObserver,
        order_seed: u64,
        prepare: impl Fn(&Image, &Image) -> Result<Option<(Image, Image)>>,
    ) -> Result<RunStatus> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("training set has no pairs".into()));
        }
        let n = data.len();
        while (self.progress.epoch as usize) < self.train_config.max_epochs {
            let order = epoch_order(n, order_seed, self.progress.epoch);
            while self.progress.cursor < n {
                if observer.should_stop() {
                    return Ok(RunStatus::Stopped);
                }
                let index = order[self.progress.cursor];
                let pair = data.get(index)?;
                let prepared = prepare(&pair.haze, &pair.clear)?;
                self.progress.cursor += 1;
                let Some((haze, clear)) = prepared else {
                    let (h, w) = pair.haze.dims();
                    log::warn!(
                        "skipping {} ({h}x{w}): smaller than the minimum training side {}",
                        pair.id,
                        self.model_config.min_training_side()
                    );
                    continue;
                };
                let start = Instant::now();
                let (losses, d_updated) = self.train_step(&haze, &clear)?;
                let (height, width) = haze.dims();
                let record = StepRecord {
                    iteration: self.progress.iteration,
                    epoch: self.progress.epoch,
                    phase: self.progress.phase,
                    id: pair.id,
                    height,
                    width,
                    d_updated,
                    losses,
                    wall_time: start.elapsed().as_secs_f64(),
                };
                log::debug!("step {} {} total {:.6}", record.iteration, record.id, losses.total);
                observer.on_step(&record)?;
            }
            self.progress.epoch += 1;
            self.progress.cursor = 0;
            observer.on_epoch_end(self)?;
        }
        Ok(RunStatus::Completed)
    }

    /// Runs the configured schedule: pretraining (if `pretrain_size` is set and
    /// not yet finished) then IFF (if enabled).
    pub fn fit(&mut self, data: &dyn PairSource, observer: &mut dyn TrainObserver) -> Result<RunStatus> {
        if self.train_config.pretrain_size.is_some() && self.progress.phase == Phase::Pretrain {
            if self.pretrain_fixed_size(data, observer)? == RunStatus::Stopped {
                return Ok(RunStatus::Stopped);
            }
        }
        if self.train_config.iff_enabled {
            return self.finetune_iff(data, observer);
        }
        Ok(RunStatus::Completed)
    }

    /// Dehazes at native size. Test-time dropout is driven by `seed`.
    pub fn dehaze_with_seed(&self, haze: &Image, seed: u64) -> Result<Image> {
        haze.expect_domain(Domain::UnitSigned)?;
        let noise = NoiseSource::new(seed);
        let out = match &self.model {
            Model::Single(gen) => gen.forward(&haze.to_tensor(self.dtype(), &Device::Cpu)?, &noise)?.dehazed,
            Model::Multi(gen) => {
                let p = build_pyramid(haze)?.to_tensors(self.dtype(), &Device::Cpu)?;
                gen.forward(&p, &noise)?.hf_fusion.clamp(-1.0, 1.0)?
            }
        };
        Image::from_tensor(&out.detach(), Domain::UnitSigned)
    }

    /// The learned haze map `M` (the fused map for multi-scale models).
    pub fn haze_map(&self, haze: &Image, seed: u64) -> Result<Image> {
        haze.expect_domain(Domain::UnitSigned)?;
        let noise = NoiseSource::new(seed);
        let m = match &self.model {
            Model::Single(gen) => gen.forward(&haze.to_tensor(self.dtype(), &Device::Cpu)?, &noise)?.haze_map,
            Model::Multi(gen) => {
                let p = build_pyramid(haze)?.to_tensors(self.dtype(), &Device::Cpu)?;
                gen.forward(&p, &noise)?.m_fusion
            }
        };
        Image::from_tensor(&m.detach(), Domain::Feature)
    }

    /// A [`Dehazer`] view with a fixed inference seed.
    pub fn dehazer(&self, seed: u64) -> TrainedDehazer<'_> {
        TrainedDehazer { trainer: self, seed }
    }

    /// Full training state as a checkpoint.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut sections: BTreeMap<String, Vec<(String, Tensor)>> = BTreeMap::new();
        for (name, t) in self.g_store.snapshot()? {
            sections.entry(section_of("generator", &name)).or_default().push((name, t));
        }
        for (name, t) in self.d_store.snapshot()? {
            sections.entry(section_of("discriminator", &name)).or_default().push((name, t));
        }
        for (net, opt) in [("generator", &self.opt_g), ("discriminator", &self.opt_d)] {
            for (name, m) in opt.moments() {
                sections
                    .entry(format!("optimizer.{net}.m"))
                    .or_default()
                    .push((name.clone(), m.m.detach().copy()?));
                sections
                    .entry(format!("optimizer.{net}.v"))
                    .or_default()
                    .push((name.clone(), m.v.detach().copy()?));
            }
        }
        Ok(Checkpoint {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                iteration: self.progress.iteration,
                epoch: self.progress.epoch,
                cursor: self.progress.cursor,
                phase: self.progress.phase,
                d_updates: self.progress.d_updates,
                g_optimizer_steps: self.opt_g.steps(),
                d_optimizer_steps: self.opt_d.steps(),
                config_hash: self.model_config.config_hash()?,
                model_config: serde_json::to_value(&self.model_config)?,
                train_config: serde_json::to_value(&self.train_config)?,
            },
            sections,
        })
    }

    /// Restores a checkpoint written for `model_config`. Fails with
    /// [`Error::CheckpointConfig`] if it belongs to a different configuration.
    pub fn from_checkpoint(ckpt: &Checkpoint, model_config: ModelConfig, train_config: TrainConfig) -> Result<Self> {
        ckpt.check_config_hash(&model_config.config_hash()?)?;
        let dtype = ckpt
            .sections
            .values()
            .flatten()
            .next()
            .map(|(_, t)| t.dtype())
            .unwrap_or(DType::F32);
        let mut this = Self::with_dtype(model_config, train_config, dtype)?;
        let mut seen_g = 0;
        let mut seen_d = 0;
        for (section, tensors) in &ckpt.sections {
            let store = if section.starts_with("generator") {
                seen_g += tensors.len();
                &this.g_store
            } else if section.starts_with("discriminator") {
                seen_d += tensors.len();
                &this.d_store
            } else {
                continue;
            };
            for (name, t) in tensors {
                store.set(name, t).map_err(|e| Error::CheckpointIntegrity(format!("{section}: {e}")))?;
            }
        }
        if seen_g != this.g_store.len() || seen_d != this.d_store.len() {
            return Err(Error::CheckpointIntegrity(format!(
                "checkpoint holds {seen_g}/{seen_d} generator/discriminator tensors, model has {}/{}",
                this.g_store.len(),
                this.d_store.len()
            )));
        }
        for (net, steps) in [
            ("generator", ckpt.meta.g_optimizer_steps),
            ("discriminator", ckpt.meta.d_optimizer_steps),
        ] {
            let moments = load_moments(ckpt, net)?;
            let opt = if net == "generator" {
                &mut this.opt_g
            } else {
                &mut this.opt_d
            };
            opt.restore(steps, moments);
        }
        this.progress = Progress {
            iteration: ckpt.meta.iteration,
            epoch: ckpt.meta.epoch,
            cursor: ckpt.meta.cursor,
            phase: ckpt.meta.phase,
            d_updates: ckpt.meta.d_updates,
        };
        Ok(this)
    }

    /// Restores a checkpoint using the configurations stored inside it.
    pub fn from_checkpoint_embedded(ckpt: &Checkpoint) -> Result<Self> {
        let model: ModelConfig = serde_json::from_value(ckpt.meta.model_config.clone())
            .map_err(|e| Error::CheckpointIntegrity(format!("model config: {e}")))?;
        let train: TrainConfig = serde_json::from_value(ckpt.meta.train_config.clone())
            .map_err(|e| Error::CheckpointIntegrity(format!("train config: {e}")))?;
        Self::from_checkpoint(ckpt, model, train)
    }
}

/// `generator` for single-scale parameters, `generator.scale1` etc. for the
/// sub-networks of the multi-scale model; likewise `discriminator.d2`.
fn section_of(net: &str, name: &str) -> String {
    let mut parts = name.split('.');
    let root = parts.next().unwrap_or_default();
    match parts.next() {
        Some(sub) if net == "generator" && (sub.starts_with("scale") || sub == "fusion") => format!("{net}.{sub}"),
        _ if net == "discriminator" && root.len() > 1 => format!("{net}.{root}"),
        _ => net.to_string(),
    }
}

fn load_moments(ckpt: &Checkpoint, net: &str) -> Result<BTreeMap<String, Moments>> {
    let get = |k: &str| ckpt.sections.get(&format!("optimizer.{net}.{k}")).cloned().unwrap_or_default();
    let ms = get("m");
    let vs = get("v");
    if ms.len() != vs.len() {
        return Err(Error::CheckpointIntegrity(format!("{net} optimizer moments are incomplete")));
    }
    ms.into_iter()
        .zip(vs)
        .map(|((nm, m), (nv, v))| {
            if nm != nv {
                return Err(Error::CheckpointIntegrity(format!("optimizer moment names {nm} and {nv} differ")));
            }
            Ok((nm, Moments { m, v }))
        })
        .collect()
}

/// Borrowing inference adapter returned by [`Trainer::dehazer`].
#[derive(Debug, Clone, Copy)]
pub struct TrainedDehazer<'a> {
    trainer: &'a Trainer,
    seed: u64,
}

impl Dehazer for TrainedDehazer<'_> {
    fn dehaze(&self, haze: &Image) -> Result<Image> {
        self.trainer.dehaze_with_seed(haze, self.seed)
    }
}
