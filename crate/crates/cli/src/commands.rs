//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use dehaze_core::dataset::{is_image_file, PairEntry};
use dehaze_core::haze::{synthesize_pair, DepthSource};
use dehaze_core::{
    build_manifest, evaluate_dataset, read_image, write_image, Checkpoint, Dehazer, Domain, Error, Identity, Image,
    MatchRule, MetricsReport, PairManifest, Phase, RunStatus, Split, StepRecord, TrainObserver, Trainer,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{self, ValidationRow};
use crate::{DehazeArgs, EvaluateArgs, FinetuneArgs, HazemapArgs, ManifestArgs, RuleArg, SynthesizeArgs, TrainArgs};

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const VAL_METRICS: &str = "val_metrics.tsv";

/// Some inputs of a batch command failed; the others were processed.
#[derive(Debug)]
pub struct Failures {
    pub failed: usize,
    pub total: usize,
    /// At least one failure was numerical rather than a data problem.
    pub numeric: bool,
}

impl fmt::Display for Failures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} of {} input(s) failed", self.failed, self.total)
    }
}

impl std::error::Error for Failures {}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))?;
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Image files of a directory in name order, or the single file given.
fn image_inputs(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| io_err(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyDataset(format!("no images in {}", input.display())).into());
        }
        Ok(files)
    } else if input.is_file() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(io_err(input, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")).into())
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_trainer(path: &Path) -> anyhow::Result<Trainer> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(Trainer::from_checkpoint_embedded(&ckpt).with_context(|| format!("restoring {}", path.display()))?)
}

fn load_manifest(path: &Path) -> anyhow::Result<PairManifest> {
    let m = PairManifest::load(path).with_context(|| format!("reading manifest {}", path.display()))?;
    if m.is_empty() {
        return Err(Error::EmptyDataset(format!("manifest {} has no pairs", path.display())).into());
    }
    Ok(m)
}

#[derive(Debug, Serialize)]
struct RunMetadata<'a> {
    command: &'a str,
    version: &'a str,
    /// Digest of the run configuration, when the command takes one.
    config_hash: Option<String>,
    /// Digest of the model configuration (matches the checkpoint's).
    model_config_hash: Option<String>,
    seed: u64,
    checkpoint: Option<String>,
}

impl<'a> RunMetadata<'a> {
    fn new(command: &'a str, seed: u64) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: None,
            model_config_hash: None,
            seed,
            checkpoint: None,
        }
    }

    fn with_checkpoint(mut self, path: &Path, trainer: &Trainer) -> anyhow::Result<Self> {
        self.checkpoint = Some(path.display().to_string());
        self.model_config_hash = Some(trainer.model_config().config_hash()?);
        Ok(self)
    }

    /// Written as `<dir>/<command>.json`.
    fn write(&self, dir: &Path) -> anyhow::Result<()> {
        create_dir(dir)?;
        write_file(&dir.join(format!("{}.json", self.command)), serde_json::to_string_pretty(self)? + "\n")
    }
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

// ---------------------------------------------------------------------------
// config / synthesize / manifest
// ---------------------------------------------------------------------------

pub fn print_config() -> anyhow::Result<()> {
    print!("{}", RunConfig::default().to_toml()?);
    Ok(())
}

fn range(v: &[f64]) -> (f64, f64) {
    (v[0], v[1])
}

pub fn synthesize(a: SynthesizeArgs) -> anyhow::Result<()> {
    let mut meta = RunMetadata::new("synthesize", a.seed);
    let mut sampler = match &a.config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            meta.config_hash = Some(cfg.config_hash()?);
            cfg.synthesize
        }
        None => Default::default(),
    };
    if let Some(v) = &a.alpha {
        sampler.alpha_range = range(v);
    }
    if let Some(v) = &a.beta {
        sampler.beta_range = range(v);
    }
    if let Some(v) = a.depth_base {
        sampler.depth.base = v;
    }
    if let Some(v) = a.depth_ramp {
        sampler.depth.ramp = v;
    }
    // Validate the ranges before touching any file.
    sampler.sample(a.seed, 0)?;

    let inputs = image_inputs(&a.clear)?;
    let (haze_dir, clear_dir) = (a.out.join("haze"), a.out.join("clear"));
    create_dir(&haze_dir)?;
    create_dir(&clear_dir)?;
    let mut manifest = PairManifest {
        entries: Vec::new(),
        root: a.out.clone(),
        split: Split::Train,
    };
    let mut params = String::from("id\talpha\tbeta\n");
    let mut seen = BTreeSet::new();
    let mut failed = 0;
    for (index, path) in inputs.iter().enumerate() {
        let id = stem(path);
        if !seen.insert(id.clone()) {
            log::error!("{}: another input already uses the name {id}", path.display());
            failed += 1;
            continue;
        }
        let result = (|| -> dehaze_core::Result<()> {
            let p = sampler.sample(a.seed, index as u64)?;
            let clear = read_image(path)?.signed_to_unit()?;
            let (haze, clear) = synthesize_pair(&clear, &p, DepthSource::Synthetic(sampler.depth))?;
            write_image(&haze_dir.join(format!("{id}.png")), &haze)?;
            write_image(&clear_dir.join(format!("{id}.png")), &clear)?;
            params.push_str(&format!("{id}\t{}\t{}\n", p.alpha[0], p.beta));
            Ok(())
        })();
        match result {
            Ok(()) => manifest.entries.push(PairEntry {
                id: id.clone(),
                haze_path: PathBuf::from("haze").join(format!("{id}.png")),
                clear_path: PathBuf::from("clear").join(format!("{id}.png")),
            }),
            Err(e) => {
                log::error!("{}: {e}", path.display());
                failed += 1;
            }
        }
    }
    manifest.save(&a.out.join("manifest.tsv"))?;
    write_file(&a.out.join("params.tsv"), params)?;
    meta.write(&a.out)?;
    log::info!("synthesized {} pair(s) into {}", manifest.len(), a.out.display());
    if failed > 0 {
        return Err(Failures {
            failed,
            total: inputs.len(),
            numeric: false,
        }
        .into());
    }
    Ok(())
}

pub fn manifest(a: ManifestArgs) -> anyhow::Result<()> {
    let rule = match a.rule {
        RuleArg::Stem => MatchRule::Stem,
        RuleArg::ClearId => MatchRule::ClearIdPrefix { seed: a.seed },
    };
    // Absolute paths keep the manifest valid wherever it is written.
    let abs = |p: &Path| fs::canonicalize(p).map_err(|e| io_err(p, e));
    let m = build_manifest(&abs(&a.haze)?, &abs(&a.clear)?, rule)?;
    if m.is_empty() {
        return Err(Error::EmptyDataset("no matching haze/clear pairs".into()).into());
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    m.save(&a.out)?;
    RunMetadata::new("manifest", a.seed).write(parent_dir(&a.out))?;
    log::info!("{} pair(s) written to {}", m.len(), a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train / finetune
// ---------------------------------------------------------------------------

/// Streams the step log, writes epoch checkpoints and validation metrics, and
/// enforces the step budget.
struct RunObserver {
    out: PathBuf,
    log: BufWriter<File>,
    val: Option<PairManifest>,
    val_rows: Vec<ValidationRow>,
    seed: u64,
    max_steps: Option<u64>,
    checkpoint_every: u64,
    steps: u64,
    since_save: u64,
}

impl RunObserver {
    fn new(out: &Path, val: Option<PairManifest>, seed: u64, max_steps: Option<u64>, checkpoint_every: u64) -> anyhow::Result<Self> {
        let path = out.join(TRAIN_LOG);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            log: BufWriter::new(file),
            val,
            val_rows: report::read_validation(&out.join(VAL_METRICS))?,
            seed,
            max_steps,
            checkpoint_every,
            steps: 0,
            since_save: 0,
        })
    }

    fn budget_exhausted(&self) -> bool {
        self.max_steps.is_some_and(|m| self.steps >= m)
    }
}

impl TrainObserver for RunObserver {
    fn on_step(&mut self, record: &StepRecord) -> dehaze_core::Result<()> {
        serde_json::to_writer(&mut self.log, record)?;
        self.log
            .write_all(b"\n")
            .and_then(|_| self.log.flush())
            .map_err(|e| io_err(&self.out.join(TRAIN_LOG), e))?;
        self.steps += 1;
        self.since_save += 1;
        let l = &record.losses;
        log::info!(
            "step {:>6} {:?} epoch {} {} {}x{}  total {:.4}  adv {:.4}  l1 {:.4}  ssim {:.4}  d {:.4}{}",
            record.iteration,
            record.phase,
            record.epoch,
            record.id,
            record.height,
            record.width,
            l.total,
            l.adversarial_g,
            l.l1,
            l.ssim_loss,
            l.adversarial_d,
            if record.d_updated { "  [D]" } else { "" }
        );
        Ok(())
    }

    fn on_epoch_end(&mut self, trainer: &Trainer) -> dehaze_core::Result<()> {
        let p = trainer.progress();
        let phase = phase_name(p.phase);
        let path = self.out.join(format!("{phase}-epoch{:04}.ckpt", p.epoch));
        trainer.to_checkpoint()?.save(&path)?;
        log::info!("epoch {} of {phase} done, saved {}", p.epoch, path.display());
        if let Some(val) = &self.val {
            let r = evaluate_dataset(&trainer.dehazer(self.seed), val)?;
            log::info!(
                "validation after {phase} epoch {}: PSNR {:.3} dB  SSIM {:.4}",
                p.epoch,
                r.means.psnr,
                r.means.ssim
            );
            self.val_rows.push(ValidationRow {
                label: format!("{phase}-{}", p.epoch),
                iteration: p.iteration,
                means: r.means,
            });
            report::write_validation(&self.out.join(VAL_METRICS), &self.val_rows)?;
        }
        Ok(())
    }

    fn should_stop(&self) -> bool {
        self.budget_exhausted() || (self.checkpoint_every > 0 && self.since_save >= self.checkpoint_every)
    }
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Pretrain => "pretrain",
        Phase::Iff => "iff",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Schedule {
    /// Pretraining then IFF as configured.
    Full,
    /// IFF only.
    Iff,
}

fn prepare_run(
    command: &str,
    cfg: &RunConfig,
    resumed_from: Option<&Path>,
) -> anyhow::Result<(dehaze_core::ModelConfig, PairManifest, Option<PairManifest>)> {
    let model = cfg.model.model_config()?;
    cfg.train.validate()?;
    let Some(train_path) = &cfg.data.train_manifest else {
        bail!("the configuration has no data.train_manifest");
    };
    let data = load_manifest(train_path)?;
    data.check_paths()?;
    let val = cfg.data.val_manifest.as_deref().map(load_manifest).transpose()?;
    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("config.toml"), cfg.to_toml()?)?;
    let mut meta = RunMetadata::new(command, cfg.train.seed);
    meta.config_hash = Some(cfg.config_hash()?);
    meta.model_config_hash = Some(model.config_hash()?);
    meta.checkpoint = resumed_from.map(|p| p.display().to_string());
    meta.write(&cfg.output_dir)?;
    Ok((model, data, val))
}

fn run_schedule(
    trainer: &mut Trainer,
    cfg: &RunConfig,
    data: &PairManifest,
    val: Option<PairManifest>,
    max_steps: Option<u64>,
    schedule: Schedule,
) -> anyhow::Result<()> {
    let out = &cfg.output_dir;
    let mut obs = RunObserver::new(out, val, cfg.train.seed, max_steps, cfg.checkpoint_every)?;
    let last = out.join(LAST_CHECKPOINT);
    loop {
        let status = match schedule {
            Schedule::Full => trainer.fit(data, &mut obs)?,
            Schedule::Iff => trainer.finetune_iff(data, &mut obs)?,
        };
        trainer.to_checkpoint()?.save(&last)?;
        if status == RunStatus::Completed {
            log::info!("training complete after {} step(s); {}", trainer.progress().iteration, last.display());
            break;
        }
        if obs.budget_exhausted() {
            log::info!(
                "step budget reached at iteration {}; resume with --resume {}",
                trainer.progress().iteration,
                last.display()
            );
            break;
        }
        log::info!("checkpoint at iteration {}: {}", trainer.progress().iteration, last.display());
        obs.since_save = 0;
    }
    if obs.val_rows.len() >= 2 {
        report::plot_metrics(out, &obs.val_rows, "validation")?;
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let (model, data, val) = prepare_run("train", &cfg, a.resume.as_deref())?;
    if cfg.train.pretrain_size.is_none() && !cfg.train.iff_enabled {
        bail!("nothing to do: pretraining and IFF are both disabled");
    }
    let mut trainer = match &a.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            let t = Trainer::from_checkpoint(&ckpt, model, cfg.train.clone())
                .with_context(|| format!("resuming from {}", p.display()))?;
            log::info!("resuming at iteration {} ({:?})", t.progress().iteration, t.progress().phase);
            t
        }
        None => Trainer::new(model, cfg.train.clone())?,
    };
    run_schedule(&mut trainer, &cfg, &data, val, a.max_steps, Schedule::Full)
}

pub fn finetune(a: FinetuneArgs) -> anyhow::Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let (model, data, val) = prepare_run("finetune", &cfg, Some(&a.checkpoint))?;
    let ckpt = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let mut trainer = Trainer::from_checkpoint(&ckpt, model, cfg.train.clone())
        .with_context(|| format!("restoring {}", a.checkpoint.display()))?;
    run_schedule(&mut trainer, &cfg, &data, val, a.max_steps, Schedule::Iff)
}

// ---------------------------------------------------------------------------
// dehaze / hazemap
// ---------------------------------------------------------------------------

/// Runs `f` over every input, logging and counting failures instead of stopping.
fn for_each_input(
    inputs: &[PathBuf],
    out_dir: &Path,
    mut f: impl FnMut(&Path, &Path) -> dehaze_core::Result<()>,
) -> anyhow::Result<()> {
    create_dir(out_dir)?;
    let mut seen = BTreeSet::new();
    let mut failed = 0;
    let mut numeric = false;
    for path in inputs {
        let name = stem(path);
        if !seen.insert(name.clone()) {
            log::error!("{}: output name {name}.png is already taken by another input", path.display());
            failed += 1;
            continue;
        }
        let target = out_dir.join(format!("{name}.png"));
        match f(path, &target) {
            Ok(()) => log::info!("{} -> {}", path.display(), target.display()),
            Err(e) => {
                log::error!("{}: {e}", path.display());
                numeric |= e.is_numeric_error();
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failures {
            failed,
            total: inputs.len(),
            numeric,
        }
        .into());
    }
    Ok(())
}

pub fn dehaze(a: DehazeArgs) -> anyhow::Result<()> {
    let trainer = load_trainer(&a.checkpoint)?;
    let inputs = image_inputs(&a.input)?;
    RunMetadata::new("dehaze", a.seed).with_checkpoint(&a.checkpoint, &trainer)?.write(&a.out)?;
    for_each_input(&inputs, &a.out, |src, dst| {
        let haze = read_image(src)?;
        let clear = trainer.dehaze_with_seed(&haze, a.seed)?;
        write_image(dst, &clear)
    })
}

/// `M` is unbounded; clamping it to the network range makes the standard byte
/// map `(v + 1) * 127.5` send 0 to mid-gray, -1 to black and +1 to white.
fn haze_map_picture(m: &Image) -> dehaze_core::Result<Image> {
    m.map(Domain::UnitSigned, |v| v.clamp(-1.0, 1.0))
}

pub fn hazemap(a: HazemapArgs) -> anyhow::Result<()> {
    let trainer = load_trainer(&a.checkpoint)?;
    let haze = read_image(&a.input)?;
    let img = haze_map_picture(&trainer.haze_map(&haze, a.seed)?)?;
    RunMetadata::new("hazemap", a.seed)
        .with_checkpoint(&a.checkpoint, &trainer)?
        .write(parent_dir(&a.out))?;
    write_image(&a.out, &img)?;
    log::info!("haze map written to {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn write_report(out: &Path, report: &MetricsReport) -> anyhow::Result<()> {
    create_dir(out)?;
    write_file(&out.join("metrics.tsv"), report.to_tsv())?;
    write_file(&out.join("summary.txt"), report.summary())?;
    write_file(&out.join("metrics.json"), serde_json::to_string_pretty(report)?)?;
    print!("{}", report.summary());
    Ok(())
}

fn score(dehazer: &dyn Dehazer, manifest: &PairManifest) -> anyhow::Result<MetricsReport> {
    let report = evaluate_dataset(dehazer, manifest)?;
    if report.n == 0 {
        return Err(Error::EmptyDataset("no pair could be scored".into()).into());
    }
    Ok(report)
}

pub fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let meta = RunMetadata::new("evaluate", a.seed);
    match &a.checkpoint {
        None => {
            meta.write(&a.out)?;
            write_report(&a.out, &score(&Identity, &manifest)?)
        }
        Some(p) if p.is_dir() => {
            RunMetadata {
                checkpoint: Some(p.display().to_string()),
                ..meta
            }
            .write(&a.out)?;
            evaluate_series(p, &manifest, &a)
        }
        Some(p) => {
            let trainer = load_trainer(p)?;
            meta.with_checkpoint(p, &trainer)?.write(&a.out)?;
            write_report(&a.out, &score(&trainer.dehazer(a.seed), &manifest)?)
        }
    }
}

/// Scores every checkpoint of a run directory, ordered by iteration.
fn evaluate_series(dir: &Path, manifest: &PairManifest, a: &EvaluateArgs) -> anyhow::Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt") && p.file_name().is_some_and(|n| n != LAST_CHECKPOINT))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset(format!("no checkpoints in {}", dir.display())).into());
    }
    let mut rows = Vec::new();
    for p in &paths {
        let trainer = load_trainer(p)?;
        let r = score(&trainer.dehazer(a.seed), manifest)?;
        log::info!("{}: PSNR {:.3} dB  SSIM {:.4}", p.display(), r.means.psnr, r.means.ssim);
        rows.push(ValidationRow {
            label: stem(p),
            iteration: trainer.progress().iteration,
            means: r.means,
        });
    }
    rows.sort_by(|x, y| x.iteration.cmp(&y.iteration).then_with(|| x.label.cmp(&y.label)));
    create_dir(&a.out)?;
    report::write_validation(&a.out.join("epoch_metrics.tsv"), &rows)?;
    if rows.len() >= 2 {
        report::plot_metrics(&a.out, &rows, "checkpoints")?;
    } else {
        log::warn!("a single checkpoint gives no curve; plots skipped");
    }
    print!("{}", report::validation_table(&rows));
    Ok(())
}
