//! Training loop, evaluation and the operations behind each CLI
//! subcommand.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{
    build_pairs, holdout, load_for_model, load_pair_images, read_interactions, read_manifest,
    split, stack, DrugRecord, GrayImage, PairExample,
};
use crate::error::{Error, Result};
use crate::eval::{
    ae_similarity, classify_and_report, pr_curve, ssim_classify, AeBaseline, EvalReport,
    SsimConfig, AE_EPOCHS,
};
use crate::network::{AutoencoderSpec, Bindings, ModelState};
use crate::optim::{line_search_lr, OptimizerState, LINE_SEARCH_GRID};
use crate::tensor::Graph;

/// Quarter turns applied to evaluation images when `rotate_eval` is set.
pub const EVAL_ROTATION: i32 = 1;

const META_KEYS: [&str; 3] = ["selected_threshold", "optimizer_step", "epochs_done"];

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing required path: {what}")))
}

/// Manifest, canonical pairs and every image they reference.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<DrugRecord>,
    pub pairs: Vec<PairExample>,
    pub images: BTreeMap<String, GrayImage>,
}

impl Dataset {
    /// Reads the manifest and interactions named in `cfg` and decodes all
    /// referenced images. Fails before any training on a bad input.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let records = read_manifest(required(&cfg.manifest, "manifest")?)?;
        let rows = read_interactions(required(&cfg.interactions, "interactions")?)?;
        let pairs = build_pairs(&records, &rows)?;
        if pairs.is_empty() {
            return Err(Error::Data("the interactions file yields no pairs".into()));
        }
        let images_dir = required(&cfg.images, "images")?;
        let images = load_pair_images(&records, &pairs, images_dir, cfg.image_size)?;
        Ok(Self {
            records,
            pairs,
            images,
        })
    }
}

/// Train pairs split into a fitting part and a validation part, plus the
/// held-out test pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub fit: Vec<PairExample>,
    pub val: Vec<PairExample>,
    pub test: Vec<PairExample>,
}

impl Splits {
    pub fn new(pairs: &[PairExample], cfg: &RunConfig) -> Result<Self> {
        let s = split(pairs, cfg.split, cfg.seed)?;
        let (fit, val) = holdout(&s.train, cfg.val_fraction)?;
        if fit.is_empty() {
            return Err(Error::Data(format!(
                "{} pairs leave no training pairs after splitting",
                pairs.len()
            )));
        }
        Ok(Self {
            fit,
            val,
            test: s.test,
        })
    }
}

/// Structured per-epoch record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: f64,
    pub val_recall: f64,
    pub val_precision: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={} val_f1={} val_recall={} val_precision={}",
            self.epoch, self.loss, self.val_f1, self.val_recall, self.val_precision
        )
    }
}

/// Batches of `[N,1,S,S]` images for the two sides of each pair.
pub fn pair_batch(
    pairs: &[PairExample],
    images: &BTreeMap<String, GrayImage>,
    rotate: i32,
) -> Result<(crate::tensor::Tensor<f32>, crate::tensor::Tensor<f32>)> {
    let get = |id: &str| {
        images
            .get(id)
            .map(|img| img.rotate90(rotate))
            .ok_or_else(|| Error::Data(format!("no image loaded for drug {id}")))
    };
    let a: Vec<GrayImage> = pairs.iter().map(|p| get(&p.a)).collect::<Result<_>>()?;
    let b: Vec<GrayImage> = pairs.iter().map(|p| get(&p.b)).collect::<Result<_>>()?;
    Ok((
        stack(&a.iter().collect::<Vec<_>>())?,
        stack(&b.iter().collect::<Vec<_>>())?,
    ))
}

fn labels(pairs: &[PairExample]) -> Vec<u8> {
    pairs.iter().map(|p| p.label).collect()
}

/// Model, optimizer and bookkeeping for one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: RunConfig,
    pub model: ModelState<f32>,
    pub optimizer: OptimizerState<f32>,
    pub epochs_done: usize,
    pub threshold: Option<f64>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = ModelState::new(config.model_spec(), config.seed)?;
        let optimizer = OptimizerState::new(config.optimizer, config.hyper());
        Ok(Self {
            config,
            model,
            optimizer,
            epochs_done: 0,
            threshold: None,
        })
    }

    fn epoch_rng(&self) -> ChaCha8Rng {
        let mix = 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(self.epochs_done as u64 + 1);
        ChaCha8Rng::seed_from_u64(self.config.seed ^ mix)
    }

    /// One shuffled pass over `pairs`; returns the pair-weighted mean loss.
    pub fn train_epoch(
        &mut self,
        pairs: &[PairExample],
        images: &BTreeMap<String, GrayImage>,
    ) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::Data("no training pairs".into()));
        }
        let mut order: Vec<&PairExample> = pairs.iter().collect();
        order.shuffle(&mut self.epoch_rng());
        let metric = self.config.metric;
        let margin = self.config.margin as f32;
        self.model.set_training(true);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<PairExample> = chunk.iter().map(|&p| p.clone()).collect();
            let (ta, tb) = pair_batch(&batch, images, 0)?;
            let y: Vec<f32> = batch.iter().map(|p| p.label as f32).collect();
            let mut g = Graph::new();
            let mut binds = Bindings::training();
            let a = g.constant(ta);
            let bv = g.constant(tb);
            let d = self
                .model
                .siamese_forward(&mut g, &mut binds, a, bv, metric)?;
            let loss = g.contrastive_loss(d, &y, margin)?;
            let value = g.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {value} at epoch {} batch {b}",
                    self.epochs_done + 1
                )));
            }
            total += value * chunk.len() as f64;
            let grads = g.backward(loss)?;
            self.model.zero_grad();
            binds.accumulate(&grads, self.model.tensors_mut());
            self.optimizer.step(self.model.tensors_mut())?;
        }
        self.epochs_done += 1;
        Ok(total / pairs.len() as f64)
    }

    /// Inference-mode distances, optionally on rotated images.
    pub fn distances(
        &mut self,
        pairs: &[PairExample],
        images: &BTreeMap<String, GrayImage>,
        rotate: i32,
    ) -> Result<Vec<f64>> {
        self.model.set_training(false);
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.config.batch_size) {
            let (a, b) = pair_batch(chunk, images, rotate)?;
            let d = self.model.distances(&a, &b, self.config.metric)?;
            out.extend(d.into_iter().map(f64::from));
        }
        Ok(out)
    }

    /// PR-selected threshold on the first pair set that has both classes;
    /// half the margin when none does.
    pub fn select_threshold(
        &mut self,
        candidates: &[&[PairExample]],
        images: &BTreeMap<String, GrayImage>,
    ) -> Result<f64> {
        for pairs in candidates {
            let y = labels(pairs);
            if y.contains(&0) && y.contains(&1) {
                let d = self.distances(pairs, images, 0)?;
                return Ok(pr_curve(&d, &y)?.selected_threshold);
            }
        }
        Ok(self.config.margin / 2.0)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut config = self.config.to_text();
        if let Some(t) = self.threshold {
            config.push_str(&format!("selected_threshold = {t}\n"));
        }
        config.push_str(&format!("optimizer_step = {}\n", self.optimizer.step_count));
        config.push_str(&format!("epochs_done = {}\n", self.epochs_done));
        let mut tensors: Vec<(String, crate::tensor::Tensor<f32>)> = self
            .model
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        tensors.extend(
            self.optimizer
                .tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone())),
        );
        Checkpoint { config, tensors }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (config, meta) = RunConfig::parse_with_extras(&ck.config, &META_KEYS)?;
        let mut trainer = Self::new(config)?;
        let meta_num = |k: &str| -> Result<Option<f64>> {
            meta.get(k)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Checkpoint(format!("{k}: cannot parse {v:?}")))
                })
                .transpose()
        };
        trainer.threshold = meta_num("selected_threshold")?;
        trainer.optimizer.step_count = meta_num("optimizer_step")?.unwrap_or(0.0) as u64;
        trainer.epochs_done = meta_num("epochs_done")?.unwrap_or(0.0) as usize;

        let mut stored: BTreeMap<&str, &crate::tensor::Tensor<f32>> = BTreeMap::new();
        for (name, t) in &ck.tensors {
            if name.starts_with(OptimizerState::<f32>::PREFIX) {
                trainer.optimizer.restore(name, t.clone())?;
            } else if stored.insert(name, t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        for (name, dst) in trainer.model.tensors_mut() {
            let src = stored
                .remove(name.as_str())
                .ok_or_else(|| Error::Incompatible(format!("checkpoint has no tensor {name}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::Incompatible(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Incompatible(format!("unexpected tensor {extra}")));
        }
        Ok(trainer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub splits: Splits,
    pub log: Vec<EpochLog>,
}

fn val_metrics(
    trainer: &mut Trainer,
    splits: &Splits,
    images: &BTreeMap<String, GrayImage>,
) -> Result<(f64, EvalReport)> {
    let tau = trainer.select_threshold(&[&splits.val, &splits.fit], images)?;
    let pairs = if splits.val.is_empty() {
        &splits.fit
    } else {
        &splits.val
    };
    let d = trainer.distances(pairs, images, 0)?;
    let r = classify_and_report(
        &d,
        &labels(pairs),
        tau,
        trainer.config.seed,
        trainer.epochs_done,
    )?;
    Ok((tau, r))
}

fn run_epochs(
    trainer: &mut Trainer,
    splits: &Splits,
    images: &BTreeMap<String, GrayImage>,
    epochs: usize,
    checkpoint: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    let mut log = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let loss = trainer.train_epoch(&splits.fit, images)?;
        let (tau, r) = val_metrics(trainer, splits, images)?;
        trainer.threshold = Some(tau);
        let entry = EpochLog {
            epoch: trainer.epochs_done,
            loss,
            val_f1: r.f1,
            val_recall: r.recall,
            val_precision: r.precision,
        };
        log::info!("{entry}");
        on_epoch(&entry);
        log.push(entry);
        if let Some(path) = checkpoint {
            if trainer
                .epochs_done
                .is_multiple_of(trainer.config.checkpoint_every)
            {
                trainer.save(path)?;
            }
        }
    }
    Ok(log)
}

/// Full training run: split, optional learning-rate search, the epoch loop
/// with periodic checkpoints, and a final checkpoint with the selected
/// threshold.
pub fn train(
    config: RunConfig,
    dataset: &Dataset,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let splits = Splits::new(&dataset.pairs, &config)?;
    let mut config = config;
    if config.line_search && config.epochs > 0 {
        let probe_epochs = config.epochs.min(2);
        let lr = line_search_lr(&LINE_SEARCH_GRID, |lr| {
            let mut probe_cfg = config.clone();
            probe_cfg.lr = Some(lr);
            let mut probe = Trainer::new(probe_cfg)?;
            for _ in 0..probe_epochs {
                probe.train_epoch(&splits.fit, &dataset.images)?;
            }
            let (_, r) = val_metrics(&mut probe, &splits, &dataset.images)?;
            log::info!("line_search lr={lr} val_f1={}", r.f1);
            Ok(r.f1)
        })?;
        config.lr = Some(lr);
    }
    let checkpoint = config.checkpoint.clone();
    let epochs = config.epochs;
    let mut trainer = Trainer::new(config)?;
    let log = run_epochs(
        &mut trainer,
        &splits,
        &dataset.images,
        epochs,
        checkpoint.as_deref(),
        on_epoch,
    )?;
    if trainer.threshold.is_none() {
        let tau = trainer.select_threshold(&[&splits.val, &splits.fit], &dataset.images)?;
        trainer.threshold = Some(tau);
    }
    if let Some(path) = &checkpoint {
        trainer.save(path)?;
    }
    Ok(TrainOutcome {
        trainer,
        splits,
        log,
    })
}

/// Scores `pairs` at `threshold`, on rotated images when `rotate_eval`.
pub fn evaluate(
    trainer: &mut Trainer,
    pairs: &[PairExample],
    images: &BTreeMap<String, GrayImage>,
    threshold: f64,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Data("no pairs to evaluate".into()));
    }
    let rotate = if trainer.config.rotate_eval {
        EVAL_ROTATION
    } else {
        0
    };
    let d = trainer.distances(pairs, images, rotate)?;
    classify_and_report(
        &d,
        &labels(pairs),
        threshold,
        trainer.config.seed,
        trainer.epochs_done,
    )
}

/// Command-line overrides applied on top of a config file or checkpoint.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub entries: Vec<(String, String)>,
}

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_owned(), value.to_string()));
    }

    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        for (k, v) in &self.entries {
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }

    fn touches_model(&self) -> bool {
        self.entries.iter().any(|(k, _)| {
            matches!(
                k.as_str(),
                "image_size" | "stn" | "conv_filters" | "kernel" | "pool" | "fc_sizes"
            )
        })
    }
}

/// Config file (or defaults) with overrides applied.
pub fn resolve_config(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Restores a trainer from its checkpoint, applying non-architectural
/// overrides. A config file or override describing a different model is an
/// incompatibility.
pub fn restore_trainer(
    checkpoint: &Path,
    file: Option<&Path>,
    overrides: &Overrides,
) -> Result<Trainer> {
    let mut trainer = Trainer::load(checkpoint)?;
    let stored = trainer.config.model_spec();
    let mut cfg = match file {
        Some(p) => RunConfig::load(p)?,
        None => trainer.config.clone(),
    };
    overrides.apply(&mut cfg)?;
    if (file.is_some() || overrides.touches_model()) && cfg.model_spec() != stored {
        return Err(Error::Incompatible(format!(
            "{} was trained with a different model layout",
            checkpoint.display()
        )));
    }
    cfg.validate()?;
    trainer.config = RunConfig {
        checkpoint: Some(checkpoint.to_path_buf()),
        ..cfg
    };
    Ok(trainer)
}

/// Evaluates a checkpoint on the test split of the configured dataset.
/// The threshold is the override when given, else the stored selection.
pub fn cmd_eval(trainer: &mut Trainer) -> Result<EvalReport> {
    let dataset = Dataset::load(&trainer.config)?;
    let splits = Splits::new(&dataset.pairs, &trainer.config)?;
    let threshold = match (trainer.config.threshold, trainer.threshold) {
        (Some(t), _) => t,
        (None, Some(t)) => t,
        (None, None) => trainer.select_threshold(&[&splits.val, &splits.fit], &dataset.images)?,
    };
    let report = evaluate(trainer, &splits.test, &dataset.images, threshold)?;
    if let Some(path) = &trainer.config.report {
        write_report(path, &report)?;
    }
    Ok(report)
}

/// Writes JSON for `.json` paths and `name=value` text otherwise.
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let body = if path.extension().is_some_and(|e| e == "json") {
        report.to_json() + "\n"
    } else {
        report.to_text()
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub distance: f64,
    pub threshold: f64,
    pub interact: bool,
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "distance={} threshold={} interact={}",
            self.distance, self.threshold, self.interact
        )
    }
}

/// Distance between two image files and the thresholded verdict.
pub fn cmd_predict(trainer: &mut Trainer, a: &Path, b: &Path) -> Result<Prediction> {
    let size = trainer.model.input_size();
    let ia = load_for_model(a, size)?;
    let ib = load_for_model(b, size)?;
    let threshold = trainer
        .config
        .threshold
        .or(trainer.threshold)
        .unwrap_or(trainer.config.margin / 2.0);
    trainer.model.set_training(false);
    let d = trainer
        .model
        .distances(&ia.to_tensor(), &ib.to_tensor(), trainer.config.metric)?[0] as f64;
    Ok(Prediction {
        distance: d,
        threshold,
        interact: d >= threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Ssim,
    Autoencoder,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssim" => Ok(BaselineKind::Ssim),
            "autoencoder" | "ae" => Ok(BaselineKind::Autoencoder),
            other => Err(Error::Config(format!("unknown baseline {other:?}"))),
        }
    }
}

/// Runs a baseline on the configured dataset's test split.
pub fn cmd_baseline(cfg: &RunConfig, kind: BaselineKind) -> Result<EvalReport> {
    cfg.validate()?;
    let dataset = Dataset::load(cfg)?;
    let s = split(&dataset.pairs, cfg.split, cfg.seed)?;
    if s.test.is_empty() {
        return Err(Error::Data("the split leaves no test pairs".into()));
    }
    let report = match kind {
        BaselineKind::Ssim => {
            ssim_classify(&s.test, &dataset.images, &SsimConfig::default(), cfg.seed)?.0
        }
        BaselineKind::Autoencoder => {
            let spec = AutoencoderSpec::narrowed(cfg.ae_width_divisor);
            let mut ae = AeBaseline::new(spec, cfg.image_size, cfg.seed)?;
            let mut ids: Vec<&str> = s
                .train
                .iter()
                .flat_map(|p| [p.a.as_str(), p.b.as_str()])
                .collect();
            ids.sort_unstable();
            ids.dedup();
            let train_images: Vec<&GrayImage> = ids.iter().map(|id| &dataset.images[*id]).collect();
            if train_images.is_empty() {
                return Err(Error::Data("the split leaves no training images".into()));
            }
            ae.train(&train_images, AE_EPOCHS, cfg.batch_size, cfg.seed)?;
            ae_similarity(&ae, &s.test, &dataset.images, cfg.criterion, cfg.seed)?.0
        }
    };
    if let Some(path) = &cfg.report {
        write_report(path, &report)?;
    }
    Ok(report)
}
