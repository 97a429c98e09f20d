//! Training: stratified train/validation split, the channel protocol, summed
//! two-head cross-entropy, momentum SGD with early stopping, and checkpoints.
//!
//! Channel protocol: every epoch each training sample is presented once,
//! through the red or the blue channel (drawn per sample and epoch) and the
//! full augmentation pipeline. Validation always uses the green channel with
//! no augmentation.
//!
//! All randomness is keyed: the split and the per-epoch shuffle derive from
//! `TrainConfig::seed`, augmentation from `(augment.seed, epoch, sample)`.
//! Batch preparation runs in parallel but produces the serial schedule, so a
//! run is reproducible regardless of thread count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::augment::{pipeline, prepare, stream_rng, AugmentConfig, AugmentError, Channel, ChannelMode};
use crate::config::{self, ConfigError, Ini, IniSection, SectionReader, SectionWriter};
use crate::metrics::{confusion, precision_recall_f1};
use crate::net::{collect_grads, HeadMode, Logits, Mode, NetError, Network, NetworkConfig, ParamKind};
use crate::scene::Sample;
use crate::tensor::{softmax_rows, DType, Sgd, Tape, Tensor, TensorError, Var};
use crate::viewsphere::{bin_phase1, ViewClass, PHASE1_AZ_CLASSES, PHASE2_AZ_CLASSES, PHASE2_EL_CLASSES};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VSPC";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,val_az_acc,val_el_acc";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("class cells without samples: {}", format_cells(.0))]
    EmptyCells(Vec<ViewClass>),
    #[error("no training samples")]
    NoSamples,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}; parameter norms: {}", format_norms(.norms))]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: f64,
        norms: Vec<(String, f64)>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

fn format_cells(cells: &[ViewClass]) -> String {
    let parts: Vec<String> = cells.iter().map(|c| format!("({}, {})", c.az_class, c.el_class)).collect();
    parts.join(", ")
}

fn format_norms(norms: &[(String, f64)]) -> String {
    let parts: Vec<String> = norms.iter().map(|(n, v)| format!("{n}={v:.4e}")).collect();
    parts.join(", ")
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopMetric {
    /// Lowest validation loss.
    ValLoss,
    /// Highest mean of the heads' macro F1 on validation.
    ValF1,
}

impl StopMetric {
    pub fn name(self) -> &'static str {
        match self {
            StopMetric::ValLoss => "val_loss",
            StopMetric::ValF1 => "val_f1",
        }
    }

    fn better(self, candidate: f64, best: f64) -> bool {
        match self {
            StopMetric::ValLoss => candidate < best,
            StopMetric::ValF1 => candidate > best,
        }
    }

    fn worst(self) -> f64 {
        match self {
            StopMetric::ValLoss => f64::INFINITY,
            StopMetric::ValF1 => f64::NEG_INFINITY,
        }
    }
}

impl std::str::FromStr for StopMetric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "val_loss" => Ok(StopMetric::ValLoss),
            "val_f1" => Ok(StopMetric::ValF1),
            _ => Err(format!("unknown stop metric {s:?} (expected val_loss or val_f1)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub stop_metric: StopMetric,
    pub val_fraction: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            patience: 10,
            stop_metric: StopMetric::ValLoss,
            val_fraction: 0.2,
            seed: 0,
            augment: AugmentConfig::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)");
        }
        Sgd::<f32>::new(self.learning_rate, self.momentum).map_err(|e| TrainError::Config(e.to_string()))?;
        self.augment.validate()?;
        self.network.validate()?;
        Ok(())
    }

    /// `[train]`, `[network]` and `[augment]` sections.
    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::default();
        ini.push(self.to_section());
        ini.push(self.network.to_section());
        ini.push(self.augment.to_section());
        ini
    }

    pub fn from_ini_sections(ini: &Ini, base: &Self) -> config::Result<Self> {
        let mut cfg = TrainConfig::from_ini(ini, base)?;
        cfg.network = NetworkConfig::from_ini(ini, &base.network)?;
        cfg.augment = AugmentConfig::from_ini(ini, &base.augment)?;
        Ok(cfg)
    }
}

impl IniSection for TrainConfig {
    const SECTION: &'static str = "train";
    fn write(&self, w: &mut SectionWriter) {
        w.put("epochs", self.epochs)
            .put("batch_size", self.batch_size)
            .float("learning_rate", self.learning_rate)
            .float("momentum", self.momentum)
            .put("patience", self.patience)
            .put("stop_metric", self.stop_metric.name())
            .float("val_fraction", self.val_fraction)
            .put("seed", self.seed);
    }
    fn read(&mut self, r: &mut SectionReader) -> config::Result<()> {
        let mut metric = self.stop_metric.name().to_string();
        r.get("epochs", &mut self.epochs)?
            .get("batch_size", &mut self.batch_size)?
            .get("learning_rate", &mut self.learning_rate)?
            .get("momentum", &mut self.momentum)?
            .get("patience", &mut self.patience)?
            .get("stop_metric", &mut metric)?
            .get("val_fraction", &mut self.val_fraction)?
            .get("seed", &mut self.seed)?;
        self.stop_metric = metric.parse().map_err(|msg| ConfigError::Value {
            section: "train".into(),
            key: "stop_metric".into(),
            msg,
        })?;
        Ok(())
    }
}

/// Stratified split over `(az_class, el_class)` cells. Each cell of `n`
/// samples sends `min(⌈fraction·n⌉, n − 1)` to validation, so every cell
/// keeps at least one training sample. The expected cells are all pairs of
/// the azimuth and elevation classes that occur; any such pair without
/// samples is an error. Returns sorted `(train, val)` indices.
pub fn split_train_val(labels: &[ViewClass], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::Config("val_fraction must be in (0, 1)".into()));
    }
    if labels.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let mut cells: BTreeMap<ViewClass, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        cells.entry(c).or_default().push(i);
    }
    let azs: std::collections::BTreeSet<_> = labels.iter().map(|c| c.az_class).collect();
    let els: std::collections::BTreeSet<_> = labels.iter().map(|c| c.el_class).collect();
    let empty: Vec<ViewClass> = azs
        .iter()
        .flat_map(|&a| els.iter().map(move |&e| ViewClass { az_class: a, el_class: e }))
        .filter(|c| !cells.contains_key(c))
        .collect();
    if !empty.is_empty() {
        return Err(TrainError::EmptyCells(empty));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for members in cells.values_mut() {
        members.shuffle(&mut rng);
        let n = members.len();
        // the epsilon keeps e.g. 0.2·10 from rounding up to 3
        let k = ((fraction * n as f64 - 1e-9).ceil() as usize).min(n - 1);
        val.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Class targets of a sample for each head of `mode`.
pub fn head_targets(sample: &Sample, mode: HeadMode) -> Vec<usize> {
    match mode {
        HeadMode::Dual => vec![sample.labels.az_class, sample.labels.el_class],
        HeadMode::Single => vec![bin_phase1(sample.viewpoint).az_class],
    }
}

/// Sum of the per-head mean cross-entropies. `targets[h]` holds the labels
/// of head `h` for the batch.
pub fn loss(tape: &mut Tape<f32>, logits: Logits, targets: &[Vec<usize>]) -> Result<Var> {
    let vars = logits.vars();
    if vars.len() != targets.len() {
        return Err(TrainError::Config(format!("{} heads but {} target lists", vars.len(), targets.len())));
    }
    let mut total: Option<Var> = None;
    for (v, t) in vars.into_iter().zip(targets) {
        let ce = tape.softmax_cross_entropy(v, t)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, ce)?,
            None => ce,
        });
    }
    total.ok_or_else(|| TrainError::Config("network has no heads".into()))
}

/// Stacks `[1, H, W]` tensors into `[N, 1, H, W]`.
pub fn stack(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = items.first().ok_or(TrainError::NoSamples)?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for t in items {
        if t.shape() != first.shape() {
            return Err(TrainError::Config(format!("mixed input shapes {:?} and {:?}", first.shape(), t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::from_vec(&shape, data)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_az_acc: f64,
    /// 0 for single-head networks.
    pub val_el_acc: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.val_loss, self.val_az_acc, self.val_el_acc
        )
    }
}

pub fn metrics_csv(log: &[EpochMetrics]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for m in log {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

/// Eval-mode scores of a prepared set.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Accuracy per head.
    pub accuracy: Vec<f64>,
    /// Mean over heads of the macro F1.
    pub macro_f1: f64,
    /// Arg-max prediction per head, per sample.
    pub predictions: Vec<Vec<usize>>,
}

/// Evaluates `inputs` (each `[1, H, W]`) against per-head `targets`.
pub fn evaluate(net: &Network<f32>, inputs: &[Tensor<f32>], targets: &[Vec<usize>], batch_size: usize) -> Result<Evaluation> {
    let heads = net.config().heads();
    let mut predictions = vec![Vec::with_capacity(inputs.len()); heads.len()];
    let mut loss_sum = 0.0;
    for (b, chunk) in inputs.chunks(batch_size.max(1)).enumerate() {
        let start = b * batch_size.max(1);
        let logits = net.logits(&stack(chunk)?)?;
        for (h, l) in logits.iter().enumerate() {
            let probs = softmax_rows(l)?;
            let k = l.shape()[1];
            for (r, row) in probs.data().chunks(k).enumerate() {
                let t = targets[h][start + r];
                loss_sum -= (row[t] as f64).max(1e-30).ln();
            }
            predictions[h].extend(crate::tensor::argmax_rows(l)?);
        }
    }
    let n = inputs.len().max(1) as f64;
    let mut accuracy = Vec::new();
    let mut f1 = 0.0;
    for (h, (_, k)) in heads.iter().enumerate() {
        let cm = confusion(&predictions[h], &targets[h], *k).expect("labels checked");
        accuracy.push(cm.accuracy());
        f1 += precision_recall_f1(&cm).macro_f1;
    }
    Ok(Evaluation {
        loss: loss_sum / n,
        accuracy,
        macro_f1: f1 / heads.len() as f64,
        predictions,
    })
}

/// A network and the optimizer state needed to resume or reproduce it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub network: Network<f32>,
    /// Momentum buffers aligned with [`Network::trainable`].
    pub velocity: Vec<Vec<f32>>,
    /// Epoch (1-based) the parameters were taken after; 0 before training.
    pub epoch: usize,
    /// Value of the stopping metric at `epoch`.
    pub best_metric: f64,
}

impl Checkpoint {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let network = Network::new(config.network.clone())?;
        let velocity = network.trainable().iter().map(|&i| vec![0.0; network.params()[i].tensor.numel()]).collect();
        Ok(Self {
            best_metric: config.stop_metric.worst(),
            config,
            network,
            velocity,
            epoch: 0,
        })
    }

    /// Little-endian layout: magic, `u32` version, `u32`-length-prefixed
    /// config text (the `[train]`, `[network]`, `[augment]` sections plus a
    /// `[state]` section), `u32` record count, then per record: `u32` name
    /// length, name, `u8` dtype tag, `u8` rank, `u32` dims, raw values.
    /// Records are every network parameter and buffer in order, followed by
    /// `optim.velocity.<param>` for each trainable parameter. A CRC-32 of
    /// everything before it closes the file.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut ini = self.config.to_ini();
        let mut state = SectionWriter::new("state");
        state
            .put("epoch", self.epoch)
            .float("best_metric", self.best_metric)
            .put("rng_seed", self.config.seed)
            .put("augment_seed", self.config.augment.seed);
        ini.push(state);
        let blob = ini.to_string();

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        let params = self.network.params();
        let trainable = self.network.trainable();
        out.extend_from_slice(&((params.len() + trainable.len()) as u32).to_le_bytes());
        let mut record = |name: &str, shape: &[usize], values: &[f32]| {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DType::F32.tag());
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for p in params {
            record(&p.name, p.tensor.shape(), p.tensor.data());
        }
        for (&i, v) in trainable.iter().zip(&self.velocity) {
            let p = &params[i];
            record(&format!("optim.velocity.{}", p.name), p.tensor.shape(), v);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(TrainError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < 12 {
            return Err(TrainError::Checkpoint("truncated before the checksum".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(TrainError::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: r.pos };
        let blob_len = r.u32("config length")? as usize;
        let blob = std::str::from_utf8(r.take(blob_len, "config")?)
            .map_err(|_| TrainError::Checkpoint("config is not UTF-8".into()))?;
        let ini = Ini::parse(blob).map_err(|e| TrainError::Checkpoint(format!("config: {e}")))?;
        ini.check_sections(&["train", "network", "augment", "state"])
            .map_err(|e| TrainError::Checkpoint(format!("config: {e}")))?;
        let config = TrainConfig::from_ini_sections(&ini, &TrainConfig::default())
            .map_err(|e| TrainError::Checkpoint(format!("config: {e}")))?;
        let (mut epoch, mut best_metric, mut rng_seed, mut augment_seed) = (0usize, 0.0f64, 0u64, 0u64);
        let mut st = ini.reader("state");
        st.get("epoch", &mut epoch)
            .and_then(|s| s.get("best_metric", &mut best_metric))
            .and_then(|s| s.get("rng_seed", &mut rng_seed))
            .and_then(|s| s.get("augment_seed", &mut augment_seed))
            .and_then(|s| s.finish())
            .map_err(|e| TrainError::Checkpoint(format!("state: {e}")))?;
        if rng_seed != config.seed || augment_seed != config.augment.seed {
            return Err(TrainError::Checkpoint("state seeds disagree with config".into()));
        }

        let count = r.u32("record count")? as usize;
        let mut named = BTreeMap::new();
        let mut velocity = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32("record name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "record name")?)
                .map_err(|_| TrainError::Checkpoint("record name is not UTF-8".into()))?
                .to_string();
            let tag = r.take(1, "dtype")?[0];
            if DType::from_tag(tag) != Some(DType::F32) {
                return Err(TrainError::Checkpoint(format!("{name}: unsupported dtype tag {tag}")));
            }
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dims")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| TrainError::Checkpoint("dims overflow".into()))?, &name)?;
            let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::from_vec(&shape, values).map_err(|e| TrainError::Checkpoint(format!("{name}: {e}")))?;
            let dup = match name.strip_prefix("optim.velocity.") {
                Some(p) => velocity.insert(p.to_string(), t.into_data()).is_some(),
                None => named.insert(name.clone(), t).is_some(),
            };
            if dup {
                return Err(TrainError::Checkpoint(format!("duplicate record {name}")));
            }
        }
        if r.pos != body.len() {
            return Err(TrainError::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let network = Network::from_named(config.network.clone(), named)
            .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let mut vel = Vec::new();
        for i in network.trainable() {
            let p = &network.params()[i];
            let v = velocity
                .remove(&p.name)
                .ok_or_else(|| TrainError::Checkpoint(format!("missing velocity for {}", p.name)))?;
            if v.len() != p.tensor.numel() {
                return Err(TrainError::Checkpoint(format!("velocity size mismatch for {}", p.name)));
            }
            vel.push(v);
        }
        if let Some(extra) = velocity.keys().next() {
            return Err(TrainError::Checkpoint(format!("velocity for unknown parameter {extra}")));
        }
        Ok(Self {
            config,
            network,
            velocity: vel,
            epoch,
            best_metric,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| TrainError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            TrainError::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Best checkpoint by the stopping metric.
    pub best: Checkpoint,
    pub log: Vec<EpochMetrics>,
    pub stopped_early: bool,
    /// Training inputs that fell back to the unaugmented image because the
    /// pipeline could not keep the target in frame.
    pub augment_fallbacks: usize,
    /// True when no cell had a spare sample for validation and the training
    /// samples (green channel) were used instead.
    pub validated_on_train: bool,
}

pub fn fit(config: &TrainConfig, samples: &[Sample]) -> Result<FitOutcome> {
    fit_with(config, samples, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(config: &TrainConfig, samples: &[Sample], mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<FitOutcome> {
    config.validate()?;
    let labels: Vec<ViewClass> = samples.iter().map(|s| s.labels).collect();
    let (train_idx, mut val_idx) = split_train_val(&labels, config.val_fraction, config.seed)?;
    let validated_on_train = val_idx.is_empty();
    if validated_on_train {
        val_idx = train_idx.clone();
    }
    let head = config.network.head;
    let classes: Vec<usize> = config.network.heads().iter().map(|h| h.1).collect();
    for s in samples {
        for (t, &k) in head_targets(s, head).iter().zip(&classes) {
            if *t >= k {
                return Err(TensorError::LabelOutOfRange { label: *t, classes: k }.into());
            }
        }
    }
    let targets_of = |idx: &[usize]| -> Vec<Vec<usize>> {
        (0..classes.len())
            .map(|h| idx.iter().map(|&i| head_targets(&samples[i], head)[h]).collect())
            .collect()
    };
    let val_inputs: Vec<Tensor<f32>> = val_idx
        .par_iter()
        .map(|&i| prepare(&samples[i], ChannelMode::Select(Channel::Green)))
        .collect::<std::result::Result<_, _>>()?;
    let val_targets = targets_of(&val_idx);

    let mut ckpt = Checkpoint::new(config.clone())?;
    let mut opt = Sgd::<f32>::new(config.learning_rate, config.momentum)?;
    let mut best = ckpt.clone();
    let mut log = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut fallbacks = 0;
    let trainable = ckpt.network.trainable();

    for epoch in 1..=config.epochs {
        let mut order = train_idx.clone();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let prepared: Vec<(Tensor<f32>, bool)> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = stream_rng(config.augment.seed, epoch as u64, i as u64);
                    let channel = if rng.random::<bool>() { Channel::Red } else { Channel::Blue };
                    let mode = ChannelMode::Select(channel);
                    match pipeline(&samples[i], mode, &config.augment, &mut rng) {
                        Ok(a) => Ok((a.tensor, false)),
                        Err(AugmentError::OutOfFrame(_) | AugmentError::DegenerateHomography | AugmentError::Degenerate(_)) => {
                            prepare(&samples[i], mode).map(|t| (t, true))
                        }
                        Err(e) => Err(e),
                    }
                })
                .collect::<std::result::Result<_, _>>()?;
            fallbacks += prepared.iter().filter(|p| p.1).count();
            let inputs: Vec<Tensor<f32>> = prepared.into_iter().map(|p| p.0).collect();
            let targets = targets_of(batch);

            let non_finite = |net: &Network<f32>, loss: f64| TrainError::NonFinite {
                epoch,
                batch: b,
                loss,
                norms: net.param_norms(),
            };
            let mut tape = Tape::new();
            let x = tape.leaf(stack(&inputs)?);
            let fwd = match ckpt.network.forward(&mut tape, x, Mode::Train, true) {
                Err(NetError::Tensor(TensorError::NonFinite { .. })) => {
                    return Err(non_finite(&ckpt.network, f64::NAN));
                }
                other => other?,
            };
            let l = match loss(&mut tape, fwd.logits, &targets) {
                Err(TrainError::Tensor(TensorError::NonFinite { .. })) => {
                    return Err(non_finite(&ckpt.network, f64::NAN));
                }
                other => other?,
            };
            let lv = tape.value(l).data()[0] as f64;
            if !lv.is_finite() {
                return Err(non_finite(&ckpt.network, lv));
            }
            tape.backward(l)?;
            let grads = collect_grads(&tape, &fwd);
            let grad_refs: Vec<Option<&[f32]>> = trainable.iter().map(|&i| grads[i].as_deref()).collect();
            {
                let mut params: Vec<&mut Tensor<f32>> = ckpt
                    .network
                    .params_mut()
                    .iter_mut()
                    .filter(|p| p.kind == ParamKind::Weight)
                    .map(|p| &mut p.tensor)
                    .collect();
                opt.step(&mut params, &grad_refs)?;
            }
            ckpt.network.commit_bn(&fwd.bn_updates);
            loss_sum += lv * batch.len() as f64;
            seen += batch.len();
        }
        if let Some((name, _)) = ckpt.network.param_norms().into_iter().find(|(_, n)| !n.is_finite()) {
            return Err(TrainError::NonFinite {
                epoch,
                batch: 0,
                loss: f64::NAN,
                norms: vec![(name, f64::NAN)],
            });
        }

        let eval = evaluate(&ckpt.network, &val_inputs, &val_targets, config.batch_size)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss: eval.loss,
            val_az_acc: eval.accuracy[0],
            val_el_acc: eval.accuracy.get(1).copied().unwrap_or(0.0),
        };
        on_epoch(&metrics);
        log.push(metrics);

        ckpt.epoch = epoch;
        ckpt.velocity = opt.velocity().to_vec();
        let score = match config.stop_metric {
            StopMetric::ValLoss => eval.loss,
            StopMetric::ValF1 => eval.macro_f1,
        };
        ckpt.best_metric = score;
        if config.stop_metric.better(score, best.best_metric) || best.epoch == 0 {
            best = ckpt.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
    }
    Ok(FitOutcome {
        best,
        log,
        stopped_early,
        augment_fallbacks: fallbacks,
        validated_on_train,
    })
}

/// Number of classes per head, for labelling and reports.
pub fn head_classes(mode: HeadMode) -> Vec<usize> {
    match mode {
        HeadMode::Dual => vec![PHASE2_AZ_CLASSES, PHASE2_EL_CLASSES],
        HeadMode::Single => vec![PHASE1_AZ_CLASSES],
    }
}
