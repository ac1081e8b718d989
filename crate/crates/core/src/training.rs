//! Training loop, learning-rate schedule, early stopping, checkpoints and ablations.

use crate::baseline_svm::{SvmBaseline, SvmConfig, SvmError};
use crate::dataset::{build_vocabularies, read_word_vectors, DatasetError};
use crate::evaluation::{EvalError, EvalReport, LevelConvention, Prediction};
use crate::model::{check_alpha, ModelError, NeuralModel};
use crate::neural::{Adam, Dropout, Gradients};
use crate::pointer_generator::{PgCheckpoint, PgConfig, PointerGenerator};
use crate::segment_encoder::{SegEncCheckpoint, SegEncConfig, SegmentEncoder};
use crate::table::TableInstance;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SEED_ENV: &str = "TABLEMETRIC_SEED";
pub const WARMUP_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    /// Process exit code: 2 usage, 3 data, 4 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::Config(_) | TrainError::Model(ModelError::IncompatibleAblation { .. }) => 2,
            TrainError::Model(ModelError::AlphaOutOfRange(_)) => 2,
            TrainError::EmptySplit(_)
            | TrainError::Data(_)
            | TrainError::Io { .. }
            | TrainError::Checkpoint { .. }
            | TrainError::Model(ModelError::InvalidTable { .. }) => 3,
            _ => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pg,
    Segenc,
    Svm,
    /// Answers with the gold target; a stub for checking the evaluation path.
    Oracle,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Pg => "pg",
            ModelKind::Segenc => "segenc",
            ModelKind::Svm => "svm",
            ModelKind::Oracle => "oracle",
        }
    }

    pub fn default_lr(self) -> f64 {
        match self {
            ModelKind::Segenc => 3e-5,
            _ => 3e-3,
        }
    }
}

/// Validation metric watched by early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    #[default]
    AccMTokenSm,
    AccMTokenOcm,
    AccMSm,
    AccHloc,
}

impl StopMetric {
    pub fn of(self, r: &EvalReport) -> f64 {
        match self {
            StopMetric::AccMTokenSm => r.acc_m_token_sm,
            StopMetric::AccMTokenOcm => r.acc_m_token_ocm,
            StopMetric::AccMSm => r.acc_m_sm,
            StopMetric::AccHloc => r.acc_hloc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoCopy,
    NoGeneration,
    NoSegmentEmbeddings,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoCopy => "no_copy",
            Ablation::NoGeneration => "no_generation",
            Ablation::NoSegmentEmbeddings => "no_segment_embeddings",
        }
    }

    pub fn parse(s: &str) -> Option<Ablation> {
        match s {
            "no_copy" => Some(Ablation::NoCopy),
            "no_generation" => Some(Ablation::NoGeneration),
            "no_segment_embeddings" => Some(Ablation::NoSegmentEmbeddings),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub batch_size: usize,
    /// Peak learning rate; the kind's default when absent.
    pub lr: Option<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    pub seed: u64,
    pub embeddings: Option<PathBuf>,
    pub no_copy: bool,
    pub no_generation: bool,
    pub no_segment_embeddings: bool,
    pub grad_clip: Option<f64>,
    pub stop_metric: StopMetric,
    pub level_convention: LevelConvention,
    pub pg: PgConfig,
    pub segenc: SegEncConfig,
    pub svm: SvmConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Pg,
            batch_size: 10,
            lr: None,
            max_epochs: 20,
            patience: 10,
            alpha: 0.5,
            seed: 0,
            embeddings: None,
            no_copy: false,
            no_generation: false,
            no_segment_embeddings: false,
            grad_clip: None,
            stop_metric: StopMetric::default(),
            level_convention: LevelConvention::default(),
            pg: PgConfig::default(),
            segenc: SegEncConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(s: &str) -> Result<Self, TrainError> {
        serde_json::from_str(s).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Applies the seed override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<(), TrainError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| TrainError::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn peak_lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.kind.default_lr())
    }

    pub fn ablations(&self) -> Vec<Ablation> {
        let mut out = Vec::new();
        if self.no_copy {
            out.push(Ablation::NoCopy);
        }
        if self.no_generation {
            out.push(Ablation::NoGeneration);
        }
        if self.no_segment_embeddings {
            out.push(Ablation::NoSegmentEmbeddings);
        }
        out
    }

    pub fn set_ablation(&mut self, flag: Ablation) {
        match flag {
            Ablation::NoCopy => self.no_copy = true,
            Ablation::NoGeneration => {
                self.no_copy = true;
                self.no_generation = true;
            }
            Ablation::NoSegmentEmbeddings => self.no_segment_embeddings = true,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(TrainError::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        check_alpha(self.alpha)?;
        if !(self.peak_lr() > 0.0 && self.peak_lr().is_finite()) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        for flag in self.ablations() {
            let ok = match flag {
                Ablation::NoCopy | Ablation::NoGeneration => self.kind == ModelKind::Pg,
                Ablation::NoSegmentEmbeddings => self.kind == ModelKind::Segenc,
            };
            if !ok {
                return Err(ModelError::IncompatibleAblation {
                    flag: flag.name(),
                    model: self.kind.name(),
                }
                .into());
            }
        }
        Ok(())
    }

    fn pg_config(&self) -> PgConfig {
        PgConfig {
            alpha: self.alpha,
            no_copy: self.no_copy || self.no_generation,
            no_generation: self.no_generation,
            ..self.pg.clone()
        }
    }

    fn segenc_config(&self) -> SegEncConfig {
        SegEncConfig {
            alpha: self.alpha,
            no_segment_embeddings: self.no_segment_embeddings,
            ..self.segenc.clone()
        }
    }
}

/// Slanted triangular schedule over `total` steps (1-based step index):
/// linear rise to `peak` at the warmup boundary, then linear decay to zero at `total`.
pub fn slanted_triangular(step: usize, total: usize, peak: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let warmup = warmup_steps(total);
    let t = step.min(total) as f64;
    if step <= warmup {
        peak * t / warmup as f64
    } else if total == warmup {
        0.0
    } else {
        peak * (total as f64 - t) / (total - warmup) as f64
    }
}

pub fn warmup_steps(total: usize) -> usize {
    ((WARMUP_FRACTION * total as f64).ceil() as usize).max(1)
}

/// A trained model of any kind.
pub enum Model {
    Pg(PointerGenerator),
    Segenc(SegmentEncoder),
    Svm(SvmBaseline),
    Oracle,
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Pg(_) => ModelKind::Pg,
            Model::Segenc(_) => ModelKind::Segenc,
            Model::Svm(_) => ModelKind::Svm,
            Model::Oracle => ModelKind::Oracle,
        }
    }

    pub fn predict(&self, t: &TableInstance) -> Result<Prediction, TrainError> {
        Ok(match self {
            Model::Pg(m) => m.predict(t)?,
            Model::Segenc(m) => m.predict(t)?,
            Model::Svm(m) => m.predict(t)?,
            Model::Oracle => Prediction::oracle(t),
        })
    }

    pub fn predict_all(&self, tables: &[TableInstance]) -> Result<Vec<Prediction>, TrainError> {
        tables.iter().map(|t| self.predict(t)).collect()
    }

    pub fn has_copy(&self) -> bool {
        match self {
            Model::Pg(m) => m.has_copy(),
            Model::Segenc(_) | Model::Svm(_) => false,
            Model::Oracle => true,
        }
    }
}

pub fn evaluate(
    model: &Model,
    tables: &[TableInstance],
    convention: LevelConvention,
) -> Result<EvalReport, TrainError> {
    let preds = model.predict_all(tables)?;
    Ok(EvalReport::build(&preds, tables, model.has_copy(), convention)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub val_metric: f64,
    pub improved: bool,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept; 0 for models without epochs.
    pub best_epoch: usize,
    pub best_metric: f64,
    pub val_report: EvalReport,
}

/// Table indices grouped by header-level count, shuffled within groups, cut into
/// batches, then shuffled batch order.
fn epoch_batches(tables: &[TableInstance], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, t) in tables.iter().enumerate() {
        groups.entry(t.row_levels() + t.column_levels()).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut members) in groups {
        members.shuffle(rng);
        batches.extend(members.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

fn batch_count(tables: &[TableInstance], batch_size: usize) -> usize {
    let mut groups: BTreeMap<usize, usize> = BTreeMap::new();
    for t in tables {
        *groups.entry(t.row_levels() + t.column_levels()).or_default() += 1;
    }
    groups.values().map(|n| n.div_ceil(batch_size)).sum()
}

fn evaluate_neural<M: NeuralModel>(
    model: &M,
    tables: &[TableInstance],
    convention: LevelConvention,
) -> Result<EvalReport, TrainError> {
    let preds = tables.iter().map(|t| model.predict(t)).collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::build(&preds, tables, model.has_copy(), convention)?)
}

fn train_neural<M: NeuralModel>(
    model: &mut M,
    dropout_p: f64,
    config: &TrainConfig,
    train: &[TableInstance],
    val: &[TableInstance],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Vec<EpochLog>, usize, f64, EvalReport), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout = Dropout {
        p: dropout_p,
        rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d20f),
    };
    let mut adam = Adam::new(model.params());
    let peak = config.peak_lr();
    let total_steps = config.max_epochs * batch_count(train, config.batch_size);
    let mut step = 0;
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, Vec<crate::neural::Mat>, EvalReport)> = None;
    let mut bad_epochs = 0;

    for epoch in 1..=config.max_epochs {
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for (b, batch) in epoch_batches(train, config.batch_size, &mut rng).into_iter().enumerate() {
            let mut grads = Gradients::new(model.params());
            let mut batch_loss = 0.0;
            for &i in &batch {
                let d = (dropout_p > 0.0).then_some(&mut dropout);
                batch_loss += model.accumulate_gradients(&train[i], d, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b + 1 });
            }
            if let Some(max_norm) = config.grad_clip {
                let norm = grads.global_norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            step += 1;
            lr = slanted_triangular(step, total_steps, peak);
            adam.step(model.params_mut(), &grads, lr);
            loss_sum += batch_loss;
        }
        let report = evaluate_neural(model, val, config.level_convention)?;
        let metric = config.stop_metric.of(&report);
        let improved = best.as_ref().is_none_or(|(_, m, _, _)| metric > *m);
        if improved {
            best = Some((epoch, metric, model.params().snapshot(), report));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
        }
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / train.len() as f64,
            lr,
            val_metric: metric,
            improved,
        };
        on_epoch(&entry);
        log.push(entry);
        // Patience 0 stops on the first non-improving epoch.
        if !improved && bad_epochs >= config.patience.max(1) {
            break;
        }
    }
    let (best_epoch, best_metric, snapshot, report) = match best {
        Some(b) => b,
        None => {
            let report = evaluate_neural(model, val, config.level_convention)?;
            (0, config.stop_metric.of(&report), model.params().snapshot(), report)
        }
    };
    model.params_mut().restore(snapshot);
    Ok((log, best_epoch, best_metric, report))
}

/// Trains a model; `on_epoch` sees each epoch's log line as it is produced.
pub fn train_with_log(
    config: &TrainConfig,
    train: &[TableInstance],
    val: &[TableInstance],
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    for t in train.iter().chain(val) {
        crate::model::check_table(t)?;
    }
    let (vocab, metric_vocab) = build_vocabularies(train);
    match config.kind {
        ModelKind::Oracle => {
            let model = Model::Oracle;
            let report = evaluate(&model, val, config.level_convention)?;
            Ok(TrainOutcome {
                model,
                log: Vec::new(),
                best_epoch: 0,
                best_metric: config.stop_metric.of(&report),
                val_report: report,
            })
        }
        ModelKind::Svm => {
            let model = Model::Svm(SvmBaseline::fit(train, config.svm, config.seed)?);
            let report = evaluate(&model, val, config.level_convention)?;
            Ok(TrainOutcome {
                model,
                log: Vec::new(),
                best_epoch: 0,
                best_metric: config.stop_metric.of(&report),
                val_report: report,
            })
        }
        ModelKind::Pg => {
            let vectors = match &config.embeddings {
                Some(p) => Some(read_word_vectors(p)?),
                None => None,
            };
            let cfg = config.pg_config();
            let dropout = cfg.dropout;
            let mut pg = PointerGenerator::new(cfg, vocab, metric_vocab, config.seed, vectors.as_ref());
            let (log, best_epoch, best_metric, val_report) =
                train_neural(&mut pg, dropout, config, train, val, on_epoch)?;
            Ok(TrainOutcome {
                model: Model::Pg(pg),
                log,
                best_epoch,
                best_metric,
                val_report,
            })
        }
        ModelKind::Segenc => {
            let cfg = config.segenc_config();
            let dropout = cfg.dropout;
            let mut m = SegmentEncoder::new(cfg, vocab, metric_vocab, config.seed);
            let (log, best_epoch, best_metric, val_report) =
                train_neural(&mut m, dropout, config, train, val, on_epoch)?;
            Ok(TrainOutcome {
                model: Model::Segenc(m),
                log,
                best_epoch,
                best_metric,
                val_report,
            })
        }
    }
}

pub fn train(config: &TrainConfig, train: &[TableInstance], val: &[TableInstance]) -> Result<TrainOutcome, TrainError> {
    train_with_log(config, train, val, |_| {})
}

/// Trains with one ablation switched on and scores the result on `test`.
pub fn ablate(
    config: &TrainConfig,
    flag: Ablation,
    train_set: &[TableInstance],
    val: &[TableInstance],
    test: &[TableInstance],
) -> Result<EvalReport, TrainError> {
    let mut cfg = config.clone();
    cfg.set_ablation(flag);
    cfg.validate()?;
    let outcome = train(&cfg, train_set, val)?;
    let mut report = evaluate(&outcome.model, test, cfg.level_convention)?;
    report.notes.push(format!("ablation={}", flag.name()));
    Ok(report)
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const LOG_FILE: &str = "log.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ModelKind,
    pub config_hash: String,
    /// Epoch whose parameters were saved.
    pub epoch: usize,
    /// Validation metrics of the saved parameters.
    pub metrics: BTreeMap<String, f64>,
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), TrainError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn read(path: &Path) -> Result<Vec<u8>, TrainError> {
    std::fs::read(path).map_err(io_err(path))
}

fn bad_checkpoint(path: &Path, reason: impl ToString) -> TrainError {
    TrainError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn save_checkpoint(dir: &Path, config: &TrainConfig, outcome: &TrainOutcome) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let r = &outcome.val_report;
    let metrics: BTreeMap<String, f64> = [
        ("acc_hloc", r.acc_hloc),
        ("acc_hlevel", r.acc_hlevel),
        ("acc_m_sm", r.acc_m_sm),
        ("acc_m_token_sm", r.acc_m_token_sm),
        ("acc_m_token_ocm", r.acc_m_token_ocm),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let manifest = Manifest {
        kind: outcome.model.kind(),
        config_hash: config.hash(),
        epoch: outcome.best_epoch,
        metrics,
    };
    write(&dir.join(MANIFEST_FILE), json(&manifest).as_bytes())?;
    write(&dir.join(CONFIG_FILE), config.to_json().as_bytes())?;
    write(&dir.join(LOG_FILE), json(&outcome.log).as_bytes())?;
    match &outcome.model {
        Model::Pg(m) => {
            write(&dir.join(MODEL_FILE), json(&m.checkpoint_meta()).as_bytes())?;
            write(&dir.join(PARAMS_FILE), &m.params().to_bytes())?;
        }
        Model::Segenc(m) => {
            write(&dir.join(MODEL_FILE), json(&m.checkpoint_meta()).as_bytes())?;
            write(&dir.join(PARAMS_FILE), &NeuralModel::params(m).to_bytes())?;
        }
        Model::Svm(m) => write(&dir.join(MODEL_FILE), m.to_json()?.as_bytes())?,
        Model::Oracle => {}
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, Manifest), TrainError> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_slice(&read(&path)?).map_err(|e| bad_checkpoint(&path, e))?;
    let model_path = dir.join(MODEL_FILE);
    let params_path = dir.join(PARAMS_FILE);
    let model = match manifest.kind {
        ModelKind::Oracle => Model::Oracle,
        ModelKind::Svm => {
            let text = String::from_utf8(read(&model_path)?).map_err(|e| bad_checkpoint(&model_path, e))?;
            Model::Svm(SvmBaseline::from_json(&text).map_err(|e| bad_checkpoint(&model_path, e))?)
        }
        ModelKind::Pg => {
            let meta: PgCheckpoint =
                serde_json::from_slice(&read(&model_path)?).map_err(|e| bad_checkpoint(&model_path, e))?;
            let m = PointerGenerator::from_checkpoint(meta, &read(&params_path)?)
                .map_err(|e| bad_checkpoint(&params_path, e))?;
            Model::Pg(m)
        }
        ModelKind::Segenc => {
            let meta: SegEncCheckpoint =
                serde_json::from_slice(&read(&model_path)?).map_err(|e| bad_checkpoint(&model_path, e))?;
            let m = SegmentEncoder::from_checkpoint(meta, &read(&params_path)?)
                .map_err(|e| bad_checkpoint(&params_path, e))?;
            Model::Segenc(m)
        }
    };
    Ok((model, manifest))
}
