//! Two-phase orchestration: pose pre-training, frozen feature extraction,
//! cross-validated support-vector regression of health indicators,
//! encoder ablations and the run report bundle.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glance::EncoderVariant;
use crate::head::LossWeights;
use crate::metrics::{AggregateMetrics, IndicatorError, MetricReport};
use crate::model::{average_pool, load_checkpoint, save_checkpoint, GlanceNet, LossRecord, ModelConfig, Trainer};
use crate::nn::AdamConfig;
use crate::svr::{ScaledSvr, SvrConfig};
use crate::synth::{mix_seed, GaitSequence, HealthIndicators, SynthConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.glnc";
pub const LOSS_LOG_FILE: &str = "loss_log.jsonl";
pub const EPOCHS_FILE: &str = "phase1_epochs.json";
pub const HELDOUT_FILE: &str = "heldout_report.json";
pub const FEATURES_FILE: &str = "features.json";
pub const PHASE2_FILE: &str = "phase2.json";
pub const ABLATION_FILE: &str = "ablation.json";
pub const EVAL_FILE: &str = "eval_report.json";
pub const REPORT_DIR: &str = "report";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub epochs: usize,
    /// Epoch index from which the learning rate is divided by `lr_decay_factor`.
    pub lr_decay_after: usize,
    pub lr_decay_factor: f64,
    /// Fraction of phase-I subjects held out for per-epoch evaluation.
    pub holdout_fraction: f64,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 24,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            epochs: 30,
            lr_decay_after: 5,
            lr_decay_factor: 10.0,
            holdout_fraction: 0.2,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.lr_decay_factor >= 1.0) {
            return Err(Error::Config("lr_decay_factor must be >= 1".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config("holdout_fraction must lie in (0, 1)".into()));
        }
        self.loss_weights.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_after {
            self.lr / self.lr_decay_factor
        } else {
            self.lr
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub phase1_data: PathBuf,
    pub benchmark_data: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            phase1_data: "data/phase1".into(),
            benchmark_data: "data/benchmark".into(),
            run_dir: "runs/default".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    /// Pose pre-training corpus.
    pub phase1_data: SynthConfig,
    /// Health-indicator benchmark, disjoint subjects from `phase1_data`.
    pub benchmark: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pool_factor: usize,
    pub svr: SvrConfig,
    /// Indicators regressed in phase II, one regressor each.
    pub indicators: Vec<String>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            phase1_data: SynthConfig {
                subjects: 200,
                seed: 1,
                ..SynthConfig::default()
            },
            benchmark: SynthConfig {
                seed: 2,
                ..SynthConfig::default()
            },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            pool_factor: 4,
            svr: SvrConfig::default(),
            indicators: HealthIndicators::NAMES.iter().map(|s| s.to_string()).collect(),
            folds: 5,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.phase1_data.validate()?;
        self.benchmark.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.svr.validate()?;
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        let out = self.model.gru.output_dim();
        if self.pool_factor == 0 || out % self.pool_factor != 0 {
            return Err(Error::Config(format!(
                "pool_factor {} must divide the feature length {out}",
                self.pool_factor
            )));
        }
        if self.indicators.is_empty() {
            return Err(Error::Config("no indicators selected".into()));
        }
        for name in &self.indicators {
            if !HealthIndicators::NAMES.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown indicator {name:?}")));
            }
        }
        if self.phase1_data.seed == self.benchmark.seed {
            return Err(Error::Config("phase-I and benchmark datasets must use different seeds".into()));
        }
        let frames = (self.phase1_data.height, self.phase1_data.width);
        if frames != self.model.encoder.input_size || (self.benchmark.height, self.benchmark.width) != frames {
            return Err(Error::Config(format!(
                "dataset frame size must equal encoder input_size {:?}",
                self.model.encoder.input_size
            )));
        }
        Ok(())
    }

    /// Re-seeds the run and both dataset generators from one master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.phase1_data.seed = mix_seed(seed, 10);
        self.benchmark.seed = mix_seed(seed, 11);
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = read_json(path)?;
        config.validate()?;
        Ok(config)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn sorted_subjects(seqs: &[GaitSequence]) -> Vec<String> {
    seqs.iter()
        .map(|s| s.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn shuffled(ids: &[String], seed: u64) -> Vec<String> {
    let mut ids = ids.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}

/// Subject-level train / held-out split.
pub fn holdout_split(ids: &[String], fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let ids = shuffled(ids, seed);
    let held = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len().saturating_sub(1));
    if ids.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 subjects to hold out, got {}", ids.len())));
    }
    let mut test = ids[..held].to_vec();
    let mut train = ids[held..].to_vec();
    test.sort();
    train.sort();
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_subject_ids: Vec<String>,
    pub test_subject_ids: Vec<String>,
}

/// Seeded shuffle, then contiguous partition into `folds` test sets.
pub fn make_folds(subject_ids: &[String], folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if folds < 2 {
        return Err(Error::Config(format!("folds must be >= 2, got {folds}")));
    }
    let ids = shuffled(subject_ids, seed);
    if ids.len() < folds {
        return Err(Error::InvalidInput(format!("{} subjects cannot fill {folds} folds", ids.len())));
    }
    let (base, extra) = (ids.len() / folds, ids.len() % folds);
    let mut start = 0;
    Ok((0..folds)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let mut test: Vec<String> = ids[start..start + len].to_vec();
            let mut train: Vec<String> = ids[..start].iter().chain(&ids[start + len..]).cloned().collect();
            start += len;
            test.sort();
            train.sort();
            FoldSplit {
                fold_id: k,
                train_subject_ids: train,
                test_subject_ids: test,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 is the untrained initialization.
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: Option<f64>,
    pub heldout: AggregateMetrics,
}

#[derive(Clone, Debug)]
pub struct Phase1Output {
    pub model: GlanceNet,
    pub loss_log: Vec<LossRecord>,
    pub epochs: Vec<EpochMetrics>,
    pub heldout: MetricReport,
    pub train_subjects: Vec<String>,
    pub heldout_subjects: Vec<String>,
}

fn select<'a>(seqs: &'a [GaitSequence], ids: &[String]) -> Vec<&'a GaitSequence> {
    let ids: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    seqs.iter().filter(|s| ids.contains(s.subject_id.as_str())).collect()
}

fn owned(seqs: &[&GaitSequence]) -> Vec<GaitSequence> {
    seqs.iter().map(|s| (*s).clone()).collect()
}

/// The untrained network a phase-I run starts from.
pub fn initial_model(config: &PipelineConfig, train: &[GaitSequence]) -> Result<GlanceNet> {
    let mut model = GlanceNet::new(config.model.clone(), mix_seed(config.seed, 20))?;
    model.set_mean_from(train);
    Ok(model)
}

pub fn train_phase1(config: &PipelineConfig, data: &[GaitSequence]) -> Result<Phase1Output> {
    train_phase1_with(config, data, |_| {})
}

/// Phase-I training with a callback after every epoch's evaluation.
pub fn train_phase1_with(
    config: &PipelineConfig,
    data: &[GaitSequence],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Phase1Output> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("phase-I dataset is empty".into()));
    }
    let tc = &config.train;
    let (train_ids, held_ids) = holdout_split(&sorted_subjects(data), tc.holdout_fraction, mix_seed(config.seed, 21))?;
    let train = owned(&select(data, &train_ids));
    let held = owned(&select(data, &held_ids));

    let model = initial_model(config, &train)?;
    let mut heldout = model.evaluate(&held)?;
    let mut epochs = vec![EpochMetrics {
        epoch: 0,
        lr: 0.0,
        mean_loss: None,
        heldout: heldout.aggregate,
    }];
    on_epoch(&epochs[0]);

    let mut trainer = Trainer::new(model, tc.adam());
    let mut loss_log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..tc.epochs {
        let lr = tc.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1000 + epoch as u64)));
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&GaitSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let rec = trainer.train_step(&batch, lr, &tc.loss_weights)?;
            sum += rec.total;
            steps += 1;
            loss_log.push(rec);
        }
        heldout = trainer.model.evaluate(&held)?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr,
            mean_loss: Some(sum / steps as f64),
            heldout: heldout.aggregate,
        };
        on_epoch(&m);
        epochs.push(m);
    }
    Ok(Phase1Output {
        model: trainer.model,
        loss_log,
        epochs,
        heldout,
        train_subjects: train_ids,
        heldout_subjects: held_ids,
    })
}

pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in log {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Writes checkpoint, loss log, epoch metrics and the final held-out report.
pub fn write_phase1(out: &Phase1Output, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&out.model, &dir.join(CHECKPOINT_FILE))?;
    write_loss_log(&dir.join(LOSS_LOG_FILE), &out.loss_log)?;
    write_json(&dir.join(EPOCHS_FILE), &out.epochs)?;
    write_json(&dir.join(HELDOUT_FILE), &out.heldout)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub sequence_id: String,
    pub subject_id: String,
    pub indicators: HealthIndicators,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub pool_factor: usize,
    pub feature_dim: usize,
    pub rows: Vec<FeatureRow>,
}

/// Last-frame spatio-temporal vector of every sequence, average-pooled by
/// `pool_factor`.
pub fn extract_features(model: &GlanceNet, seqs: &[GaitSequence], pool_factor: usize) -> Result<FeatureTable> {
    let out = model.config.gru.output_dim();
    if pool_factor == 0 || out % pool_factor != 0 {
        return Err(Error::Config(format!("pool_factor {pool_factor} must divide {out}")));
    }
    let rows = seqs
        .par_iter()
        .map(|s| {
            let f = model.sequence_feature(&s.frames)?;
            Ok(FeatureRow {
                sequence_id: s.sequence_id.clone(),
                subject_id: s.subject_id.clone(),
                indicators: s.indicators,
                features: average_pool(&f.last, pool_factor)?.to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureTable {
        pool_factor,
        feature_dim: out / pool_factor,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sequence_id: String,
    pub subject_id: String,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorFold {
    pub error: IndicatorError,
    /// Predicting the training-fold mean.
    pub baseline: IndicatorError,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_id: usize,
    /// Sequences that fed standardization and regressor fitting.
    pub fit_sequence_ids: Vec<String>,
    pub test_sequence_ids: Vec<String>,
    pub indicators: BTreeMap<String, IndicatorFold>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Phase2Report {
    pub folds: Vec<FoldResult>,
    /// Mean over folds.
    pub aggregate: BTreeMap<String, IndicatorError>,
    pub baseline: BTreeMap<String, IndicatorError>,
}

fn fold_mean(folds: &[FoldResult], name: &str, pick: impl Fn(&IndicatorFold) -> IndicatorError) -> IndicatorError {
    let n = folds.len() as f64;
    let mut out = IndicatorError::default();
    for f in folds {
        let e = pick(&f.indicators[name]);
        out.mae += e.mae / n;
        out.mape += e.mape / n;
    }
    out
}

fn rows_matrix(rows: &[&FeatureRow]) -> Array2<f64> {
    let d = rows.first().map_or(0, |r| r.features.len());
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i].features[j])
}

fn run_fold(table: &FeatureTable, fold: &FoldSplit, svr: &SvrConfig, indicators: &[String]) -> Result<FoldResult> {
    let train_ids: BTreeSet<&str> = fold.train_subject_ids.iter().map(String::as_str).collect();
    let test_ids: BTreeSet<&str> = fold.test_subject_ids.iter().map(String::as_str).collect();
    if train_ids.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "fold {} has {} training subjects, need at least 2",
            fold.fold_id,
            train_ids.len()
        )));
    }
    let fit: Vec<&FeatureRow> = table.rows.iter().filter(|r| train_ids.contains(r.subject_id.as_str())).collect();
    let test: Vec<&FeatureRow> = table.rows.iter().filter(|r| test_ids.contains(r.subject_id.as_str())).collect();
    if test.is_empty() {
        return Err(Error::InvalidInput(format!("fold {} has no test sequences", fold.fold_id)));
    }
    let x_fit = rows_matrix(&fit);
    let x_test = rows_matrix(&test);
    let mut out = BTreeMap::new();
    for name in indicators {
        let label = |r: &FeatureRow| r.indicators.get(name).ok_or_else(|| Error::Config(format!("unknown indicator {name:?}")));
        let y_fit: Vec<f64> = fit.iter().map(|r| label(r)).collect::<Result<_>>()?;
        let y_test: Vec<f64> = test.iter().map(|r| label(r)).collect::<Result<_>>()?;
        let model = ScaledSvr::fit(&x_fit, &y_fit, svr)?;
        let pred = model.predict(&x_test)?;
        let mean = y_fit.iter().sum::<f64>() / y_fit.len() as f64;
        out.insert(
            name.clone(),
            IndicatorFold {
                error: IndicatorError::compute(&pred, &y_test)?,
                baseline: IndicatorError::compute(&vec![mean; y_test.len()], &y_test)?,
                predictions: test
                    .iter()
                    .zip(pred.iter().zip(&y_test))
                    .map(|(r, (p, a))| Prediction {
                        sequence_id: r.sequence_id.clone(),
                        subject_id: r.subject_id.clone(),
                        predicted: *p,
                        actual: *a,
                    })
                    .collect(),
            },
        );
    }
    Ok(FoldResult {
        fold_id: fold.fold_id,
        fit_sequence_ids: fit.iter().map(|r| r.sequence_id.clone()).collect(),
        test_sequence_ids: test.iter().map(|r| r.sequence_id.clone()).collect(),
        indicators: out,
    })
}

pub fn train_phase2(table: &FeatureTable, folds: &[FoldSplit], svr: &SvrConfig, indicators: &[String]) -> Result<Phase2Report> {
    if folds.is_empty() {
        return Err(Error::InvalidInput("no folds".into()));
    }
    let results = folds
        .par_iter()
        .map(|f| run_fold(table, f, svr, indicators))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = indicators
        .iter()
        .map(|n| (n.clone(), fold_mean(&results, n, |f| f.error)))
        .collect();
    let baseline = indicators
        .iter()
        .map(|n| (n.clone(), fold_mean(&results, n, |f| f.baseline)))
        .collect();
    Ok(Phase2Report {
        folds: results,
        aggregate,
        baseline,
    })
}

/// Fails if any test-subject sequence was used for fitting in its fold.
pub fn audit_leakage(report: &Phase2Report, table: &FeatureTable, folds: &[FoldSplit]) -> Result<()> {
    let subject_of: BTreeMap<&str, &str> = table
        .rows
        .iter()
        .map(|r| (r.sequence_id.as_str(), r.subject_id.as_str()))
        .collect();
    for (res, fold) in report.folds.iter().zip(folds) {
        let test: BTreeSet<&str> = fold.test_subject_ids.iter().map(String::as_str).collect();
        for id in &res.fit_sequence_ids {
            let subject = subject_of.get(id.as_str()).copied().unwrap_or("");
            if test.contains(subject) {
                return Err(Error::InvalidInput(format!(
                    "fold {}: test subject {subject} leaked into fitting via {id}",
                    res.fold_id
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TwoPhaseOutput {
    pub phase1: Phase1Output,
    pub features: FeatureTable,
    pub folds: Vec<FoldSplit>,
    pub phase2: Phase2Report,
}

/// Phase I on `phase1_data`, then frozen features and cross-validated
/// regression on `benchmark`.
pub fn run_two_phase(config: &PipelineConfig, phase1_data: &[GaitSequence], benchmark: &[GaitSequence]) -> Result<TwoPhaseOutput> {
    let phase1 = train_phase1(config, phase1_data)?;
    let features = extract_features(&phase1.model, benchmark, config.pool_factor)?;
    let folds = benchmark_folds(config, benchmark)?;
    let phase2 = train_phase2(&features, &folds, &config.svr, &config.indicators)?;
    audit_leakage(&phase2, &features, &folds)?;
    Ok(TwoPhaseOutput {
        phase1,
        features,
        folds,
        phase2,
    })
}

pub fn benchmark_folds(config: &PipelineConfig, benchmark: &[GaitSequence]) -> Result<Vec<FoldSplit>> {
    make_folds(&sorted_subjects(benchmark), config.folds, mix_seed(config.seed, 30))
}

/// Same folds as `benchmark_folds`, from the subjects of a feature table.
pub fn table_folds(config: &PipelineConfig, table: &FeatureTable) -> Result<Vec<FoldSplit>> {
    let ids: Vec<String> = table.rows.iter().map(|r| r.subject_id.clone()).collect();
    make_folds(&ids, config.folds, mix_seed(config.seed, 30))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: EncoderVariant,
    pub modules: String,
    pub pose: AggregateMetrics,
    pub indicators: BTreeMap<String, IndicatorError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Indicator table then pose table, one row per encoder variant.
    pub fn to_markdown(&self) -> String {
        let names: Vec<&String> = self.rows.first().map(|r| r.indicators.keys().collect()).unwrap_or_default();
        let mut s = String::from("| Encoder |");
        for n in &names {
            s.push_str(&format!(" {} MAE / MAPE |", n.to_uppercase()));
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(names.len()));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("| {} |", r.modules));
            for n in &names {
                s.push_str(&format!(" {} |", r.indicators[*n]));
            }
            s.push('\n');
        }
        s.push_str("\n| Encoder | MPJPE | PA-MPJPE | PVE | LimbLen |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:.1} | {:.1} | {:.1} | {:.1} |\n",
                r.modules, r.pose.mpjpe, r.pose.pa_mpjpe, r.pose.pve, r.pose.limblen_error
            ));
        }
        s
    }
}

/// Row label listing the enabled modules, e.g. `ResNet + Extractor`.
pub fn variant_label(variant: EncoderVariant) -> String {
    let (resnet, extractor, fusion) = variant.modules();
    [(resnet, "ResNet"), (extractor, "Extractor"), (fusion, "Fusion")]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect::<Vec<_>>()
        .join(" + ")
}

/// Runs the full two-phase pipeline for every encoder variant under one seed.
pub fn ablate(config: &PipelineConfig, phase1_data: &[GaitSequence], benchmark: &[GaitSequence]) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for variant in EncoderVariant::ALL {
        let mut c = config.clone();
        c.model.encoder.variant = variant;
        let out = run_two_phase(&c, phase1_data, benchmark)?;
        rows.push(AblationRow {
            variant,
            modules: variant_label(variant),
            pose: out.phase1.heldout.aggregate,
            indicators: out.phase2.aggregate,
        });
    }
    Ok(AblationReport { seed: config.seed, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold_id: usize,
    pub train_subjects: usize,
    pub test_subjects: usize,
    pub indicators: BTreeMap<String, IndicatorError>,
}

pub const BUNDLE_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub phase1_epochs: Vec<EpochMetrics>,
    pub loss_steps: usize,
    pub final_loss: Option<LossRecord>,
    /// Held-out pose metrics merged with phase-II indicator errors.
    pub metrics: MetricReport,
    pub folds: Vec<FoldSummary>,
    pub indicator_totals: BTreeMap<String, IndicatorError>,
    pub baseline_totals: BTreeMap<String, IndicatorError>,
    pub ablation: Option<AblationReport>,
    pub timeseries_rows: usize,
}

fn read_optional<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Collates whatever artifacts exist in `run_dir` and writes `bundle.json`,
/// `timeseries.csv` and `folds.csv` under `out_dir`.
pub fn report(run_dir: &Path, out_dir: &Path) -> Result<ReportBundle> {
    let epochs: Vec<EpochMetrics> = read_optional(&run_dir.join(EPOCHS_FILE))?.unwrap_or_default();
    let log_path = run_dir.join(LOSS_LOG_FILE);
    let log = if log_path.exists() { read_loss_log(&log_path)? } else { Vec::new() };
    let mut metrics: MetricReport = read_optional(&run_dir.join(HELDOUT_FILE))?.unwrap_or_default();
    let phase2: Phase2Report = read_optional(&run_dir.join(PHASE2_FILE))?.unwrap_or_default();
    let ablation: Option<AblationReport> = read_optional(&run_dir.join(ABLATION_FILE))?;

    let folds: Vec<FoldSummary> = phase2
        .folds
        .iter()
        .map(|f| FoldSummary {
            fold_id: f.fold_id,
            train_subjects: f.fit_sequence_ids.len(),
            test_subjects: f.test_sequence_ids.len(),
            indicators: f.indicators.iter().map(|(k, v)| (k.clone(), v.error)).collect(),
        })
        .collect();
    let names: BTreeSet<String> = folds.iter().flat_map(|f| f.indicators.keys().cloned()).collect();
    let indicator_totals: BTreeMap<String, IndicatorError> = names
        .iter()
        .map(|n| (n.clone(), fold_mean(&phase2.folds, n, |f| f.error)))
        .collect();
    metrics.indicator_errors = indicator_totals.clone();

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ts_path = out_dir.join("timeseries.csv");
    let f = fs::File::create(&ts_path).map_err(|e| Error::io(&ts_path, e))?;
    metrics.write_timeseries_csv(BufWriter::new(f))?;

    let folds_path = out_dir.join("folds.csv");
    let mut w = csv::Writer::from_path(&folds_path).map_err(|e| Error::format(&folds_path, e.to_string()))?;
    w.write_record(["fold_id", "indicator", "mae", "mape"])
        .map_err(|e| Error::format(&folds_path, e.to_string()))?;
    for f in &folds {
        for (n, e) in &f.indicators {
            w.write_record([f.fold_id.to_string(), n.clone(), e.mae.to_string(), e.mape.to_string()])
                .map_err(|e| Error::format(&folds_path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(&folds_path, e))?;

    let bundle = ReportBundle {
        schema_version: BUNDLE_SCHEMA,
        phase1_epochs: epochs,
        loss_steps: log.len(),
        final_loss: log.last().copied(),
        timeseries_rows: metrics.total_frames(),
        metrics,
        folds,
        indicator_totals,
        baseline_totals: phase2.baseline,
        ablation,
    };
    write_json(&out_dir.join("bundle.json"), &bundle)?;
    Ok(bundle)
}

pub fn load_model(path: &Path) -> Result<GlanceNet> {
    load_checkpoint(path)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::glance::EncoderConfig;
    use crate::head::RegressorConfig;
    use crate::synth::generate;
    use crate::temporal::GruConfig;

    pub(crate) fn tiny_pipeline() -> PipelineConfig {
        let data = SynthConfig {
            subjects: 10,
            frames: 16,
            height: 16,
            width: 16,
            seed: 7,
            ..SynthConfig::default()
        };
        PipelineConfig {
            phase1_data: data.clone(),
            benchmark: SynthConfig { seed: 8, ..data },
            model: ModelConfig {
                encoder: EncoderConfig {
                    backbone_channels: 4,
                    backbone_blocks: 1,
                    stage_channels: [4, 4, 4],
                    fused_dim: 8,
                    input_size: (16, 16),
                    ..EncoderConfig::default()
                },
                gru: GruConfig {
                    input_dim: 8,
                    hidden_dim: 8,
                    ..GruConfig::default()
                },
                regressor: RegressorConfig {
                    hidden: 16,
                    ..RegressorConfig::default()
                },
                discriminator_hidden: 4,
            },
            train: TrainConfig {
                batch_size: 4,
                epochs: 1,
                ..TrainConfig::default()
            },
            folds: 5,
            ..PipelineConfig::default()
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(crate::synth::subject_id).collect()
    }

    #[test]
    fn folds_partition_subjects() {
        let all = ids(85);
        let folds = make_folds(&all, 5, 3).unwrap();
        let mut union = BTreeSet::new();
        for f in &folds {
            assert_eq!(f.test_subject_ids.len(), 17);
            assert_eq!(f.train_subject_ids.len(), 68);
            let train: BTreeSet<_> = f.train_subject_ids.iter().collect();
            assert!(f.test_subject_ids.iter().all(|t| !train.contains(t)));
            for t in &f.test_subject_ids {
                assert!(union.insert(t.clone()), "{t} tested twice");
            }
        }
        assert_eq!(union.into_iter().collect::<Vec<_>>(), all);
        assert_eq!(folds, make_folds(&all, 5, 3).unwrap());
        assert_ne!(folds, make_folds(&all, 5, 4).unwrap());
    }

    #[test]
    fn uneven_folds_stay_within_one_subject() {
        let folds = make_folds(&ids(87), 5, 0).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test_subject_ids.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 87);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(make_folds(&ids(3), 5, 0).is_err());
        assert!(make_folds(&ids(10), 1, 0).is_err());
    }

    #[test]
    fn config_validation() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert!(PipelineConfig { folds: 1, ..c.clone() }.validate().is_err());
        assert!(PipelineConfig { pool_factor: 3, ..c.clone() }.validate().is_err());
        assert!(PipelineConfig {
            indicators: vec!["iq".into()],
            ..c.clone()
        }
        .validate()
        .is_err());
        let mut same = c.clone();
        same.benchmark.seed = same.phase1_data.seed;
        assert!(same.validate().is_err());
        let reseeded = c.with_seed(5);
        assert_ne!(reseeded.phase1_data.seed, reseeded.benchmark.seed);
        let json = serde_json::to_string(&reseeded).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&json).unwrap(), reseeded);
        assert_eq!(serde_json::from_str::<PipelineConfig>("{}").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn learning_rate_schedule() {
        let t = TrainConfig::default();
        assert_eq!(t.lr_at(0), 1e-3);
        assert_eq!(t.lr_at(4), 1e-3);
        assert!((t.lr_at(5) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let mut c = tiny_pipeline();
        c.train.epochs = 0;
        let data = generate(&c.phase1_data).unwrap();
        let out = train_phase1(&c, &data).unwrap();
        let train = owned(&select(&data, &out.train_subjects));
        let init = initial_model(&c, &train).unwrap();
        assert_eq!(crate::nn::flatten_values(&out.model), crate::nn::flatten_values(&init));
        assert!(out.loss_log.is_empty());
        assert_eq!(out.epochs.len(), 1);
    }

    #[test]
    fn feature_pooling_matches_windowed_mean() {
        let c = tiny_pipeline();
        let data = generate(&c.benchmark).unwrap();
        let model = GlanceNet::new(c.model.clone(), 1).unwrap();
        let raw = extract_features(&model, &data[..2], 1).unwrap();
        let last = model.sequence_feature(&data[0].frames).unwrap().last;
        assert_eq!(raw.rows[0].features, last.to_vec());
        let pooled = extract_features(&model, &data[..2], 4).unwrap();
        assert_eq!(pooled.feature_dim, 4);
        for (k, v) in pooled.rows[0].features.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..4 {
                s += last[4 * k + i];
            }
            assert!((v - s / 4.0).abs() < 1e-12);
        }
        assert!(extract_features(&model, &data[..1], 3).is_err());
    }

    #[test]
    fn constant_video_gives_stable_features() {
        let c = tiny_pipeline();
        let mut data = generate(&c.benchmark).unwrap();
        data.truncate(1);
        data[0].frames.fill(0.5);
        let model = GlanceNet::new(c.model.clone(), 1).unwrap();
        let a = extract_features(&model, &data, 2).unwrap();
        let b = extract_features(&model, &data, 2).unwrap();
        assert_eq!(a, b);
    }

    fn synthetic_table(n: usize, label: impl Fn(&[f64]) -> f64) -> FeatureTable {
        synthetic_table_dim(n, 6, label)
    }

    fn synthetic_table_dim(n: usize, dim: usize, label: impl Fn(&[f64]) -> f64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::Rng;
        let rows = (0..n)
            .map(|i| {
                let features: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v = label(&features);
                FeatureRow {
                    sequence_id: format!("s{i:04}_00"),
                    subject_id: crate::synth::subject_id(i),
                    indicators: HealthIndicators {
                        age: v,
                        height: v,
                        weight: v,
                        bmi: v,
                    },
                    features,
                }
            })
            .collect();
        FeatureTable {
            pool_factor: 1,
            feature_dim: dim,
            rows,
        }
    }

    fn subject_ids_of(t: &FeatureTable) -> Vec<String> {
        t.rows.iter().map(|r| r.subject_id.clone()).collect()
    }

    #[test]
    fn phase2_constant_labels() {
        let table = synthetic_table(40, |_| 25.0);
        let folds = make_folds(&subject_ids_of(&table), 5, 0).unwrap();
        let r = train_phase2(&table, &folds, &SvrConfig::default(), &["bmi".into()]).unwrap();
        assert!(r.aggregate["bmi"].mae < 0.1 * 1.0);
        audit_leakage(&r, &table, &folds).unwrap();
    }

    #[test]
    fn phase2_planted_linear_model() {
        let table = synthetic_table(85, |f| 160.0 + 5.0 * f[0] - 3.0 * f[3] + 2.0 * f[5]);
        let folds = make_folds(&subject_ids_of(&table), 5, 0).unwrap();
        let svr = SvrConfig {
            kernel: crate::svr::Kernel::Linear,
            epsilon: 0.01,
            ..SvrConfig::default()
        };
        let r = train_phase2(&table, &folds, &svr, &["height".into()]).unwrap();
        assert!(r.aggregate["height"].mape < 1.0, "{:?}", r.aggregate);
    }

    #[test]
    fn phase2_shuffled_labels_match_mean_baseline() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Default pooled feature length: 256 / 4.
        let mut table = synthetic_table_dim(85, 64, |_| 0.0);
        for r in &mut table.rows {
            let v = 22.0 + 3.0 * rng.random_range(-1.0..1.0);
            r.indicators.bmi = v;
        }
        let folds = make_folds(&subject_ids_of(&table), 5, 0).unwrap();
        let r = train_phase2(&table, &folds, &SvrConfig::default(), &["bmi".into()]).unwrap();
        let (m, b) = (r.aggregate["bmi"].mape, r.baseline["bmi"].mape);
        assert!((m - b).abs() <= 0.2 * b, "svr {m} vs baseline {b}");
    }

    #[test]
    fn phase2_rejects_tiny_folds() {
        let table = synthetic_table(3, |_| 1.0);
        let folds = vec![FoldSplit {
            fold_id: 0,
            train_subject_ids: vec!["s0000".into()],
            test_subject_ids: vec!["s0001".into(), "s0002".into()],
        }];
        assert!(matches!(
            train_phase2(&table, &folds, &SvrConfig::default(), &["bmi".into()]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn leakage_audit_catches_overlap() {
        let table = synthetic_table(20, |f| 10.0 + f[0]);
        let folds = make_folds(&subject_ids_of(&table), 4, 0).unwrap();
        let mut r = train_phase2(&table, &folds, &SvrConfig::default(), &["age".into()]).unwrap();
        audit_leakage(&r, &table, &folds).unwrap();
        let leaked = r.folds[0].test_sequence_ids[0].clone();
        r.folds[0].fit_sequence_ids.push(leaked);
        assert!(audit_leakage(&r, &table, &folds).is_err());
    }

    #[test]
    fn empty_run_dir_gives_empty_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report");
        let b = report(dir.path(), &out).unwrap();
        assert_eq!(b.schema_version, BUNDLE_SCHEMA);
        assert!(b.folds.is_empty() && b.phase1_epochs.is_empty() && b.ablation.is_none());
        assert_eq!(b.timeseries_rows, 0);
        let back: ReportBundle = read_json(&out.join("bundle.json")).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn ablation_markdown_schema() {
        let mut indicators = BTreeMap::new();
        for n in HealthIndicators::NAMES {
            indicators.insert(n.to_string(), IndicatorError { mae: 2.3, mape: 9.9 });
        }
        let rows = EncoderVariant::ALL
            .iter()
            .map(|v| AblationRow {
                variant: *v,
                modules: variant_label(*v),
                pose: AggregateMetrics::default(),
                indicators: indicators.clone(),
            })
            .collect();
        let md = AblationReport { seed: 0, rows }.to_markdown();
        assert!(md.contains("2.30 / 9.90%"));
        assert_eq!(md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Encoder")).count(), 6);
    }
}
