//! The three-fold protocol: train a head per fold, score segments and clips,
//! summarize across folds and sweep layers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{aggregate, AggregationError, AggregationRule};
use crate::dataset::{
    DatasetError, DatasetManifest, FoldAssignment, FoldProtocol, FoldSplit, NUM_SETS,
};
use crate::encoders::FeatureMatrix;
use crate::mlp::{
    predict_segments, train_head, MlpError, SegmentSet, TrainConfig, TrainedHead, TrainingLog,
};
use crate::rng::{stream, Xorshift64Star};
use crate::store::{FeatureStore, StoreError};

mod report;

pub use report::{render_confusion, render_report, MeanStd, ReportFormat};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("missing features for clip {clip_id} ({model_id}, layer {layer}): {reason}")]
    MissingFeatures {
        clip_id: String,
        model_id: String,
        layer: u16,
        reason: String,
    },
    #[error("clip {0} is not in the manifest")]
    UnknownClip(String),
    #[error("fold {fold} has an empty {split} split")]
    EmptySplit { fold: usize, split: &'static str },
    #[error("no layers requested")]
    NoLayers,
    #[error("nothing to render")]
    NoReports,
    #[error("features of clip {clip_id} are unusable: {reason}")]
    BadFeatures { clip_id: String, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Where per-clip feature matrices come from.
pub trait FeatureSource: Sync {
    fn features(&self, clip_id: &str, layer: u16) -> Result<FeatureMatrix, EvaluationError>;
}

/// Features held in memory, keyed by `(clip_id, layer)`.
#[derive(Debug, Clone, Default)]
pub struct InMemoryFeatures {
    map: HashMap<(String, u16), FeatureMatrix>,
}

impl InMemoryFeatures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, matrix: FeatureMatrix) {
        self.map
            .insert((matrix.clip_id.clone(), matrix.layer_index), matrix);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl FromIterator<FeatureMatrix> for InMemoryFeatures {
    fn from_iter<I: IntoIterator<Item = FeatureMatrix>>(iter: I) -> Self {
        let mut out = Self::new();
        iter.into_iter().for_each(|m| out.insert(m));
        out
    }
}

impl FeatureSource for InMemoryFeatures {
    fn features(&self, clip_id: &str, layer: u16) -> Result<FeatureMatrix, EvaluationError> {
        self.map
            .get(&(clip_id.to_owned(), layer))
            .cloned()
            .ok_or_else(|| EvaluationError::MissingFeatures {
                clip_id: clip_id.to_owned(),
                model_id: "<memory>".into(),
                layer,
                reason: "not loaded".into(),
            })
    }
}

/// Features read lazily from a [`FeatureStore`] for one model.
#[derive(Debug, Clone)]
pub struct StoreFeatures {
    pub store: FeatureStore,
    pub model_id: String,
}

impl StoreFeatures {
    pub fn new(store: FeatureStore, model_id: impl Into<String>) -> Self {
        Self {
            store,
            model_id: model_id.into(),
        }
    }
}

impl FeatureSource for StoreFeatures {
    fn features(&self, clip_id: &str, layer: u16) -> Result<FeatureMatrix, EvaluationError> {
        self.store.get(&self.model_id, layer, clip_id).map_err(|e| {
            EvaluationError::MissingFeatures {
                clip_id: clip_id.to_owned(),
                model_id: self.model_id.clone(),
                layer,
                reason: e.to_string(),
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub train: TrainConfig,
    pub protocol: FoldProtocol,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            protocol: FoldProtocol::Rotation,
        }
    }
}

/// Seed of the head trained for `fold`, derived from the run seed.
pub fn fold_train_seed(seed: u64, fold: usize) -> u64 {
    Xorshift64Star::for_item(seed, stream::FOLD_TRAIN, fold as u64).next_u64()
}

/// Square count matrix, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[usize] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn trace(&self) -> usize {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Test-set scores of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub segments_correct: usize,
    pub segments_total: usize,
    /// Clip-level confusion per rule, indexed like [`AggregationRule::ALL`].
    pub confusion: [ConfusionMatrix; 4],
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

impl FoldResult {
    /// Correct test segments over all test segments, in percent.
    pub fn segment_accuracy(&self) -> f64 {
        percent(self.segments_correct, self.segments_total)
    }

    pub fn clip_accuracy(&self, rule: AggregationRule) -> f64 {
        let m = &self.confusion[rule.index()];
        percent(m.trace(), m.total())
    }

    pub fn clips(&self) -> usize {
        self.confusion[0].total()
    }
}

/// Everything produced by one fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub result: FoldResult,
    pub head: TrainedHead,
    pub log: TrainingLog,
}

fn label_of(labels: &HashMap<&str, usize>, clip_id: &str) -> Result<usize, EvaluationError> {
    labels
        .get(clip_id)
        .copied()
        .ok_or_else(|| EvaluationError::UnknownClip(clip_id.to_owned()))
}

fn load_segments(
    source: &dyn FeatureSource,
    labels: &HashMap<&str, usize>,
    clips: &[String],
    layer: u16,
) -> Result<SegmentSet, EvaluationError> {
    let mut set: Option<SegmentSet> = None;
    for clip_id in clips {
        let label = label_of(labels, clip_id)?;
        let m = source.features(clip_id, layer)?;
        set.get_or_insert_with(|| SegmentSet::new(m.dim))
            .push_clip(&m, label)
            .map_err(|e| EvaluationError::BadFeatures {
                clip_id: clip_id.clone(),
                reason: e.to_string(),
            })?;
    }
    Ok(set.unwrap_or_default())
}

/// Scores an already trained head on `test` clips.
pub fn test_head(
    head: &TrainedHead,
    source: &dyn FeatureSource,
    manifest: &DatasetManifest,
    test: &[String],
    layer: u16,
    fold: usize,
) -> Result<FoldResult, EvaluationError> {
    if test.is_empty() {
        return Err(EvaluationError::EmptySplit {
            fold,
            split: "test",
        });
    }
    let labels = manifest.labels_by_clip();
    let classes = manifest.num_classes();
    let mut result = FoldResult {
        fold,
        segments_correct: 0,
        segments_total: 0,
        confusion: std::array::from_fn(|_| ConfusionMatrix::new(classes)),
    };
    for clip_id in test {
        let label = label_of(&labels, clip_id)?;
        let m = source.features(clip_id, layer)?;
        let preds = predict_segments(head, &m).map_err(|e| EvaluationError::BadFeatures {
            clip_id: clip_id.clone(),
            reason: e.to_string(),
        })?;
        if preds.is_empty() {
            return Err(EvaluationError::BadFeatures {
                clip_id: clip_id.clone(),
                reason: "no frames".into(),
            });
        }
        result.segments_total += preds.len();
        result.segments_correct += preds.iter().filter(|p| p.predicted() == label).count();
        for rule in AggregationRule::ALL {
            let clip = aggregate(&preds, rule)?;
            result.confusion[rule.index()].add(label, clip.predicted);
        }
    }
    Ok(result)
}

/// Trains on the fold's train clips (early stopping on validation clips) and
/// scores the test clips.
pub fn evaluate_fold(
    source: &dyn FeatureSource,
    manifest: &DatasetManifest,
    split: &FoldSplit,
    layer: u16,
    config: &TrainConfig,
) -> Result<FoldOutcome, EvaluationError> {
    let fold = split.fold;
    for (name, clips) in [
        ("train", &split.train),
        ("validation", &split.val),
        ("test", &split.test),
    ] {
        if clips.is_empty() {
            return Err(EvaluationError::EmptySplit { fold, split: name });
        }
    }
    let labels = manifest.labels_by_clip();
    let train = load_segments(source, &labels, &split.train, layer)?;
    let val = load_segments(source, &labels, &split.val, layer)?;
    let (head, log) = train_head(&train, &val, manifest.num_classes(), config)?;
    drop((train, val));
    log::info!(
        "fold {fold} layer {layer}: best epoch {} of {}",
        log.best_epoch,
        log.epochs.len()
    );
    let result = test_head(&head, source, manifest, &split.test, layer, fold)?;
    Ok(FoldOutcome { result, head, log })
}

/// Per-fold scores of one model layer plus their mean and sample standard
/// deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub model_id: String,
    pub layer: u16,
    pub genres: Vec<String>,
    pub folds: Vec<FoldResult>,
    pub segment: MeanStd,
    /// Indexed like [`AggregationRule::ALL`].
    pub clip: [MeanStd; 4],
}

impl EvaluationReport {
    pub fn from_folds(
        model_id: &str,
        layer: u16,
        genres: Vec<String>,
        folds: Vec<FoldResult>,
    ) -> Self {
        let seg: Vec<f64> = folds.iter().map(FoldResult::segment_accuracy).collect();
        let clip = AggregationRule::ALL.map(|rule| {
            let acc: Vec<f64> = folds.iter().map(|f| f.clip_accuracy(rule)).collect();
            MeanStd::of(&acc)
        });
        Self {
            model_id: model_id.to_owned(),
            layer,
            genres,
            segment: MeanStd::of(&seg),
            clip,
            folds,
        }
    }

    pub fn clip_for(&self, rule: AggregationRule) -> MeanStd {
        self.clip[rule.index()]
    }
}

/// A cross-validated layer together with its per-fold heads and logs.
#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub report: EvaluationReport,
    pub heads: Vec<TrainedHead>,
    pub logs: Vec<TrainingLog>,
}

/// Runs all three folds of one layer.
pub fn cross_validate(
    source: &dyn FeatureSource,
    manifest: &DatasetManifest,
    folds: &FoldAssignment,
    model_id: &str,
    layer: u16,
    config: &EvalConfig,
) -> Result<CrossValidation, EvaluationError> {
    let mut results = Vec::with_capacity(NUM_SETS);
    let mut heads = Vec::with_capacity(NUM_SETS);
    let mut logs = Vec::with_capacity(NUM_SETS);
    for fold in 0..NUM_SETS {
        let split = folds.split(fold, config.protocol)?;
        let train_cfg = TrainConfig {
            seed: fold_train_seed(config.train.seed, fold),
            ..config.train.clone()
        };
        let out = evaluate_fold(source, manifest, &split, layer, &train_cfg)?;
        results.push(out.result);
        heads.push(out.head);
        logs.push(out.log);
    }
    Ok(CrossValidation {
        report: EvaluationReport::from_folds(model_id, layer, manifest.genres.clone(), results),
        heads,
        logs,
    })
}

/// Best layer per metric, ties going to the lower layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BestLayers {
    pub segment: u16,
    /// Indexed like [`AggregationRule::ALL`].
    pub clip: [u16; 4],
}

pub fn best_layers(reports: &[EvaluationReport]) -> Result<BestLayers, EvaluationError> {
    let pick = |score: &dyn Fn(&EvaluationReport) -> f64| -> u16 {
        let mut best = &reports[0];
        for r in &reports[1..] {
            let (s, b) = (score(r), score(best));
            if s > b || (s == b && r.layer < best.layer) {
                best = r;
            }
        }
        best.layer
    };
    if reports.is_empty() {
        return Err(EvaluationError::NoReports);
    }
    Ok(BestLayers {
        segment: pick(&|r| r.segment.mean),
        clip: AggregationRule::ALL.map(|rule| pick(&|r: &EvaluationReport| r.clip_for(rule).mean)),
    })
}

#[derive(Debug, Clone)]
pub struct LayerSweep {
    pub runs: Vec<CrossValidation>,
    pub best: BestLayers,
}

impl LayerSweep {
    pub fn reports(&self) -> Vec<EvaluationReport> {
        self.runs.iter().map(|r| r.report.clone()).collect()
    }
}

/// Cross-validates every layer in `layers`, in the given order.
pub fn layer_sweep(
    source: &dyn FeatureSource,
    manifest: &DatasetManifest,
    folds: &FoldAssignment,
    model_id: &str,
    layers: &[u16],
    config: &EvalConfig,
) -> Result<LayerSweep, EvaluationError> {
    if layers.is_empty() {
        return Err(EvaluationError::NoLayers);
    }
    let runs = layers
        .iter()
        .map(|&layer| cross_validate(source, manifest, folds, model_id, layer, config))
        .collect::<Result<Vec<_>, _>>()?;
    let reports: Vec<EvaluationReport> = runs.iter().map(|r| r.report.clone()).collect();
    let best = best_layers(&reports)?;
    Ok(LayerSweep { runs, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_bookkeeping() {
        let mut m = ConfusionMatrix::new(3);
        m.add(0, 0);
        m.add(0, 2);
        m.add(2, 2);
        assert_eq!(m.trace(), 2);
        assert_eq!(m.total(), 3);
        assert_eq!(m.row(0), &[1, 0, 1]);
    }

    #[test]
    fn fold_seeds_differ() {
        let s: Vec<u64> = (0..3).map(|f| fold_train_seed(42, f)).collect();
        assert!(s[0] != s[1] && s[1] != s[2] && s[0] != s[2]);
        assert_eq!(fold_train_seed(42, 1), s[1]);
    }

    #[test]
    fn best_layer_ties_prefer_lower() {
        let mk = |layer, seg| EvaluationReport {
            model_id: "m".into(),
            layer,
            genres: vec![],
            folds: vec![],
            segment: MeanStd {
                mean: seg,
                std: 0.0,
            },
            clip: [MeanStd {
                mean: 50.0,
                std: 0.0,
            }; 4],
        };
        let best = best_layers(&[mk(6, 70.0), mk(3, 80.0), mk(1, 80.0)]).unwrap();
        assert_eq!(best.segment, 1);
        assert_eq!(best.clip, [1; 4]);
        assert!(best_layers(&[]).is_err());
    }

    #[test]
    fn missing_clip_is_named() {
        let src = InMemoryFeatures::new();
        let err = src.features("blues.00042", 3).unwrap_err();
        assert!(err.to_string().contains("blues.00042"));
    }
}
