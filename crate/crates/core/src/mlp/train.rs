//! Training loop, input standardization and segment-level inference.

use serde::{Deserialize, Serialize};

use super::{
    adam_step, argmax, evaluate_batch, loss_and_grad, AdamConfig, AdamState, DropoutMasks,
    MlpError, MlpParams, MlpShape,
};
use crate::encoders::FeatureMatrix;
use crate::rng::{stream, Xorshift64Star};

/// Lower bound on a standardization divisor.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout_rate: f64,
    pub patience: usize,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 1500,
            max_epochs: 200,
            dropout_rate: 0.4,
            patience: 10,
            seed: 0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: &str| Err(MlpError::Config(m.into()));
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Labelled segments gathered from many clips, row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentSet {
    pub dim: usize,
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
}

impl SegmentSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Appends every frame of `matrix`, each carrying the clip's label.
    pub fn push_clip(&mut self, matrix: &FeatureMatrix, label: usize) -> Result<(), MlpError> {
        if matrix.dim != self.dim {
            return Err(MlpError::Shape(format!(
                "clip {} has dim {}, expected {}",
                matrix.clip_id, matrix.dim, self.dim
            )));
        }
        self.features.extend_from_slice(&matrix.values);
        self.labels
            .extend(std::iter::repeat_n(label, matrix.frames()));
        Ok(())
    }

    pub fn push_row(&mut self, row: &[f32], label: usize) {
        assert_eq!(row.len(), self.dim);
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Per-dimension affine map `(x - mean) / std` fitted on training segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation of every column, the latter
    /// floored at [`STD_FLOOR`].
    pub fn fit(set: &SegmentSet) -> Self {
        let n = set.len().max(1) as f64;
        let mut mean = vec![0.0f64; set.dim];
        for row in set.features.chunks_exact(set.dim) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; set.dim];
        for row in set.features.chunks_exact(set.dim) {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x as f64 - m).powi(2);
            }
        }
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var
                .iter()
                .map(|&v| (v / n).sqrt().max(STD_FLOOR) as f32)
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_into(&self, row: &[f32], out: &mut Vec<f32>) {
        out.extend(
            row.iter()
                .zip(&self.mean)
                .zip(&self.std)
                .map(|((&x, &m), &s)| (x - m) / s),
        );
    }

    pub fn apply_rows(&self, rows: &[f32]) -> Vec<f32> {
        let mut out = Vec::with_capacity(rows.len());
        for row in rows.chunks_exact(self.dim()) {
            self.apply_into(row, &mut out);
        }
        out
    }
}

/// A trained head ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub standardizer: Standardizer,
    pub params: MlpParams<f32>,
}

impl TrainedHead {
    pub fn input_dim(&self) -> usize {
        self.params.shape().input
    }

    pub fn num_classes(&self) -> usize {
        self.params.shape().classes
    }

    /// Class probabilities for row-major raw (unstandardized) inputs.
    pub fn predict_rows(&self, rows: &[f32]) -> Vec<SegmentPrediction> {
        let n = rows.len() / self.input_dim();
        let x = self.standardizer.apply_rows(rows);
        let probs = self.params.predict_batch(&x, n);
        probs
            .chunks_exact(self.num_classes())
            .map(|p| SegmentPrediction {
                probabilities: p.iter().map(|&v| v as f64).collect(),
            })
            .collect()
    }
}

/// Class distribution predicted for one 20 ms segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPrediction {
    pub probabilities: Vec<f64>,
}

impl SegmentPrediction {
    pub fn predicted(&self) -> usize {
        argmax(&self.probabilities)
    }
}

impl AsRef<[f64]> for SegmentPrediction {
    fn as_ref(&self) -> &[f64] {
        &self.probabilities
    }
}

/// One prediction per frame, in frame order, with dropout disabled.
pub fn predict_segments(
    head: &TrainedHead,
    matrix: &FeatureMatrix,
) -> Result<Vec<SegmentPrediction>, MlpError> {
    if matrix.dim != head.input_dim() {
        return Err(MlpError::Shape(format!(
            "clip {} has dim {}, head expects {}",
            matrix.clip_id,
            matrix.dim,
            head.input_dim()
        )));
    }
    Ok(head.predict_rows(&matrix.values))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub early_stopped: bool,
}

/// Verdict after one epoch's validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopCheck {
    pub improved: bool,
    pub stop: bool,
}

/// Tracks the best validation loss.
///
/// An epoch improves when its loss is strictly below the best so far. Training
/// stops at the first epoch that is more than `patience` epochs past the best
/// one; with `patience = 1` and a best epoch of 1, that is epoch 3.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopCheck {
        let improved = loss < self.best_loss;
        if improved {
            self.best_loss = loss;
            self.best_epoch = epoch;
        }
        StopCheck {
            improved,
            stop: epoch - self.best_epoch > self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

fn check_labels(set: &SegmentSet, classes: usize) -> Result<(), MlpError> {
    match set.labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(MlpError::Label { label, classes }),
        None => Ok(()),
    }
}

/// Trains a head on `train` segments, early-stopping on `val` loss.
///
/// Each epoch reshuffles the training segments and walks them in batches of
/// `batch_size` (the last one may be short), sampling fresh dropout masks per
/// batch. The weights of the epoch with the lowest validation loss are
/// returned.
pub fn train_head(
    train: &SegmentSet,
    val: &SegmentSet,
    num_classes: usize,
    config: &TrainConfig,
) -> Result<(TrainedHead, TrainingLog), MlpError> {
    config.validate()?;
    if train.is_empty() {
        return Err(MlpError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(MlpError::EmptySplit("validation"));
    }
    if train.dim != val.dim || train.dim == 0 {
        return Err(MlpError::Shape(format!(
            "train dim {} vs validation dim {}",
            train.dim, val.dim
        )));
    }
    if num_classes == 0 {
        return Err(MlpError::Shape("need at least one class".into()));
    }
    check_labels(train, num_classes)?;
    check_labels(val, num_classes)?;
    for set in [train, val] {
        if let Some(i) = set.features.iter().position(|v| !v.is_finite()) {
            return Err(MlpError::NonFinite { row: i / set.dim });
        }
    }

    let dim = train.dim;
    let standardizer = if config.standardize {
        Standardizer::fit(train)
    } else {
        Standardizer::identity(dim)
    };
    let val_x = standardizer.apply_rows(&val.features);

    let shape = MlpShape::standard(dim, num_classes);
    let mut params = MlpParams::<f32>::init(shape, config.seed);
    let mut adam = AdamState::new(&params);
    let adam_cfg = config.adam();
    let mut shuffle_rng = Xorshift64Star::with_stream(config.seed, stream::EPOCH_SHUFFLE);
    let mut dropout_rng = Xorshift64Star::with_stream(config.seed, stream::DROPOUT);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch_x = Vec::with_capacity(config.batch_size.min(train.len()) * dim);
    let mut batch_y = Vec::with_capacity(config.batch_size.min(train.len()));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = params.clone();
    let mut epochs = Vec::new();
    let mut early_stopped = false;

    for epoch in 1..=config.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in idx {
                standardizer.apply_into(train.row(i), &mut batch_x);
                batch_y.push(train.labels[i]);
            }
            let masks = (config.dropout_rate > 0.0).then(|| {
                DropoutMasks::sample(&mut dropout_rng, idx.len(), shape, config.dropout_rate)
            });
            let (loss, grads) = loss_and_grad(&params, &batch_x, &batch_y, masks.as_ref())?;
            loss_sum += loss as f64 * idx.len() as f64;
            adam_step(&mut params, &grads, &mut adam, &adam_cfg);
        }
        let (val_loss, correct) = evaluate_batch(&params, &val_x, &val.labels);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_accuracy: correct as f64 / val.len() as f64,
        };
        log::debug!(
            "epoch {epoch}: train {:.5} val {:.5} acc {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_accuracy
        );
        epochs.push(record);
        let check = stopper.observe(epoch, val_loss);
        if check.improved {
            best.clone_from(&params);
        }
        if check.stop {
            early_stopped = true;
            break;
        }
    }

    let log = TrainingLog {
        epochs,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
        early_stopped,
    };
    Ok((
        TrainedHead {
            standardizer,
            params: best,
        },
        log,
    ))
}
