//! The classification head: `dim -> 128 -> 64 -> C` with ReLU, inverted
//! dropout after both hidden layers and a softmax output, trained with Adam
//! on mean categorical cross-entropy.
//!
//! Weight matrices are stored `inputs x outputs`, row-major, so a layer
//! computes `z[j] = b[j] + sum_i x[i] * w[i * outputs + j]`.

use std::fmt::Debug;

use num_traits::Float;
use rayon::prelude::*;
use thiserror::Error;

use crate::rng::Xorshift64Star;

mod adam;
mod head_file;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use head_file::{decode_head, encode_head, read_head, write_head, HEAD_MAGIC, HEAD_VERSION};
pub use train::{
    predict_segments, train_head, EarlyStopping, EpochRecord, SegmentPrediction, SegmentSet,
    Standardizer, StopCheck, TrainConfig, TrainedHead, TrainingLog, STD_FLOOR,
};

pub const HIDDEN_1: usize = 128;
pub const HIDDEN_2: usize = 64;

/// Rows per work unit when a batch is split across threads. Partial results
/// are always combined in chunk order, so the thread count never changes the
/// numbers.
const CHUNK_ROWS: usize = 128;

#[derive(Debug, Error, PartialEq)]
pub enum MlpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite input at row {row}")]
    NonFinite { row: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
}

/// Floating-point type the head can run in.
pub trait Real: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn cast(x: f64) -> Self;
    fn widen(self) -> f64;
    fn from_f32(x: f32) -> Self;
    /// `c = a b + beta c` for an `m x k` by `k x n` product, every matrix
    /// given by its slice and (row, column) strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        sa: Strides,
        b: &[Self],
        sb: Strides,
        beta: Self,
        c: &mut [Self],
        sc: Strides,
    );
}

/// Row and column strides of a matrix view.
pub type Strides = (usize, usize);

/// Checks that every element addressed by a strided view lies in `len`.
fn in_bounds(rows: usize, cols: usize, (rs, cs): Strides, len: usize) -> bool {
    rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < len
}

macro_rules! real_gemm {
    ($t:ty, $f:path) => {
        fn gemm(
            m: usize,
            k: usize,
            n: usize,
            a: &[$t],
            sa: Strides,
            b: &[$t],
            sb: Strides,
            beta: $t,
            c: &mut [$t],
            sc: Strides,
        ) {
            assert!(
                in_bounds(m, k, sa, a.len())
                    && in_bounds(k, n, sb, b.len())
                    && in_bounds(m, n, sc, c.len())
            );
            // SAFETY: the assertion above keeps every strided access inside
            // the three slices, and `c` is borrowed mutably so it aliases
            // neither input.
            unsafe {
                $f(
                    m,
                    k,
                    n,
                    1.0,
                    a.as_ptr(),
                    sa.0 as isize,
                    sa.1 as isize,
                    b.as_ptr(),
                    sb.0 as isize,
                    sb.1 as isize,
                    beta,
                    c.as_mut_ptr(),
                    sc.0 as isize,
                    sc.1 as isize,
                )
            }
        }
    };
}

impl Real for f32 {
    fn cast(x: f64) -> Self {
        x as f32
    }
    fn widen(self) -> f64 {
        self as f64
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    real_gemm!(f32, matrixmultiply::sgemm);
}

impl Real for f64 {
    fn cast(x: f64) -> Self {
        x
    }
    fn widen(self) -> f64 {
        self
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    real_gemm!(f64, matrixmultiply::dgemm);
}

/// Layer widths of a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

impl MlpShape {
    /// The standard head: two hidden layers of 128 and 64 units.
    pub fn standard(input: usize, classes: usize) -> Self {
        Self {
            input,
            hidden1: HIDDEN_1,
            hidden2: HIDDEN_2,
            classes,
        }
    }

    pub fn is_standard(&self) -> bool {
        self.hidden1 == HIDDEN_1 && self.hidden2 == HIDDEN_2
    }
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    /// `out = x W + b` for `rows` row-major inputs.
    fn forward_into(&self, x: &[T], rows: usize, out: &mut Vec<T>) {
        out.clear();
        for _ in 0..rows {
            out.extend_from_slice(&self.bias);
        }
        let (n_in, n_out) = (self.inputs, self.outputs);
        T::gemm(
            rows,
            n_in,
            n_out,
            x,
            (n_in, 1),
            &self.weights,
            (n_out, 1),
            T::one(),
            out,
            (n_out, 1),
        );
    }

    /// Accumulates `dW += x^T dz` and `db += sum(dz)`.
    fn accumulate_grad(&self, x: &[T], dz: &[T], rows: usize, grad: &mut Dense<T>) {
        let (n_in, n_out) = (self.inputs, self.outputs);
        for dr in dz.chunks_exact(n_out) {
            for (b, &d) in grad.bias.iter_mut().zip(dr) {
                *b = *b + d;
            }
        }
        T::gemm(
            n_in,
            rows,
            n_out,
            x,
            (1, n_in),
            dz,
            (n_out, 1),
            T::one(),
            &mut grad.weights,
            (n_out, 1),
        );
    }

    /// `dx = dz W^T`.
    fn backprop_input(&self, dz: &[T], rows: usize) -> Vec<T> {
        let (n_in, n_out) = (self.inputs, self.outputs);
        let mut dx = vec![T::zero(); rows * n_in];
        T::gemm(
            rows,
            n_out,
            n_in,
            dz,
            (n_out, 1),
            &self.weights,
            (1, n_out),
            T::zero(),
            &mut dx,
            (n_in, 1),
        );
        dx
    }

    fn add_assign(&mut self, other: &Dense<T>) {
        for (a, &b) in self.weights.iter_mut().zip(&other.weights) {
            *a = *a + b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a = *a + b;
        }
    }

    fn scale(&mut self, k: T) {
        self.weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .for_each(|v| *v = *v * k);
    }
}

/// Head weights. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub hidden1: Dense<T>,
    pub hidden2: Dense<T>,
    pub output: Dense<T>,
}

impl<T: Real> MlpParams<T> {
    pub fn zeros(shape: MlpShape) -> Self {
        Self {
            hidden1: Dense::zeros(shape.input, shape.hidden1),
            hidden2: Dense::zeros(shape.hidden1, shape.hidden2),
            output: Dense::zeros(shape.hidden2, shape.classes),
        }
    }

    /// Glorot-uniform weights, `U(-sqrt(6 / (fan_in + fan_out)), +...)`,
    /// drawn row-major layer by layer; zero biases.
    pub fn init(shape: MlpShape, seed: u64) -> Self {
        let mut rng = Xorshift64Star::with_stream(seed, crate::rng::stream::INIT);
        let mut params = Self::zeros(shape);
        for layer in params.layers_mut() {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::cast(rng.uniform(-bound, bound));
            }
        }
        params
    }

    pub fn shape(&self) -> MlpShape {
        MlpShape {
            input: self.hidden1.inputs,
            hidden1: self.hidden1.outputs,
            hidden2: self.hidden2.outputs,
            classes: self.output.outputs,
        }
    }

    pub fn layers(&self) -> [&Dense<T>; 3] {
        [&self.hidden1, &self.hidden2, &self.output]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense<T>; 3] {
        [&mut self.hidden1, &mut self.hidden2, &mut self.output]
    }

    /// `W1, b1, W2, b2, W3, b3`.
    pub fn tensors(&self) -> [&[T]; 6] {
        [
            &self.hidden1.weights,
            &self.hidden1.bias,
            &self.hidden2.weights,
            &self.hidden2.bias,
            &self.output.weights,
            &self.output.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 6] {
        [
            &mut self.hidden1.weights,
            &mut self.hidden1.bias,
            &mut self.hidden2.weights,
            &mut self.hidden2.bias,
            &mut self.output.weights,
            &mut self.output.bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn convert<U: Real>(&self) -> MlpParams<U> {
        let conv = |d: &Dense<T>| Dense {
            inputs: d.inputs,
            outputs: d.outputs,
            weights: d.weights.iter().map(|&v| U::cast(v.widen())).collect(),
            bias: d.bias.iter().map(|&v| U::cast(v.widen())).collect(),
        };
        MlpParams {
            hidden1: conv(&self.hidden1),
            hidden2: conv(&self.hidden2),
            output: conv(&self.output),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        self.hidden1.add_assign(&other.hidden1);
        self.hidden2.add_assign(&other.hidden2);
        self.output.add_assign(&other.output);
    }

    fn scale(&mut self, k: T) {
        self.layers_mut().into_iter().for_each(|l| l.scale(k));
    }

    /// Class probabilities for one input vector.
    ///
    /// `masks`, when given, holds pre-scaled dropout multipliers for the two
    /// hidden layers (`0` or `1 / (1 - p)` per unit).
    pub fn forward(&self, x: &[T], masks: Option<(&[T], &[T])>) -> Result<Vec<T>, MlpError> {
        let shape = self.shape();
        if x.len() != shape.input {
            return Err(MlpError::Shape(format!(
                "input has {} features, head expects {}",
                x.len(),
                shape.input
            )));
        }
        if let Some((m1, m2)) = masks {
            if m1.len() != shape.hidden1 || m2.len() != shape.hidden2 {
                return Err(MlpError::Shape("dropout mask width".into()));
            }
        }
        let acts = self.forward_batch(x, 1, masks);
        Ok(softmax(&acts.logits))
    }

    fn forward_batch(&self, x: &[T], rows: usize, masks: Option<(&[T], &[T])>) -> Activations<T> {
        let mut z1 = Vec::new();
        self.hidden1.forward_into(x, rows, &mut z1);
        let a1 = relu_masked(&z1, masks.map(|m| m.0));
        let mut z2 = Vec::new();
        self.hidden2.forward_into(&a1, rows, &mut z2);
        let a2 = relu_masked(&z2, masks.map(|m| m.1));
        let mut logits = Vec::new();
        self.output.forward_into(&a2, rows, &mut logits);
        Activations {
            z1,
            a1,
            z2,
            a2,
            logits,
        }
    }

    /// Softmax rows for a row-major batch, without dropout.
    pub fn predict_batch(&self, x: &[T], rows: usize) -> Vec<T> {
        let c = self.output.outputs;
        let width = self.hidden1.inputs;
        let chunks: Vec<Vec<T>> = x
            .par_chunks(CHUNK_ROWS * width)
            .map(|chunk| {
                let n = chunk.len() / width;
                let acts = self.forward_batch(chunk, n, None);
                acts.logits.chunks_exact(c).flat_map(softmax).collect()
            })
            .collect();
        debug_assert_eq!(chunks.iter().map(Vec::len).sum::<usize>(), rows * c);
        chunks.concat()
    }
}

struct Activations<T> {
    z1: Vec<T>,
    a1: Vec<T>,
    z2: Vec<T>,
    a2: Vec<T>,
    logits: Vec<T>,
}

fn relu_masked<T: Real>(z: &[T], mask: Option<&[T]>) -> Vec<T> {
    match mask {
        Some(m) => z
            .iter()
            .zip(m)
            .map(|(&v, &k)| v.max(T::zero()) * k)
            .collect(),
        None => z.iter().map(|&v| v.max(T::zero())).collect(),
    }
}

/// Numerically stable softmax (max subtracted first).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log(sum(exp(z)))` computed around the maximum.
fn log_sum_exp<T: Real>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Pre-scaled inverted-dropout multipliers for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks<T> {
    pub rows: usize,
    pub hidden1: Vec<T>,
    pub hidden2: Vec<T>,
}

impl<T: Real> DropoutMasks<T> {
    /// Each unit is kept with probability `1 - rate` and scaled by
    /// `1 / (1 - rate)`. All hidden-1 entries are drawn before hidden-2.
    pub fn sample(rng: &mut Xorshift64Star, rows: usize, shape: MlpShape, rate: f64) -> Self {
        let keep = T::cast(1.0 / (1.0 - rate));
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| {
                    if rng.next_f64() >= rate {
                        keep
                    } else {
                        T::zero()
                    }
                })
                .collect()
        };
        let hidden1 = draw(rows * shape.hidden1);
        let hidden2 = draw(rows * shape.hidden2);
        Self {
            rows,
            hidden1,
            hidden2,
        }
    }
}

/// Mean cross-entropy of a batch and its exact gradient.
///
/// `x` holds `labels.len()` row-major inputs. With `masks`, dropout is applied
/// exactly as given, so the result is a deterministic function of its inputs.
pub fn loss_and_grad<T: Real>(
    params: &MlpParams<T>,
    x: &[T],
    labels: &[usize],
    masks: Option<&DropoutMasks<T>>,
) -> Result<(T, MlpParams<T>), MlpError> {
    let shape = params.shape();
    let rows = labels.len();
    if rows == 0 {
        return Err(MlpError::EmptyBatch);
    }
    if x.len() != rows * shape.input {
        return Err(MlpError::Shape(format!(
            "{} values for {} rows of width {}",
            x.len(),
            rows,
            shape.input
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= shape.classes) {
        return Err(MlpError::Label {
            label,
            classes: shape.classes,
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(MlpError::NonFinite {
            row: i / shape.input,
        });
    }
    if let Some(m) = masks {
        if m.rows != rows
            || m.hidden1.len() != rows * shape.hidden1
            || m.hidden2.len() != rows * shape.hidden2
        {
            return Err(MlpError::Shape("dropout masks do not match batch".into()));
        }
    }

    let n_chunks = rows.div_ceil(CHUNK_ROWS);
    let partials: Vec<(T, MlpParams<T>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK_ROWS;
            let hi = (lo + CHUNK_ROWS).min(rows);
            let chunk_masks = masks.map(|m| {
                (
                    &m.hidden1[lo * shape.hidden1..hi * shape.hidden1],
                    &m.hidden2[lo * shape.hidden2..hi * shape.hidden2],
                )
            });
            chunk_loss_and_grad(
                params,
                &x[lo * shape.input..hi * shape.input],
                &labels[lo..hi],
                chunk_masks,
            )
        })
        .collect();

    let mut iter = partials.into_iter();
    let (mut loss, mut grads) = iter.next().expect("at least one chunk");
    for (l, g) in iter {
        loss = loss + l;
        grads.add_assign(&g);
    }
    let inv = T::one() / T::cast(rows as f64);
    grads.scale(inv);
    Ok((loss * inv, grads))
}

/// Summed (not averaged) loss and gradient over one chunk of rows.
fn chunk_loss_and_grad<T: Real>(
    params: &MlpParams<T>,
    x: &[T],
    labels: &[usize],
    masks: Option<(&[T], &[T])>,
) -> (T, MlpParams<T>) {
    let shape = params.shape();
    let rows = labels.len();
    let acts = params.forward_batch(x, rows, masks);
    let c = shape.classes;

    let mut loss = T::zero();
    let mut d_logits = Vec::with_capacity(rows * c);
    for (r, &label) in labels.iter().enumerate() {
        let z = &acts.logits[r * c..(r + 1) * c];
        let lse = log_sum_exp(z);
        loss = loss + (lse - z[label]);
        for (j, &zj) in z.iter().enumerate() {
            let p = (zj - lse).exp();
            d_logits.push(if j == label { p - T::one() } else { p });
        }
    }

    let mut grads = MlpParams::zeros(shape);
    params
        .output
        .accumulate_grad(&acts.a2, &d_logits, rows, &mut grads.output);
    let d_a2 = params.output.backprop_input(&d_logits, rows);
    let d_z2 = relu_backward(&d_a2, &acts.z2, masks.map(|m| m.1));
    params
        .hidden2
        .accumulate_grad(&acts.a1, &d_z2, rows, &mut grads.hidden2);
    let d_a1 = params.hidden2.backprop_input(&d_z2, rows);
    let d_z1 = relu_backward(&d_a1, &acts.z1, masks.map(|m| m.0));
    params
        .hidden1
        .accumulate_grad(x, &d_z1, rows, &mut grads.hidden1);
    (loss, grads)
}

fn relu_backward<T: Real>(d_out: &[T], z: &[T], mask: Option<&[T]>) -> Vec<T> {
    let gate = |i: usize, g: T| {
        if z[i] > T::zero() {
            mask.map_or(g, |m| g * m[i])
        } else {
            T::zero()
        }
    };
    d_out.iter().enumerate().map(|(i, &g)| gate(i, g)).collect()
}

/// Mean loss and number of correct argmax predictions, no dropout.
pub fn evaluate_batch<T: Real>(params: &MlpParams<T>, x: &[T], labels: &[usize]) -> (f64, usize) {
    let shape = params.shape();
    let partials: Vec<(f64, usize)> = x
        .par_chunks(CHUNK_ROWS * shape.input)
        .zip(labels.par_chunks(CHUNK_ROWS))
        .map(|(xc, lc)| {
            let acts = params.forward_batch(xc, lc.len(), None);
            let mut loss = 0.0;
            let mut correct = 0;
            for (z, &label) in acts.logits.chunks_exact(shape.classes).zip(lc) {
                loss += (log_sum_exp(z) - z[label]).widen();
                correct += (argmax(z) == label) as usize;
            }
            (loss, correct)
        })
        .collect();
    let (loss, correct) = partials
        .into_iter()
        .fold((0.0, 0), |(l, c), (pl, pc)| (l + pl, c + pc));
    (loss / labels.len().max(1) as f64, correct)
}
