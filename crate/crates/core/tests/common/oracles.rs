//! Independent reference computations shared by the integration tests and the
//! acceptance suite. Nothing here calls into the code it checks except to
//! obtain the value under test.
#![allow(dead_code)]

use genreprobe::aggregation::{aggregate, AggregationRule};
use genreprobe::mlp::{loss_and_grad, DropoutMasks, MlpParams, MlpShape};
use genreprobe::rng::Xorshift64Star;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error. Central differences at h = 1e-5
/// carry roundoff near 1e-10, so entries whose gradient is below this floor
/// are judged on absolute error (1e-9) instead.
pub const GRAD_REL_FLOOR: f64 = 1e-5;
/// Pre-activations closer than this to 0 would put the finite difference
/// across a ReLU kink; such instances are redrawn.
pub const KINK_MARGIN: f64 = 1e-4;

fn dense(x: &[f64], w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_out];
    for j in 0..n_out {
        let mut acc = b[j];
        for i in 0..n_in {
            acc += x[i] * w[i * n_out + j];
        }
        out[j] = acc;
    }
    out
}

/// Straight-line forward pass: returns the mean cross-entropy and the smallest
/// |pre-activation| seen in either hidden layer.
pub fn naive_loss(
    p: &MlpParams<f64>,
    x: &[f64],
    labels: &[usize],
    masks: Option<&DropoutMasks<f64>>,
) -> (f64, f64) {
    let s = p.shape();
    let mut total = 0.0;
    let mut closest = f64::INFINITY;
    for (r, &label) in labels.iter().enumerate() {
        let xr = &x[r * s.input..(r + 1) * s.input];
        let z1 = dense(xr, &p.hidden1.weights, &p.hidden1.bias, s.input, s.hidden1);
        let mut a1 = Vec::with_capacity(s.hidden1);
        for (j, &z) in z1.iter().enumerate() {
            closest = closest.min(z.abs());
            let m = masks.map_or(1.0, |m| m.hidden1[r * s.hidden1 + j]);
            a1.push(if z > 0.0 { z * m } else { 0.0 });
        }
        let z2 = dense(
            &a1,
            &p.hidden2.weights,
            &p.hidden2.bias,
            s.hidden1,
            s.hidden2,
        );
        let mut a2 = Vec::with_capacity(s.hidden2);
        for (j, &z) in z2.iter().enumerate() {
            closest = closest.min(z.abs());
            let m = masks.map_or(1.0, |m| m.hidden2[r * s.hidden2 + j]);
            a2.push(if z > 0.0 { z * m } else { 0.0 });
        }
        let logits = dense(&a2, &p.output.weights, &p.output.bias, s.hidden2, s.classes);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - logits[label];
    }
    (total / labels.len() as f64, closest)
}

pub struct GradInstance {
    pub params: MlpParams<f64>,
    pub x: Vec<f64>,
    pub labels: Vec<usize>,
    pub masks: Option<DropoutMasks<f64>>,
}

/// A random instance with dim <= 8, C <= 4, batch <= 5 and hidden widths
/// <= 8, free of ReLU kinks. Odd draws carry dropout masks.
pub fn random_instance(rng: &mut Xorshift64Star, shape: Option<MlpShape>) -> GradInstance {
    loop {
        let shape = shape.unwrap_or_else(|| MlpShape {
            input: 1 + rng.below(8) as usize,
            hidden1: 1 + rng.below(8) as usize,
            hidden2: 1 + rng.below(8) as usize,
            classes: 2 + rng.below(3) as usize,
        });
        let rows = 1 + rng.below(5) as usize;
        let mut params = MlpParams::<f64>::zeros(shape);
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0));
        }
        let x: Vec<f64> = (0..rows * shape.input).map(|_| rng.normal()).collect();
        let labels: Vec<usize> = (0..rows)
            .map(|_| rng.below(shape.classes as u64) as usize)
            .collect();
        let masks = (rng.below(2) == 1).then(|| DropoutMasks::sample(rng, rows, shape, 0.4));
        let (_, closest) = naive_loss(&params, &x, &labels, masks.as_ref());
        if closest > KINK_MARGIN {
            return GradInstance {
                params,
                x,
                labels,
                masks,
            };
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_REL_FLOOR)
}

/// Largest relative error between analytic and central-difference gradients
/// over the listed parameter entries (tensor index, element index), or all
/// entries when `entries` is `None`.
pub fn gradient_error(inst: &GradInstance, entries: Option<&[(usize, usize)]>) -> f64 {
    let (loss, analytic) =
        loss_and_grad(&inst.params, &inst.x, &inst.labels, inst.masks.as_ref()).unwrap();
    let (reference, _) = naive_loss(&inst.params, &inst.x, &inst.labels, inst.masks.as_ref());
    assert!(
        (loss - reference).abs() < 1e-12 * reference.abs().max(1.0),
        "loss {loss} vs {reference}"
    );

    let all: Vec<(usize, usize)>;
    let entries = match entries {
        Some(e) => e,
        None => {
            all = inst
                .params
                .tensors()
                .iter()
                .enumerate()
                .flat_map(|(t, v)| (0..v.len()).map(move |i| (t, i)))
                .collect();
            &all
        }
    };
    let grads = analytic.tensors();
    let mut worst: f64 = 0.0;
    for &(t, i) in entries {
        let mut probe = inst.params.clone();
        probe.tensors_mut()[t][i] += FD_STEP;
        let (up, _) = naive_loss(&probe, &inst.x, &inst.labels, inst.masks.as_ref());
        probe.tensors_mut()[t][i] -= 2.0 * FD_STEP;
        let (down, _) = naive_loss(&probe, &inst.x, &inst.labels, inst.masks.as_ref());
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grads[t][i], numeric));
    }
    worst
}

/// Runs `n` seeded instances; returns the worst relative error seen.
pub fn gradient_oracle(n: usize, seed: u64) -> f64 {
    let mut rng = Xorshift64Star::new(seed);
    (0..n)
        .map(|_| gradient_error(&random_instance(&mut rng, None), None))
        .fold(0.0, f64::max)
}

// ---- aggregation ----

pub fn first_max(values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Direct product of probabilities, no logs, no floor.
pub fn naive_product_winner(preds: &[Vec<f64>]) -> usize {
    let c = preds[0].len();
    let products: Vec<f64> = (0..c)
        .map(|k| preds.iter().map(|p| p[k]).product())
        .collect();
    first_max(&products)
}

/// Recount of (weighted) votes with the documented tie-break: most votes, then
/// largest total probability, then lowest index.
pub fn brute_vote_winner(preds: &[Vec<f64>], weighted: bool) -> usize {
    let c = preds[0].len();
    let mut votes = vec![0.0; c];
    let mut mass = vec![0.0; c];
    for p in preds {
        let w = first_max(p);
        votes[w] += if weighted { p[w] } else { 1.0 };
        for k in 0..c {
            mass[k] += p[k];
        }
    }
    let mut best = 0;
    for k in 1..c {
        if votes[k] > votes[best] || (votes[k] == votes[best] && mass[k] > mass[best]) {
            best = k;
        }
    }
    best
}

pub fn random_prediction_set(rng: &mut Xorshift64Star) -> Vec<Vec<f64>> {
    let segments = 1 + rng.below(20) as usize;
    let classes = 2 + rng.below(4) as usize;
    (0..segments)
        .map(|_| {
            // Quantized weights make vote ties common enough to exercise the
            // tie-break.
            let raw: Vec<f64> = (0..classes).map(|_| 1.0 + rng.below(4) as f64).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        })
        .collect()
}

pub fn random_smooth_prediction_set(rng: &mut Xorshift64Star) -> Vec<Vec<f64>> {
    let segments = 1 + rng.below(20) as usize;
    let classes = 2 + rng.below(4) as usize;
    (0..segments)
        .map(|_| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.uniform(0.01, 1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct AggregationMismatches {
    pub product: usize,
    pub majority: usize,
    pub weighted: usize,
}

impl AggregationMismatches {
    pub fn total(&self) -> usize {
        self.product + self.majority + self.weighted
    }
}

pub fn aggregation_oracle(n: usize, seed: u64) -> AggregationMismatches {
    let mut rng = Xorshift64Star::new(seed);
    let mut out = AggregationMismatches::default();
    for _ in 0..n {
        let smooth = random_smooth_prediction_set(&mut rng);
        if aggregate(&smooth, AggregationRule::Product)
            .unwrap()
            .predicted
            != naive_product_winner(&smooth)
        {
            out.product += 1;
        }
        let tied = random_prediction_set(&mut rng);
        for (rule, weighted, slot) in [
            (AggregationRule::Majority, false, &mut out.majority),
            (AggregationRule::Weighted, true, &mut out.weighted),
        ] {
            for preds in [&smooth, &tied] {
                if aggregate(preds, rule).unwrap().predicted != brute_vote_winner(preds, weighted) {
                    *slot += 1;
                }
            }
        }
    }
    out
}

// ---- framing ----

/// Counts frames by sliding the window one stride at a time.
pub fn count_frames_by_sliding(n: usize, window: usize, stride: usize) -> usize {
    let mut count = 0;
    let mut start = 0;
    while start + window <= n {
        count += 1;
        start += stride;
    }
    count
}

// ---- statistics ----

/// Two-sided 95% band `[lo, hi]` of correct counts for `n` Bernoulli(p)
/// trials, from the binomial quantiles.
pub fn binomial_band(n: u64, p: f64) -> (u64, u64) {
    use statrs::distribution::{Binomial, DiscreteCDF};
    let b = Binomial::new(p, n).unwrap();
    (b.inverse_cdf(0.025), b.inverse_cdf(0.975))
}
