//! Classifier head: dense(ReLU) → dropout → batch norm → dense → softmax.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

pub const BN_EPSILON: f32 = 1e-3;
pub const BN_MOMENTUM: f32 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// `(features, hidden)`.
    pub dense1_w: Array2<f32>,
    pub dense1_b: Array1<f32>,
    pub bn_gamma: Array1<f32>,
    pub bn_beta: Array1<f32>,
    /// Running statistics; not trained by gradient.
    pub bn_mean: Array1<f32>,
    pub bn_var: Array1<f32>,
    /// `(hidden, classes)`.
    pub dense2_w: Array2<f32>,
    pub dense2_b: Array1<f32>,
    pub dropout_rate: f32,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    features: Array2<f32>,
    pre_relu: Array2<f32>,
    /// 0 for dropped units, `1 / (1 - rate)` for kept ones.
    mask: Array2<f32>,
    normalized: Array2<f32>,
    inv_std: Array1<f32>,
    batch_mean: Array1<f32>,
    batch_var: Array1<f32>,
    bn_out: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub dense1_w: Array2<f32>,
    pub dense1_b: Array1<f32>,
    pub bn_gamma: Array1<f32>,
    pub bn_beta: Array1<f32>,
    pub dense2_w: Array2<f32>,
    pub dense2_b: Array1<f32>,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

impl Head {
    /// Glorot-uniform dense kernels, zero biases, identity batch norm.
    pub fn new(features: usize, hidden: usize, classes: usize, dropout_rate: f32, rng: &mut impl Rng) -> Head {
        Head {
            dense1_w: glorot(rng, features, hidden),
            dense1_b: Array1::zeros(hidden),
            bn_gamma: Array1::ones(hidden),
            bn_beta: Array1::zeros(hidden),
            bn_mean: Array1::zeros(hidden),
            bn_var: Array1::ones(hidden),
            dense2_w: glorot(rng, hidden, classes),
            dense2_b: Array1::zeros(classes),
            dropout_rate,
        }
    }

    pub fn classes(&self) -> usize {
        self.dense2_b.len()
    }

    pub fn trainable_count(&self) -> usize {
        self.dense1_w.len()
            + self.dense1_b.len()
            + self.bn_gamma.len()
            + self.bn_beta.len()
            + self.dense2_w.len()
            + self.dense2_b.len()
    }

    pub fn frozen_count(&self) -> usize {
        self.bn_mean.len() + self.bn_var.len()
    }

    /// Inference logits: dropout off, batch norm from running statistics.
    pub fn logits(&self, features: ArrayView2<f32>) -> Array2<f32> {
        let mut h = features.dot(&self.dense1_w) + &self.dense1_b;
        h.mapv_inplace(|v| v.max(0.0));
        let scale = &self.bn_gamma / &self.bn_var.mapv(|v| (v + BN_EPSILON).sqrt());
        let y = (h - &self.bn_mean) * &scale + &self.bn_beta;
        y.dot(&self.dense2_w) + &self.dense2_b
    }

    /// Training-mode logits with a fresh dropout mask and batch statistics.
    pub fn forward_train(&self, features: Array2<f32>, rng: &mut impl Rng) -> (Array2<f32>, HeadCache) {
        let pre_relu = features.dot(&self.dense1_w) + &self.dense1_b;
        let keep = 1.0 - self.dropout_rate;
        let mask = Array2::from_shape_simple_fn(pre_relu.dim(), || {
            if self.dropout_rate == 0.0 || rng.gen::<f32>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let dropped = pre_relu.mapv(|v| v.max(0.0)) * &mask;
        let batch_mean = dropped.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &dropped - &batch_mean;
        let batch_var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = batch_var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
        let normalized = centered * &inv_std;
        let bn_out = &normalized * &self.bn_gamma + &self.bn_beta;
        let logits = bn_out.dot(&self.dense2_w) + &self.dense2_b;
        (
            logits,
            HeadCache {
                features,
                pre_relu,
                mask,
                normalized,
                inv_std,
                batch_mean,
                batch_var,
                bn_out,
            },
        )
    }

    /// Moves the running statistics towards the batch statistics.
    pub fn update_running_stats(&mut self, cache: &HeadCache) {
        let m = BN_MOMENTUM;
        Zip::from(&mut self.bn_mean).and(&cache.batch_mean).for_each(|r, &b| *r = m * *r + (1.0 - m) * b);
        Zip::from(&mut self.bn_var).and(&cache.batch_var).for_each(|r, &b| *r = m * *r + (1.0 - m) * b);
    }

    /// Parameter gradients and the gradient w.r.t. the input features.
    pub fn backward(&self, cache: &HeadCache, grad_logits: &Array2<f32>) -> (HeadGrads, Array2<f32>) {
        let n = grad_logits.nrows() as f32;
        let dense2_w = cache.bn_out.t().dot(grad_logits);
        let dense2_b = grad_logits.sum_axis(Axis(0));
        let d_bn_out = grad_logits.dot(&self.dense2_w.t());

        let bn_gamma = (&d_bn_out * &cache.normalized).sum_axis(Axis(0));
        let bn_beta = d_bn_out.sum_axis(Axis(0));
        let d_norm = &d_bn_out * &self.bn_gamma;
        let sum_d = d_norm.sum_axis(Axis(0));
        let sum_dx = (&d_norm * &cache.normalized).sum_axis(Axis(0));
        let d_dropped = ((d_norm * n - &sum_d) - &cache.normalized * &sum_dx) * &(&cache.inv_std / n);

        let mut d_pre = d_dropped * &cache.mask;
        Zip::from(&mut d_pre).and(&cache.pre_relu).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let dense1_w = cache.features.t().dot(&d_pre);
        let dense1_b = d_pre.sum_axis(Axis(0));
        let d_features = d_pre.dot(&self.dense1_w.t());
        (
            HeadGrads {
                dense1_w,
                dense1_b,
                bn_gamma,
                bn_beta,
                dense2_w,
                dense2_b,
            },
            d_features,
        )
    }
}

/// Row-wise softmax in f64.
pub fn softmax(logits: ArrayView2<f32>) -> Array2<f64> {
    let mut out = logits.mapv(f64::from);
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean (optionally per-sample weighted) cross-entropy on softmax outputs and
/// its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f32>, labels: &[usize], weights: Option<&[f32]>) -> (f64, Array2<f32>) {
    let probs = softmax(logits.view());
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = probs.mapv(|p| p as f32);
    for (i, &y) in labels.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        loss += -f64::from(w) * probs[[i, y]].max(1e-12).ln();
        grad[[i, y]] -= 1.0;
        grad.row_mut(i).mapv_inplace(|g| g * w / n as f32);
    }
    (loss / n, grad)
}
