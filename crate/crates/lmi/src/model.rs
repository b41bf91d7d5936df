//! Routing classifiers for inner nodes.
//!
//! Two interchangeable kinds sit behind one enum: a centroid model (softmax
//! over negated Euclidean distances to per-class centroids — cheap, no
//! iterative training) and a one-hidden-layer MLP trained from scratch with
//! mini-batch SGD + momentum. Both expose the same contract: a probability
//! vector over `n_classes` outputs, argmax routing with ties toward the
//! lower class index, and removal of a single output without disturbing the
//! surviving logits.
//!
//! MLP parameters are kept in f64: the storage cost is irrelevant at these
//! widths and it keeps finite-difference verification of the gradients well
//! away from float-noise territory.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dataset::distance_unchecked;
use crate::{Error, Result};

/// Which classifier an index trains at its inner nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    /// Softmax over negated distances to per-class centroids.
    #[default]
    Centroid,
    /// One-hidden-layer MLP.
    Mlp,
}

/// MLP hyperparameters. Defaults: 128 hidden units, 30 epochs, lr 0.01,
/// momentum 0.9, batch 256, input standardization on.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Standardize inputs with per-dimension mean/std learned from the
    /// training set (stored in the model, applied at prediction).
    pub standardize: bool,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 30,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 256,
            standardize: true,
        }
    }
}

/// Numerically stable softmax.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln()
}

/// Index of the largest value, ties toward the lower index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Centroid classifier: class j scores softmax(-distance to centroid j).
/// A class that had no training points gets an all-infinity centroid, which
/// pins its probability to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidClassifier {
    pub dim: usize,
    pub centroids: Vec<Vec<f32>>,
}

impl CentroidClassifier {
    fn logits(&self, v: &[f32]) -> Vec<f64> {
        self.centroids.iter().map(|c| -distance_unchecked(v, c)).collect()
    }
}

/// One-hidden-layer MLP: ReLU hidden activation, softmax output. Weight
/// matrices are row-major (`w1` is hidden x input, `w2` is classes x
/// hidden).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// Per-dimension standardization, identity when it was disabled.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Parameter-shaped gradient bundle for [`MlpClassifier::gradients`].
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpClassifier {
    fn standardized(&self, v: &[f32]) -> Vec<f64> {
        (0..self.input_dim)
            .map(|i| (f64::from(v[i]) - self.mean[i]) / self.std[i])
            .collect()
    }

    /// Forward pass up to pre-activations: (z1, relu(z1), logits).
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut z1 = self.b1.clone();
        for j in 0..self.hidden_dim {
            let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            let mut acc = 0.0f64;
            for (w, xv) in row.iter().zip(x) {
                acc += w * xv;
            }
            z1[j] += acc;
        }
        let h: Vec<f64> = z1.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect();
        let mut logits = self.b2.clone();
        for c in 0..self.n_classes {
            let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            let mut acc = 0.0f64;
            for (w, hv) in row.iter().zip(&h) {
                acc += w * hv;
            }
            logits[c] += acc;
        }
        (z1, h, logits)
    }

    /// Raw output logits for one vector.
    pub fn logits(&self, v: &[f32]) -> Vec<f64> {
        let x = self.standardized(v);
        self.forward(&x).2
    }

    /// Mean cross-entropy over a batch, in the log-sum-exp form (exact even
    /// when the softmax saturates).
    pub fn average_loss(&self, xs: &[&[f32]], ys: &[usize]) -> f64 {
        assert_eq!(xs.len(), ys.len());
        let mut total = 0.0f64;
        for (v, &y) in xs.iter().zip(ys) {
            let z = self.logits(v);
            total += log_sum_exp(&z) - z[y];
        }
        total / xs.len() as f64
    }

    /// Analytic gradients of [`average_loss`](Self::average_loss) with
    /// respect to every parameter.
    pub fn gradients(&self, xs: &[&[f32]], ys: &[usize]) -> MlpGradients {
        assert_eq!(xs.len(), ys.len());
        let mut g = MlpGradients {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        };
        for (v, &y) in xs.iter().zip(ys) {
            let x = self.standardized(v);
            let (z1, h, logits) = self.forward(&x);
            let mut dz2 = softmax(&logits);
            dz2[y] -= 1.0;
            for c in 0..self.n_classes {
                let row = &mut g.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
                for (gw, hv) in row.iter_mut().zip(&h) {
                    *gw += dz2[c] * hv;
                }
                g.b2[c] += dz2[c];
            }
            let mut dh = vec![0.0f64; self.hidden_dim];
            for c in 0..self.n_classes {
                let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
                for (dhv, w) in dh.iter_mut().zip(row) {
                    *dhv += w * dz2[c];
                }
            }
            for j in 0..self.hidden_dim {
                if z1[j] > 0.0 {
                    let dz1 = dh[j];
                    let row = &mut g.w1[j * self.input_dim..(j + 1) * self.input_dim];
                    for (gw, xv) in row.iter_mut().zip(&x) {
                        *gw += dz1 * xv;
                    }
                    g.b1[j] += dz1;
                }
            }
        }
        let scale = 1.0 / xs.len() as f64;
        for v in g.w1.iter_mut().chain(&mut g.b1).chain(&mut g.w2).chain(&mut g.b2) {
            *v *= scale;
        }
        g
    }
}

/// A trained routing model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierModel {
    Centroid(CentroidClassifier),
    Mlp(MlpClassifier),
}

impl ClassifierModel {
    pub fn n_classes(&self) -> usize {
        match self {
            ClassifierModel::Centroid(c) => c.centroids.len(),
            ClassifierModel::Mlp(m) => m.n_classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ClassifierModel::Centroid(c) => c.dim,
            ClassifierModel::Mlp(m) => m.input_dim,
        }
    }

    /// Probability per class; entries are nonnegative and sum to 1 within
    /// 1e-6.
    pub fn predict_proba(&self, v: &[f32]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: v.len() });
        }
        let logits = match self {
            ClassifierModel::Centroid(c) => c.logits(v),
            ClassifierModel::Mlp(m) => m.logits(v),
        };
        Ok(softmax(&logits))
    }

    /// Routing decision: argmax class, ties toward the lower index.
    pub fn predict_class(&self, v: &[f32]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(v)?))
    }

    /// Deterministic work proxy for one prediction, in units of one
    /// dim-length distance evaluation.
    pub fn predict_cost(&self) -> f64 {
        match self {
            ClassifierModel::Centroid(c) => c.centroids.len() as f64,
            ClassifierModel::Mlp(m) => {
                (m.input_dim * m.hidden_dim + m.hidden_dim * m.n_classes) as f64
                    / m.input_dim as f64
            }
        }
    }

    /// Removes one output class. Surviving output rows are untouched, so
    /// their logits are bit-identical and the new probabilities are exactly
    /// the old ones renormalized. Returns the model plus an
    /// old-index-to-new-index remap (`None` for the removed class).
    pub fn remove_output(&self, class: usize) -> Result<(Self, Vec<Option<usize>>)> {
        let n = self.n_classes();
        if class >= n || n < 2 {
            return Err(Error::CannotRemoveOutput { class, n_classes: n });
        }
        let remap: Vec<Option<usize>> = (0..n)
            .map(|i| {
                if i == class {
                    None
                } else if i < class {
                    Some(i)
                } else {
                    Some(i - 1)
                }
            })
            .collect();
        let model = match self {
            ClassifierModel::Centroid(c) => {
                let mut centroids = c.centroids.clone();
                centroids.remove(class);
                ClassifierModel::Centroid(CentroidClassifier { dim: c.dim, centroids })
            }
            ClassifierModel::Mlp(m) => {
                let mut m2 = m.clone();
                m2.w2.drain(class * m.hidden_dim..(class + 1) * m.hidden_dim);
                m2.b2.remove(class);
                m2.n_classes -= 1;
                ClassifierModel::Mlp(m2)
            }
        };
        Ok((model, remap))
    }
}

/// Output of [`train_classifier`]: the model, the model's own argmax
/// prediction for every training point (the dispersal positions used when a
/// node is split), and the deterministic work proxy spent training.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub model: ClassifierModel,
    pub positions: Vec<usize>,
    pub proxy_cost: f64,
}

fn train_centroid(
    points: &[&[f32]],
    labels: &[usize],
    n_classes: usize,
) -> (ClassifierModel, f64) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0f64; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, &x) in sums[l].iter_mut().zip(*p) {
            *s += f64::from(x);
        }
    }
    let centroids: Vec<Vec<f32>> = (0..n_classes)
        .map(|j| {
            if counts[j] == 0 {
                vec![f32::INFINITY; dim]
            } else {
                sums[j].iter().map(|s| (s / counts[j] as f64) as f32).collect()
            }
        })
        .collect();
    let proxy = points.len() as f64; // one accumulation pass
    (ClassifierModel::Centroid(CentroidClassifier { dim, centroids }), proxy)
}

fn train_mlp(
    points: &[&[f32]],
    labels: &[usize],
    n_classes: usize,
    params: &MlpParams,
    seed: u64,
) -> (ClassifierModel, f64) {
    let n = points.len();
    let input_dim = points[0].len();
    let hidden = params.hidden.max(1);
    let batch = params.batch_size.max(1);

    let (mean, std) = if params.standardize {
        let mut mean = vec![0.0f64; input_dim];
        for p in points {
            for (m, &x) in mean.iter_mut().zip(*p) {
                *m += f64::from(x);
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0f64; input_dim];
        for p in points {
            for i in 0..input_dim {
                let d = f64::from(p[i]) - mean[i];
                var[i] += d * d;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt().max(1e-8)).collect();
        (mean, std)
    } else {
        (vec![0.0; input_dim], vec![1.0; input_dim])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lim1 = (6.0 / (input_dim + hidden) as f64).sqrt();
    let lim2 = (6.0 / (hidden + n_classes) as f64).sqrt();
    let mut model = MlpClassifier {
        input_dim,
        hidden_dim: hidden,
        n_classes,
        w1: (0..hidden * input_dim).map(|_| rng.gen_range(-lim1..lim1)).collect(),
        b1: vec![0.0; hidden],
        w2: (0..n_classes * hidden).map(|_| rng.gen_range(-lim2..lim2)).collect(),
        b2: vec![0.0; n_classes],
        mean,
        std,
    };

    let mut vel_w1 = vec![0.0f64; model.w1.len()];
    let mut vel_b1 = vec![0.0f64; model.b1.len()];
    let mut vel_w2 = vec![0.0f64; model.w2.len()];
    let mut vel_b2 = vec![0.0f64; model.b2.len()];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xs: Vec<&[f32]> = chunk.iter().map(|&i| points[i]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let g = model.gradients(&xs, &ys);
            let step = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
                for i in 0..p.len() {
                    v[i] = params.momentum * v[i] - params.learning_rate * g[i];
                    p[i] += v[i];
                }
            };
            step(&mut model.w1, &mut vel_w1, &g.w1);
            step(&mut model.b1, &mut vel_b1, &g.b1);
            step(&mut model.w2, &mut vel_w2, &g.w2);
            step(&mut model.b2, &mut vel_b2, &g.b2);
        }
    }

    // Forward + backward is roughly 3x the forward flops.
    let per_example = (input_dim * hidden + hidden * n_classes) as f64 / input_dim as f64;
    let proxy = 3.0 * per_example * (params.epochs * n) as f64;
    (ClassifierModel::Mlp(model), proxy)
}

/// Trains a routing classifier on labeled points and reports where the model
/// itself would place each training point.
pub fn train_classifier(
    points: &[&[f32]],
    labels: &[usize],
    n_classes: usize,
    kind: ModelKind,
    params: &MlpParams,
    seed: u64,
) -> Result<TrainedClassifier> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != points.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} points",
            labels.len(),
            points.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::InvalidArgument("n_classes must be >= 1".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange { label: bad, n_classes });
    }
    let (model, train_proxy) = match kind {
        ModelKind::Centroid => train_centroid(points, labels, n_classes),
        ModelKind::Mlp => train_mlp(points, labels, n_classes, params, seed),
    };
    let positions: Vec<usize> = points
        .iter()
        .map(|p| model.predict_class(p))
        .collect::<Result<_>>()?;
    let proxy_cost = train_proxy + points.len() as f64 * model.predict_cost();
    Ok(TrainedClassifier { model, positions, proxy_cost })
}
