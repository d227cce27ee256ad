//! Feed-forward binding-status classifier.
//!
//! ReLU hidden layers and one sigmoid output per varying constraint, trained
//! with plain (mini-batch) gradient descent on the mean binary cross-entropy
//! or its focal variant.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::LearnError;

use super::dataset::{Dataset, OutputReduction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Loss {
    Bce,
    /// Focal loss `−(1−p_t)^γ log p_t`.
    Focal { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub loss: Loss,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            learning_rate: 0.01,
            epochs: 500,
            batch_size: Some(8),
            loss: Loss::Bce,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

/// Dense layer `y = σ(W x + b)` with `W` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn w(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.outputs, self.inputs, &self.weights)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// `[n_in, h_1, …, n_out]`.
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub threshold: f64,
    /// Per-input range of the training data, used to flag extrapolation.
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

impl MlpModel {
    /// Model with all weights and biases zero and identity normalization.
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        let n_in = layer_sizes[0];
        Self {
            layer_sizes: layer_sizes.to_vec(),
            layers: layer_sizes
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
            input_mean: vec![0.0; n_in],
            input_scale: vec![1.0; n_in],
            threshold: 0.5,
            input_min: vec![f64::MIN; n_in],
            input_max: vec![f64::MAX; n_in],
            history: Vec::new(),
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(layer_sizes: &[usize], rng: &mut impl Rng) -> Self {
        let mut model = Self::zeros(layer_sizes);
        for layer in &mut model.layers {
            let r = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-r..=r);
            }
        }
        model
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |msg: String| Err(LearnError::InvalidConfig(msg));
        if self.layer_sizes.len() < 2 || self.layers.len() != self.layer_sizes.len() - 1 {
            return bad("layer count does not match layer sizes".into());
        }
        for (i, (layer, w)) in self.layers.iter().zip(self.layer_sizes.windows(2)).enumerate() {
            if layer.inputs != w[0]
                || layer.outputs != w[1]
                || layer.weights.len() != w[0] * w[1]
                || layer.biases.len() != w[1]
            {
                return bad(format!("layer {} has inconsistent dimensions", i + 1));
            }
        }
        let n = self.n_inputs();
        if self.input_mean.len() != n
            || self.input_scale.len() != n
            || self.input_min.len() != n
            || self.input_max.len() != n
        {
            return bad("normalization length does not match the input size".into());
        }
        if self.input_scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return bad("normalization scale must be positive".into());
        }
        Ok(())
    }

    fn normalize(&self, pi: &[f64]) -> Vec<f64> {
        pi.iter()
            .zip(self.input_mean.iter().zip(&self.input_scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Output probabilities for raw inputs `pi`.
    pub fn forward(&self, pi: &[f64]) -> Result<Vec<f64>, LearnError> {
        if pi.len() != self.n_inputs() {
            return Err(LearnError::DimensionMismatch {
                expected: self.n_inputs(),
                got: pi.len(),
            });
        }
        let mut y = self.normalize(pi);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            y = layer.apply(&y);
            if l == last {
                y.iter_mut().for_each(|z| *z = sigmoid(*z));
            } else {
                y.iter_mut().for_each(|z| *z = z.max(0.0));
            }
        }
        Ok(y)
    }

    pub fn classify(&self, pi: &[f64]) -> Result<Vec<bool>, LearnError> {
        Ok(self
            .forward(pi)?
            .into_iter()
            .map(|p| p >= self.threshold)
            .collect())
    }

    /// Whether `pi` lies outside the bounding box of the training inputs.
    pub fn extrapolates(&self, pi: &[f64]) -> bool {
        pi.iter()
            .zip(self.input_min.iter().zip(&self.input_max))
            .any(|(x, (lo, hi))| x < lo || x > hi)
    }

    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        model.validate()?;
        Ok(model)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)`, stable for large `|z|`.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Loss of one output with logit `z` and label `y`, and its derivative in `z`.
fn loss_term(loss: Loss, z: f64, y: bool) -> (f64, f64) {
    let p = sigmoid(z);
    match loss {
        Loss::Bce => {
            let l = if y { -log_sigmoid(z) } else { -log_sigmoid(-z) };
            (l, p - f64::from(u8::from(y)))
        }
        Loss::Focal { gamma } => {
            if y {
                let q = 1.0 - p;
                let lp = log_sigmoid(z);
                (-q.powf(gamma) * lp, gamma * p * q.powf(gamma) * lp - q.powf(gamma + 1.0))
            } else {
                let lq = log_sigmoid(-z);
                (-p.powf(gamma) * lq, p.powf(gamma + 1.0) - gamma * (1.0 - p) * p.powf(gamma) * lq)
            }
        }
    }
}

/// Gradients with the same shape as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Mean loss over every output of every sample and its gradient with
/// respect to all weights and biases. `x` holds normalized inputs, one
/// column per sample; `y` holds labels, one column per sample.
pub fn loss_and_gradient(
    weights: &[DMatrix<f64>],
    biases: &[Vec<f64>],
    x: &DMatrix<f64>,
    y: &DMatrix<bool>,
    loss: Loss,
) -> (f64, Gradients) {
    let batch = x.ncols();
    let last = weights.len() - 1;
    let mut acts = vec![x.clone()];
    let mut logits = DMatrix::zeros(0, 0);
    for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
        let mut z = w * acts.last().unwrap();
        for mut col in z.column_iter_mut() {
            col.iter_mut().zip(b).for_each(|(v, b)| *v += b);
        }
        if l == last {
            logits = z;
        } else {
            z.apply(|v| *v = v.max(0.0));
            acts.push(z);
        }
    }
    let scale = 1.0 / (batch * logits.nrows()) as f64;
    let mut total = 0.0;
    let mut delta = logits.clone();
    for (d, (&z, &t)) in delta.iter_mut().zip(logits.iter().zip(y.iter())) {
        let (l, g) = loss_term(loss, z, t);
        total += l;
        *d = g * scale;
    }
    let mut gw = vec![DMatrix::zeros(0, 0); weights.len()];
    let mut gb = vec![Vec::new(); weights.len()];
    for l in (0..weights.len()).rev() {
        gw[l] = &delta * acts[l].transpose();
        gb[l] = delta.row_iter().map(|r| r.sum()).collect();
        if l > 0 {
            let mut back = weights[l].transpose() * &delta;
            back.zip_apply(&acts[l], |g, a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            });
            delta = back;
        }
    }
    (
        total * scale,
        Gradients {
            weights: gw,
            biases: gb,
        },
    )
}

/// Element-wise, per-sample and per-column accuracy of a set of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Fraction of correctly classified (sample, constraint) pairs.
    pub per_constraint: f64,
    /// Fraction of samples with every constraint correct.
    pub per_sample: f64,
    pub per_column: Vec<f64>,
}

pub fn accuracy(predicted: &[Vec<bool>], truth: &[Vec<bool>]) -> Accuracy {
    let n = predicted.len().max(1) as f64;
    let cols = truth.first().map_or(0, Vec::len);
    let mut per_column = vec![0.0; cols];
    let mut exact = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        let mut all = true;
        for (j, (a, b)) in p.iter().zip(t).enumerate() {
            if a == b {
                per_column[j] += 1.0;
            } else {
                all = false;
            }
        }
        exact += usize::from(all);
    }
    per_column.iter_mut().for_each(|c| *c /= n);
    let per_constraint = if cols == 0 {
        1.0
    } else {
        per_column.iter().sum::<f64>() / cols as f64
    };
    Accuracy {
        per_constraint,
        per_sample: exact as f64 / n,
        per_column,
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    /// Accuracy on the validation split over the varying outputs; equals the
    /// training accuracy when the split is empty.
    pub validation: Accuracy,
}

/// Trains a classifier for the varying outputs of `red`. The returned model
/// is the epoch snapshot with the lowest validation loss (training loss when
/// there is no validation split).
pub fn train(
    ds: &Dataset,
    red: &OutputReduction,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, LearnError> {
    ds.validate()?;
    if red.varying_indices.is_empty() {
        return Err(LearnError::NoVaryingOutputs);
    }
    if !(cfg.learning_rate > 0.0) || cfg.epochs == 0 || cfg.batch_size == Some(0) {
        return Err(LearnError::InvalidConfig(
            "learning rate, epochs and batch size must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(LearnError::InvalidConfig(
            "validation fraction must lie in [0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (ds.len() as f64 * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(ds.len() - 1);
    let validation_indices = order[..n_val].to_vec();
    let train_indices = order[n_val..].to_vec();

    let n_in = ds.meta.sweep.len();
    let n_out = red.varying_indices.len();
    let mut sizes = vec![n_in];
    sizes.extend(&cfg.hidden);
    sizes.push(n_out);
    let mut model = MlpModel::init(&sizes, &mut rng);

    let ntr = train_indices.len() as f64;
    for k in 0..n_in {
        let vals = train_indices.iter().map(|&i| ds.inputs[i][k]);
        let mean = vals.clone().sum::<f64>() / ntr;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / ntr;
        model.input_mean[k] = mean;
        model.input_scale[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        let range = ds.inputs.iter().map(|x| x[k]);
        model.input_min[k] = range.clone().fold(f64::INFINITY, f64::min);
        model.input_max[k] = range.fold(f64::NEG_INFINITY, f64::max);
    }

    let columns = |idx: &[usize]| {
        let x = DMatrix::from_fn(n_in, idx.len(), |r, c| {
            (ds.inputs[idx[c]][r] - model.input_mean[r]) / model.input_scale[r]
        });
        let y = DMatrix::from_fn(n_out, idx.len(), |r, c| {
            ds.outputs[idx[c]][red.varying_indices[r]]
        });
        (x, y)
    };
    let (x_val, y_val) = columns(&validation_indices);
    let mut weights: Vec<DMatrix<f64>> = model.layers.iter().map(Layer::w).collect();
    let mut biases: Vec<Vec<f64>> = model.layers.iter().map(|l| l.biases.clone()).collect();
    let batch = cfg.batch_size.unwrap_or(train_indices.len()).min(train_indices.len());
    let mut shuffled = train_indices.clone();
    let mut best = (f64::INFINITY, weights.clone(), biases.clone());
    let full = (batch == train_indices.len()).then(|| columns(&train_indices));

    for epoch in 0..cfg.epochs {
        if full.is_none() {
            shuffled.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in shuffled.chunks(batch) {
            let owned;
            let (x, y) = match &full {
                Some(xy) => xy,
                None => {
                    owned = columns(chunk);
                    &owned
                }
            };
            let (l, g) = loss_and_gradient(&weights, &biases, x, y, cfg.loss);
            if !l.is_finite() {
                return Err(LearnError::Divergence { epoch: epoch + 1 });
            }
            epoch_loss += l * chunk.len() as f64;
            for (w, gw) in weights.iter_mut().zip(&g.weights) {
                *w -= gw * cfg.learning_rate;
            }
            for (b, gb) in biases.iter_mut().zip(&g.biases) {
                b.iter_mut()
                    .zip(gb)
                    .for_each(|(b, g)| *b -= cfg.learning_rate * g);
            }
        }
        epoch_loss /= ntr;
        model.history.push(epoch_loss);
        let monitor = if validation_indices.is_empty() {
            epoch_loss
        } else {
            loss_and_gradient(&weights, &biases, &x_val, &y_val, cfg.loss).0
        };
        if !monitor.is_finite() {
            return Err(LearnError::Divergence { epoch: epoch + 1 });
        }
        if monitor < best.0 {
            best = (monitor, weights.clone(), biases.clone());
        }
    }

    for (layer, (w, b)) in model.layers.iter_mut().zip(best.1.iter().zip(best.2)) {
        layer.weights = w.transpose().as_slice().to_vec();
        layer.biases = b;
    }
    let eval = if validation_indices.is_empty() {
        &train_indices
    } else {
        &validation_indices
    };
    let predicted = eval
        .iter()
        .map(|&i| model.classify(&ds.inputs[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<Vec<bool>> = eval.iter().map(|&i| red.project(&ds.outputs[i])).collect();
    let validation = accuracy(&predicted, &truth);
    Ok(TrainOutcome {
        model,
        train_indices,
        validation_indices,
        validation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::dataset::{reduce_outputs, DatasetMeta, SweepAxis};

    fn separable(n: usize) -> Dataset {
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (10.0 * i as f64, 10.0 * j as f64);
                inputs.push(vec![a, b]);
                outputs.push(vec![a + b > 95.0, true, a > b + 0.5]);
            }
        }
        let axis = |load| SweepAxis {
            load,
            start: 0.0,
            step: 10.0,
            count: n,
        };
        Dataset {
            inputs,
            outputs,
            meta: DatasetMeta {
                case: "separable".into(),
                sweep: vec![axis(0), axis(1)],
                base_loads: vec![0.0, 0.0],
                row_labels: vec!["a".into(), "b".into(), "c".into()],
                requested: n * n,
                infeasible: 0,
            },
        }
    }

    #[test]
    fn zero_model_outputs_one_half() {
        let model = MlpModel::zeros(&[2, 4, 4, 4, 3]);
        for p in model.forward(&[3.0, -7.0]).unwrap() {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let model = MlpModel::zeros(&[2, 3, 1]);
        assert!(matches!(
            model.forward(&[1.0]),
            Err(LearnError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    fn check_gradient(loss: Loss) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = MlpModel::init(&[2, 5, 4, 3, 3], &mut rng);
        let mut weights: Vec<DMatrix<f64>> = model.layers.iter().map(Layer::w).collect();
        let mut biases: Vec<Vec<f64>> = model.layers.iter().map(|l| l.biases.clone()).collect();
        for b in &mut biases {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let x = DMatrix::from_fn(2, 6, |_, _| rng.random_range(-2.0..2.0));
        let y = DMatrix::from_fn(3, 6, |_, _| rng.random_bool(0.4));
        let (_, g) = loss_and_gradient(&weights, &biases, &x, &y, loss);
        let h = 1e-5;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for l in 0..weights.len() {
            for k in 0..weights[l].len() {
                let v = weights[l][k];
                weights[l][k] = v + h;
                let up = loss_and_gradient(&weights, &biases, &x, &y, loss).0;
                weights[l][k] = v - h;
                let down = loss_and_gradient(&weights, &biases, &x, &y, loss).0;
                weights[l][k] = v;
                numeric.push((up - down) / (2.0 * h));
                analytic.push(g.weights[l][k]);
            }
            for k in 0..biases[l].len() {
                let v = biases[l][k];
                biases[l][k] = v + h;
                let up = loss_and_gradient(&weights, &biases, &x, &y, loss).0;
                biases[l][k] = v - h;
                let down = loss_and_gradient(&weights, &biases, &x, &y, loss).0;
                biases[l][k] = v;
                numeric.push((up - down) / (2.0 * h));
                analytic.push(g.biases[l][k]);
            }
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        assert!(diff <= 1e-6 * norm, "relative gradient error {}", diff / norm);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        check_gradient(Loss::Bce);
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        check_gradient(Loss::Focal { gamma: 2.0 });
    }

    #[test]
    fn focal_with_zero_gamma_is_bce() {
        for z in [-30.0, -1.5, 0.0, 0.7, 25.0] {
            for y in [false, true] {
                let a = loss_term(Loss::Bce, z, y);
                let b = loss_term(Loss::Focal { gamma: 0.0 }, z, y);
                assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_dataset_is_learned() {
        let ds = separable(12);
        let red = reduce_outputs(&ds).unwrap();
        assert_eq!(red.varying_indices, vec![0, 2]);
        let cfg = TrainConfig {
            hidden: vec![16, 16, 16],
            learning_rate: 0.05,
            epochs: 400,
            batch_size: Some(16),
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&ds, &red, &cfg).unwrap();
        assert_eq!(out.validation.per_constraint, 1.0);
        assert_eq!(out.model.history.len(), 400);
        let p = out.model.classify(&[110.0, 100.0]).unwrap();
        assert_eq!(p, vec![true, true]);
    }

    #[test]
    fn constant_targets_are_rejected() {
        let mut ds = separable(3);
        ds.outputs.iter_mut().for_each(|t| *t = vec![true, false, true]);
        let red = reduce_outputs(&ds).unwrap();
        assert!(matches!(
            train(&ds, &red, &TrainConfig::default()),
            Err(LearnError::NoVaryingOutputs)
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable(5);
        let red = reduce_outputs(&ds).unwrap();
        let cfg = TrainConfig {
            hidden: vec![8, 8, 8],
            epochs: 20,
            ..TrainConfig::default()
        };
        let a = train(&ds, &red, &cfg).unwrap();
        let b = train(&ds, &red, &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn model_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = MlpModel::init(&[2, 3, 2], &mut rng);
        let path = std::env::temp_dir().join(format!("fairshed-mlp-{}.json", std::process::id()));
        model.save(&path).unwrap();
        assert_eq!(MlpModel::load(&path).unwrap(), model);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn extrapolation_flag() {
        let ds = separable(4);
        let red = reduce_outputs(&ds).unwrap();
        let cfg = TrainConfig {
            hidden: vec![4, 4, 4],
            epochs: 2,
            ..TrainConfig::default()
        };
        let model = train(&ds, &red, &cfg).unwrap().model;
        assert!(!model.extrapolates(&[15.0, 30.0]));
        assert!(model.extrapolates(&[-1.0, 30.0]));
        assert!(model.extrapolates(&[0.0, 31.0]));
    }
}
