//! L2-regularized logistic regression on z-standardized features.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_samples, LabeledSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Weight each class by the inverse of its frequency.
    pub balance_classes: bool,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            l2: 1e-3,
            epochs: 3000,
            learning_rate: 1.0,
            seed: 0,
            balance_classes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if self.feature_means.len() != n || self.feature_stds.len() != n {
            return Err(Error::invalid("linear model vectors differ in length"));
        }
        if self.feature_stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("linear model has a non-positive feature std"));
        }
        Ok(())
    }

    pub fn standardize(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(&self.feature_means)
            .zip(&self.feature_stds)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn decision_value(&self, features: &[f64]) -> f64 {
        self.bias
            + features
                .iter()
                .zip(&self.feature_means)
                .zip(&self.feature_stds)
                .zip(&self.weights)
                .map(|(((x, m), s), w)| w * (x - m) / s)
                .sum::<f64>()
    }
}

/// Probability of correspondence under a linear model.
pub fn predict_linear(model: &LinearModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.n_features() {
        return Err(Error::invalid(format!(
            "linear model expects {} features, got {}",
            model.n_features(),
            features.len()
        )));
    }
    Ok(sigmoid(model.decision_value(features)))
}

/// Mean (optionally class-weighted) logistic loss plus `l2/2 · |w|²`.
///
/// `x` must already be standardized. `sample_weights` of `None` means 1.
pub fn logistic_loss(
    weights: &[f64],
    bias: f64,
    x: &[Vec<f64>],
    y: &[bool],
    sample_weights: Option<&[f64]>,
    l2: f64,
) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (i, (row, &label)) in x.iter().zip(y).enumerate() {
        let c = sample_weights.map_or(1.0, |w| w[i]);
        let z = bias + dot(weights, row);
        total += c * (softplus(z) - if label { z } else { 0.0 });
        wsum += c;
    }
    total / wsum + 0.5 * l2 * dot(weights, weights)
}

/// Analytic gradient of [`logistic_loss`] with respect to `(weights, bias)`.
pub fn logistic_gradient(
    weights: &[f64],
    bias: f64,
    x: &[Vec<f64>],
    y: &[bool],
    sample_weights: Option<&[f64]>,
    l2: f64,
) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    let mut wsum = 0.0;
    for (i, (row, &label)) in x.iter().zip(y).enumerate() {
        let c = sample_weights.map_or(1.0, |w| w[i]);
        let r = c * (sigmoid(bias + dot(weights, row)) - f64::from(u8::from(label)));
        for (g, xi) in gw.iter_mut().zip(row) {
            *g += r * xi;
        }
        gb += r;
        wsum += c;
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / wsum + l2 * w;
    }
    (gw, gb / wsum)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn class_weights(y: &[bool]) -> (f64, f64) {
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&l| l).count() as f64;
    (n / (2.0 * (n - pos)), n / (2.0 * pos))
}

/// Fits a logistic model by full-batch gradient descent with backtracking.
pub fn train_linear(samples: &[LabeledSample], config: &LinearConfig) -> Result<LinearModel> {
    let d = check_samples(samples)?;
    if !(config.l2 > 0.0) || !(config.learning_rate > 0.0) {
        return Err(Error::invalid("l2 and learning_rate must be positive"));
    }
    let n = samples.len() as f64;

    let mut means = vec![0.0; d];
    for s in samples {
        for (m, x) in means.iter_mut().zip(&s.features) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; d];
    for s in samples {
        for ((v, x), m) in stds.iter_mut().zip(&s.features).zip(&means) {
            *v += (x - m).powi(2);
        }
    }
    for (j, v) in stds.iter_mut().enumerate() {
        *v = (*v / n).sqrt();
        if !(*v > 1e-12) {
            warn!("feature {j} has zero variance; using unit scale");
            *v = 1.0;
        }
    }

    let x: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            s.features
                .iter()
                .zip(&means)
                .zip(&stds)
                .map(|((x, m), s)| (x - m) / s)
                .collect()
        })
        .collect();
    let y: Vec<bool> = samples.iter().map(|s| s.label).collect();
    let sw: Option<Vec<f64>> = config.balance_classes.then(|| {
        let (wn, wp) = class_weights(&y);
        y.iter().map(|&l| if l { wp } else { wn }).collect()
    });
    let sw = sw.as_deref();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut w: Vec<f64> = (0..d).map(|_| init.sample(&mut rng)).collect();
    let mut b = 0.0;
    let mut loss = logistic_loss(&w, b, &x, &y, sw, config.l2);
    let mut step = config.learning_rate;

    for _ in 0..config.epochs {
        let (gw, gb) = logistic_gradient(&w, b, &x, &y, sw, config.l2);
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        if gnorm2 < 1e-24 {
            break;
        }
        // Armijo backtracking; grow the step again after each success
        loop {
            let cw: Vec<f64> = w.iter().zip(&gw).map(|(w, g)| w - step * g).collect();
            let cb = b - step * gb;
            let cl = logistic_loss(&cw, cb, &x, &y, sw, config.l2);
            if cl <= loss - 0.5 * step * gnorm2 {
                w = cw;
                b = cb;
                loss = cl;
                step = (step * 1.5).min(config.learning_rate * 8.0);
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
        if step < 1e-12 {
            break;
        }
    }

    let model = LinearModel {
        weights: w,
        bias: b,
        feature_means: means,
        feature_stds: stds,
    };
    model.validate()?;
    Ok(model)
}
