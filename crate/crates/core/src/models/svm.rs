//! Linear SVM trained by stochastic subgradient descent on the
//! L2-regularized hinge loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::Dataset;
use crate::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub regularization: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            learning_rate: 0.01,
            epochs: 20,
            regularization: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl SvmModel {
    pub fn score(&self, row: &[f64]) -> f64 {
        self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// Class 1 iff the decision value is >= 0.
    pub fn predict(&self, row: &[f64]) -> usize {
        (self.score(row) >= 0.0) as usize
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + 1
    }
}

/// Regularized hinge objective `lambda/2 |w|^2 + mean(max(0, 1 - y f(x)))`
/// over the given rows, with labels in {0, 1}.
pub fn hinge_objective(weights: &[f64], bias: f64, lambda: f64, data: &Dataset, rows: &[usize]) -> f64 {
    let reg = 0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>();
    let hinge = rows
        .iter()
        .map(|&i| {
            let y = if data.labels[i] == 1 { 1.0 } else { -1.0 };
            let f = weights.iter().zip(data.row(i)).map(|(w, x)| w * x).sum::<f64>() + bias;
            (1.0 - y * f).max(0.0)
        })
        .sum::<f64>()
        / rows.len().max(1) as f64;
    reg + hinge
}

/// Trains on the train split. Labels must be binary. Weights start at zero,
/// the step size decays as `lr / sqrt(1 + epoch)`.
pub fn train_svm(cfg: &SvmConfig, data: &Dataset) -> Result<SvmModel, ModelError> {
    if data.num_classes() != 2 {
        return Err(ModelError::Data(format!(
            "svm needs binary labels, got {} classes",
            data.num_classes()
        )));
    }
    if !(cfg.learning_rate > 0.0) || !(cfg.regularization >= 0.0) {
        return Err(ModelError::Config(
            "svm learning rate must be > 0 and regularization >= 0".into(),
        ));
    }
    let d = data.width();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut rng = seeded_rng(cfg.seed);
    let mut order = data.train().to_vec();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let eta = cfg.learning_rate / (1.0 + epoch as f64).sqrt();
        for &i in &order {
            let x = data.row(i);
            let y = if data.labels[i] == 1 { 1.0 } else { -1.0 };
            let margin = y * (w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b);
            let shrink = 1.0 - eta * cfg.regularization;
            if margin < 1.0 {
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj = shrink * *wj + eta * y * xj;
                }
                b += eta * y;
            } else {
                w.iter_mut().for_each(|wj| *wj *= shrink);
            }
        }
        if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
    }
    Ok(SvmModel { weights: w, bias: b })
}
