//! Linear heads, binary cross-entropy losses and a full-batch logistic
//! regression trainer.
//!
//! All losses use the log-sum-exp form on logits so saturated predictions
//! stay finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp applied before taking logarithms of probabilities.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]` evaluated stably.
#[inline]
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// `C x (D + 1)` weight matrix; the last column is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
}

impl LinearModel {
    pub fn new(classes: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != classes * (dim + 1) {
            return Err(Error::shape(format!(
                "linear model {classes}x({dim}+1) needs {} weights, got {}",
                classes * (dim + 1),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("non-finite weight"));
        }
        Ok(Self { classes, dim, weights })
    }

    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { classes, dim, weights: vec![0.0; classes * (dim + 1)] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Re-validates after deserialization.
    pub fn checked(self) -> Result<Self> {
        Self::new(self.classes, self.dim, self.weights)
    }

    /// `W [x; 1]`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::shape(format!("input has {} features, model expects {}", x.len(), self.dim)));
        }
        Ok(self
            .weights
            .chunks(self.dim + 1)
            .map(|row| row[..self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[self.dim])
            .collect())
    }

    /// Sum-of-BCE loss of the head on one example and its gradient with
    /// respect to the weights (same layout as [`LinearModel::weights`]).
    pub fn sum_bce_weight_grad(&self, x: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let logits = self.forward(x)?;
        let (loss, dlogits) = sum_bce_loss(&logits, targets)?;
        let mut grad = vec![0.0; self.weights.len()];
        for (c, g) in dlogits.iter().enumerate() {
            let row = &mut grad[c * (self.dim + 1)..(c + 1) * (self.dim + 1)];
            for (gw, v) in row.iter_mut().zip(x) {
                *gw = g * v;
            }
            row[self.dim] = *g;
        }
        Ok((loss, grad))
    }
}

/// `linear_forward`: logits `W [x; 1]`.
pub fn linear_forward(model: &LinearModel, x: &[f64]) -> Result<Vec<f64>> {
    model.forward(x)
}

/// Sum over classes of independent binary cross-entropies on logits.
/// Returns the loss and its gradient `σ(z) - y` with respect to the logits.
pub fn sum_bce_loss(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != targets.len() {
        return Err(Error::shape(format!("{} logits vs {} targets", logits.len(), targets.len())));
    }
    let loss = logits.iter().zip(targets).map(|(&z, &y)| bce_with_logit(z, y)).sum();
    let grad = logits.iter().zip(targets).map(|(&z, &y)| sigmoid(z) - y).collect();
    Ok((loss, grad))
}

/// Mean per-pixel binary cross-entropy of a predicted probability mask
/// against a binary target, with probabilities clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn mask_bce_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    mask_bce_loss_grad(predicted, target).map(|(l, _)| l)
}

/// [`mask_bce_loss`] together with its gradient with respect to the
/// predicted probabilities (zero where the clamp is active).
pub fn mask_bce_loss_grad(predicted: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != target.len() {
        return Err(Error::shape(format!("mask has {} pixels, target has {}", predicted.len(), target.len())));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("empty mask"));
    }
    let n = predicted.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predicted.len());
    for (&p, &y) in predicted.iter().zip(target) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        let g = if pc == p { (-y / pc + (1.0 - y) / (1.0 - pc)) / n } else { 0.0 };
        grad.push(g);
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// L2 penalty on the non-bias weights.
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, steps: 1000, l2: 1e-4 }
    }
}

/// Mean BCE over `samples` plus `l2/2 ‖w‖²` (bias excluded), and its gradient
/// with respect to the weights of a single-output model.
pub fn logistic_objective(model: &LinearModel, samples: &[(Vec<f64>, bool)], l2: f64) -> Result<(f64, Vec<f64>)> {
    if model.classes() != 1 {
        return Err(Error::shape("logistic objective needs a single-output model"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let d = model.dim();
    let n = samples.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (x, y) in samples {
        let z = model.forward(x)?[0];
        let y = f64::from(u8::from(*y));
        loss += bce_with_logit(z, y);
        let g = sigmoid(z) - y;
        for (gw, v) in grad.iter_mut().zip(x) {
            *gw += g * v;
        }
        grad[d] += g;
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    let w = &model.weights()[..d];
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    for (g, v) in grad.iter_mut().zip(w) {
        *g += l2 * v;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub model: LinearModel,
    /// Objective before each step, followed by the final objective.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent on [`logistic_objective`] from zero weights.
pub fn logistic_fit(samples: &[(Vec<f64>, bool)], cfg: &TrainConfig) -> Result<LogisticFit> {
    if !(cfg.learning_rate > 0.0 && cfg.l2 >= 0.0 && cfg.steps > 0) {
        return Err(Error::invalid("train config needs learning_rate > 0, l2 >= 0, steps > 0"));
    }
    let positives = samples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::invalid("logistic_fit needs at least one sample of each class"));
    }
    let dim = samples[0].0.len();
    let mut model = LinearModel::zeros(1, dim);
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (loss, grad) = logistic_objective(&model, samples, cfg.l2)?;
        losses.push(loss);
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * g;
        }
    }
    losses.push(logistic_objective(&model, samples, cfg.l2)?.0);
    Ok(LogisticFit { model, losses })
}
