use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::INSTRUMENTS;

/// Positive-class weights for the weighted binary cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub class_weights: Vec<f64>,
    pub weight_cap: f64,
}

pub const DEFAULT_WEIGHT_CAP: f64 = 10.0;

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            class_weights: vec![1.0; INSTRUMENTS],
            weight_cap: DEFAULT_WEIGHT_CAP,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_weights.len() != INSTRUMENTS {
            return Err(Error::shape("class weights", &[INSTRUMENTS], &[self.class_weights.len()]));
        }
        if !(self.weight_cap.is_finite() && self.weight_cap >= 1.0) {
            return Err(Error::Config(format!("weight cap {} must be finite and >= 1", self.weight_cap)));
        }
        if let Some(w) = self.class_weights.iter().find(|w| !(w.is_finite() && **w >= 1.0)) {
            return Err(Error::Config(format!("class weight {w} must be finite and >= 1")));
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and its derivative for one logit:
/// `-(w y log s(z) + (1 - y) log(1 - s(z)))`.
#[inline]
fn element(z: f64, y: f64, w: f64) -> (f64, f64) {
    let loss = w * y * softplus(-z) + (1.0 - y) * softplus(z);
    let s = sigmoid(z);
    let grad = w * y * (s - 1.0) + (1.0 - y) * s;
    (loss, grad)
}

fn check(logits: &[usize], labels: &[usize], cfg: &LossConfig, instruments: usize) -> Result<()> {
    if logits != labels {
        return Err(Error::shape("labels", logits, labels));
    }
    if cfg.class_weights.len() != instruments {
        return Err(Error::shape("class weights", &[instruments], &[cfg.class_weights.len()]));
    }
    Ok(())
}

/// Mean weighted binary cross-entropy over a `(frames, instruments)` matrix
/// of pre-sigmoid logits.
pub fn weighted_bce(logits: ArrayView2<f64>, labels: ArrayView2<f64>, cfg: &LossConfig) -> Result<f64> {
    check(logits.shape(), labels.shape(), cfg, logits.ncols())?;
    let mut total = 0.0;
    for (zrow, yrow) in logits.rows().into_iter().zip(labels.rows()) {
        for ((&z, &y), &w) in zrow.iter().zip(yrow).zip(&cfg.class_weights) {
            total += element(z, y, w).0;
        }
    }
    Ok(total / logits.len().max(1) as f64)
}

/// Gradient of [`weighted_bce`] with respect to the logits.
pub fn weighted_bce_grad(
    logits: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    cfg: &LossConfig,
) -> Result<Array2<f64>> {
    check(logits.shape(), labels.shape(), cfg, logits.ncols())?;
    let n = logits.len().max(1) as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    for ((mut grow, zrow), yrow) in grad.rows_mut().into_iter().zip(logits.rows()).zip(labels.rows()) {
        for (((g, &z), &y), &w) in grow.iter_mut().zip(zrow).zip(yrow).zip(&cfg.class_weights) {
            *g = element(z, y, w).1 / n;
        }
    }
    Ok(grad)
}

/// Loss and logit gradient for a training batch laid out
/// `(batch, instruments, frames)`.
pub fn batch_loss(logits: &Array3<f32>, labels: &Array3<f32>, cfg: &LossConfig) -> Result<(f64, Array3<f32>)> {
    check(logits.shape(), labels.shape(), cfg, logits.shape()[1])?;
    let n = logits.len().max(1) as f64;
    let mut grad = Array3::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (i, ((mut g, z), y)) in grad
        .axis_iter_mut(Axis(1))
        .zip(logits.axis_iter(Axis(1)))
        .zip(labels.axis_iter(Axis(1)))
        .enumerate()
    {
        let w = cfg.class_weights[i];
        Zip::from(&mut g).and(&z).and(&y).for_each(|g, &z, &y| {
            let (l, d) = element(z as f64, y as f64, w);
            total += l;
            *g = (d / n) as f32;
        });
    }
    Ok((total / n, grad))
}
