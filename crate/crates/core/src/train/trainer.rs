use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_loss, LossConfig};
use super::metrics::{frame_f1, FramePair};
use super::threshold::tune_thresholds;
use crate::error::{Error, Result};
use crate::hsf::PitchSalience;
use crate::ingest::SegmentRecord;
use crate::nn::{prepare_input, stack_labels, InputTensor, Model, Variant};
use crate::raster::FrameRaster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Halve the rate when the selection F1 has not improved for `patience`
    /// epochs.
    HalveOnPlateau { patience: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub momentum: f64,
    pub initial_lr: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Fraction of training clips (the last ones, in manifest order) held
    /// out for model selection.
    pub validation_fraction: f64,
    /// Stop once the selection macro F1 reaches this value.
    pub target_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            initial_lr: 0.01,
            lr_schedule: LrSchedule::HalveOnPlateau { patience: 5 },
            batch_size: 16,
            max_epochs: 100,
            seed: 0,
            validation_fraction: 0.1,
            target_f1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One training segment: model input plus its `(frames, instruments)` label
/// roll.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub clip_id: String,
    pub input: InputTensor,
    pub labels: Array2<f32>,
}

impl TrainExample {
    /// Builds the input for `variant` from a segment and its CQT. Pitch-aware
    /// variants use `salience` when given, else the segment's ground-truth
    /// pitch roll.
    pub fn from_segment(
        variant: Variant,
        segment: &SegmentRecord,
        cqt: &FrameRaster,
        salience: Option<&PitchSalience>,
    ) -> Result<Self> {
        let truth;
        let salience = match salience {
            Some(s) => Some(s),
            None if variant.needs_pitch() => {
                truth = PitchSalience::ground_truth(segment.pitch_roll.clone())?;
                Some(&truth)
            }
            None => None,
        };
        Ok(Self {
            clip_id: segment.clip_id.clone(),
            input: prepare_input(variant, cqt, salience)?,
            labels: segment.label_roll.data().to_owned(),
        })
    }
}

/// Splits examples into training and validation by clip: the last
/// `floor(n_clips * fraction)` clips, in first-appearance order, are held out.
pub fn split_validation(examples: Vec<TrainExample>, fraction: f64) -> (Vec<TrainExample>, Vec<TrainExample>) {
    let mut clips: Vec<String> = Vec::new();
    for e in &examples {
        if !clips.contains(&e.clip_id) {
            clips.push(e.clip_id.clone());
        }
    }
    let held = ((clips.len() as f64) * fraction).floor() as usize;
    let held_out: Vec<String> = clips.split_off(clips.len() - held);
    examples.into_iter().partition(|e| !held_out.contains(&e.clip_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Macro F1 on the selection set with thresholds tuned on that set.
    pub selection_f1: f64,
    pub selection_set: String,
    pub lr: f64,
    pub seconds: f64,
}

/// Resumable optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub best_f1: f64,
    pub best_epoch: usize,
    pub stall: usize,
}

pub struct Trainer {
    model: Model,
    config: TrainConfig,
    loss: LossConfig,
    velocity: Vec<Vec<f32>>,
    state: TrainState,
    best: Option<Vec<Vec<f32>>>,
}

pub struct TrainOutcome {
    /// Parameters of the best selection epoch.
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_f1: f64,
}

/// Evaluation-mode likelihoods for every example, `(frames, instruments)`.
pub fn predict_all(model: &Model, examples: &[TrainExample], batch_size: usize) -> Result<Vec<Array2<f32>>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let inputs: Vec<&InputTensor> = chunk.iter().map(|e| &e.input).collect();
        out.extend(model.forward_batch(&inputs)?.into_iter().map(|r| r.raster.into_inner()));
    }
    Ok(out)
}

/// Macro F1 with thresholds tuned on the same predictions.
pub fn tuned_macro_f1(examples: &[TrainExample], predictions: &[Array2<f32>]) -> Result<f64> {
    let pairs: Vec<FramePair<'_>> = examples
        .iter()
        .zip(predictions)
        .map(|(e, p)| FramePair {
            clip_id: &e.clip_id,
            predictions: p.view(),
            labels: e.labels.view(),
        })
        .collect();
    let th = tune_thresholds(&pairs)?;
    Ok(frame_f1(&pairs, &th)?.macro_f1)
}

impl Trainer {
    pub fn new(mut model: Model, config: TrainConfig, loss: LossConfig) -> Result<Self> {
        config.validate()?;
        loss.validate()?;
        let velocity = model.params_mut().iter().map(|p| vec![0.0; p.len()]).collect();
        let state = TrainState {
            epoch: 0,
            lr: config.initial_lr,
            best_f1: f64::NEG_INFINITY,
            best_epoch: 0,
            stall: 0,
        };
        Ok(Self {
            model,
            config,
            loss,
            velocity,
            state,
            best: None,
        })
    }

    /// Restores a trainer from saved parameters, velocities and state.
    pub fn resume(
        mut model: Model,
        config: TrainConfig,
        loss: LossConfig,
        velocity: Vec<Vec<f32>>,
        state: TrainState,
    ) -> Result<Self> {
        let shapes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
        if velocity.iter().map(Vec::len).collect::<Vec<_>>() != shapes {
            return Err(Error::Config("optimizer state does not match the model".into()));
        }
        let mut t = Self::new(model, config, loss)?;
        t.velocity = velocity;
        t.state = state;
        Ok(t)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn sgd_step(&mut self) {
        let (lr, mu) = (self.state.lr as f32, self.config.momentum as f32);
        for (p, v) in self.model.params_mut().into_iter().zip(&mut self.velocity) {
            if !p.trainable {
                continue;
            }
            for ((w, g), m) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *m = mu * *m + g;
                *w -= lr * *m;
            }
        }
    }

    /// One pass over `train` in a seeded shuffled order, then model
    /// selection on `validation` (or on `train` when it is empty).
    pub fn run_epoch(&mut self, train: &[TrainExample], validation: &[TrainExample]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Config("no training examples".into()));
        }
        let started = Instant::now();
        let epoch = self.state.epoch + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_mul(0x9E37_79B9).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (batch_id, idx) in order.chunks(self.config.batch_size).enumerate() {
            let inputs: Vec<&InputTensor> = idx.iter().map(|&i| &train[i].input).collect();
            let labels: Vec<&Array2<f32>> = idx.iter().map(|&i| &train[i].labels).collect();
            let logits = self.model.train_logits(&inputs)?;
            let (loss, grad) = batch_loss(&logits, &stack_labels(&labels), &self.loss)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    loss,
                    epoch,
                    batch: batch_id,
                    lr: self.state.lr,
                });
            }
            self.model.zero_grad();
            self.model.backward(&grad);
            self.sgd_step();
            loss_sum += loss;
            batches += 1;
        }

        let (selection, set) = if validation.is_empty() {
            (train, "train")
        } else {
            (validation, "validation")
        };
        let preds = predict_all(&self.model, selection, self.config.batch_size)?;
        let f1 = tuned_macro_f1(selection, &preds)?;

        let lr_used = self.state.lr;
        if f1 > self.state.best_f1 {
            self.state.best_f1 = f1;
            self.state.best_epoch = epoch;
            self.state.stall = 0;
            self.best = Some(self.model.param_values());
        } else {
            self.state.stall += 1;
            if let LrSchedule::HalveOnPlateau { patience } = self.config.lr_schedule {
                if self.state.stall >= patience {
                    self.state.lr /= 2.0;
                    self.state.stall = 0;
                    log::info!("epoch {epoch}: selection F1 stalled, lr -> {}", self.state.lr);
                }
            }
        }
        self.state.epoch = epoch;
        Ok(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            selection_f1: f1,
            selection_set: set.to_owned(),
            lr: lr_used,
            seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `max_epochs` or the target F1, calling `on_epoch` after
    /// each epoch.
    pub fn fit(
        &mut self,
        train: &[TrainExample],
        validation: &[TrainExample],
        mut on_epoch: impl FnMut(&EpochRecord, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        let mut log = Vec::new();
        while self.state.epoch < self.config.max_epochs {
            let record = self.run_epoch(train, validation)?;
            on_epoch(&record, self)?;
            let done = self.config.target_f1.is_some_and(|t| record.selection_f1 >= t);
            log.push(record);
            if done {
                break;
            }
        }
        Ok(log)
    }

    /// The model with the best selection-epoch parameters.
    pub fn best_model(&self) -> Model {
        let mut model = self.model.clone();
        if let Some(best) = &self.best {
            for (p, v) in model.params_mut().into_iter().zip(best) {
                p.value.clone_from(v);
            }
        }
        model
    }
}

/// Trains `model` and returns the best-selection-epoch parameters with the
/// per-epoch log.
pub fn train(
    model: Model,
    train: &[TrainExample],
    validation: &[TrainExample],
    config: &TrainConfig,
    loss: &LossConfig,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, config.clone(), loss.clone())?;
    let log = trainer.fit(train, validation, |r, _| {
        log::info!(
            "epoch {:>3} loss {:.5} {} F1 {:.4} lr {}",
            r.epoch, r.train_loss, r.selection_set, r.selection_f1, r.lr
        );
        Ok(())
    })?;
    Ok(TrainOutcome {
        model: trainer.best_model(),
        best_epoch: trainer.state.best_epoch,
        best_f1: trainer.state.best_f1,
        log,
    })
}
