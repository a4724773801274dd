use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::threshold::ThresholdVector;
use crate::error::{Error, Result};
use crate::geometry::INSTRUMENTS;
use crate::ingest::INSTRUMENT_NAMES;

/// Predictions and labels for one segment, both `(frames, instruments)`.
#[derive(Debug, Clone, Copy)]
pub struct FramePair<'a> {
    pub clip_id: &'a str,
    pub predictions: ArrayView2<'a, f32>,
    pub labels: ArrayView2<'a, f32>,
}

impl FramePair<'_> {
    pub(crate) fn check(&self) -> Result<()> {
        if self.predictions.shape() != self.labels.shape() {
            return Err(Error::shape("labels", self.predictions.shape(), self.labels.shape()));
        }
        if self.predictions.ncols() != INSTRUMENTS {
            return Err(Error::shape(
                "prediction roll",
                &[self.predictions.nrows(), INSTRUMENTS],
                self.predictions.shape(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall, `2TP / (2TP + FP + FN)`;
    /// zero when there are no true positives.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentScore {
    pub instrument: String,
    #[serde(flatten)]
    pub counts: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip_id: String,
    pub frames: usize,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instruments: Vec<InstrumentScore>,
    pub macro_f1: f64,
    pub per_clip: Vec<ClipScore>,
    pub thresholds: ThresholdVector,
    #[serde(default)]
    pub config_hashes: BTreeMap<String, String>,
}

fn confusions<'a, 'b: 'a>(pairs: impl IntoIterator<Item = &'a FramePair<'b>>, thresholds: &ThresholdVector) -> [Confusion; INSTRUMENTS] {
    let mut c = [Confusion::default(); INSTRUMENTS];
    for pair in pairs {
        for (prow, lrow) in pair.predictions.rows().into_iter().zip(pair.labels.rows()) {
            for n in 0..INSTRUMENTS {
                c[n].add(thresholds.is_active(n, prow[n]), lrow[n] >= 0.5);
            }
        }
    }
    c
}

fn macro_of(f1: &[f64]) -> f64 {
    f1.iter().sum::<f64>() / f1.len() as f64
}

/// Frame-level scores: binarize each instrument at its threshold, count over
/// all frames of all segments, then average F1 across instruments.
pub fn frame_f1(pairs: &[FramePair<'_>], thresholds: &ThresholdVector) -> Result<EvalReport> {
    for p in pairs {
        p.check()?;
    }
    let totals = confusions(pairs, thresholds);
    let instruments: Vec<InstrumentScore> = totals
        .iter()
        .zip(INSTRUMENT_NAMES)
        .map(|(c, name)| InstrumentScore {
            instrument: name.to_owned(),
            counts: *c,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        })
        .collect();
    let f1: Vec<f64> = instruments.iter().map(|s| s.f1).collect();

    let mut clip_order: Vec<&str> = Vec::new();
    let mut by_clip: BTreeMap<&str, Vec<&FramePair<'_>>> = BTreeMap::new();
    for p in pairs {
        if !by_clip.contains_key(p.clip_id) {
            clip_order.push(p.clip_id);
        }
        by_clip.entry(p.clip_id).or_default().push(p);
    }
    clip_order.sort();
    let per_clip = clip_order
        .into_iter()
        .map(|id| {
            let group = &by_clip[id];
            let f1: Vec<f64> = confusions(group.iter().copied(), thresholds).iter().map(Confusion::f1).collect();
            ClipScore {
                clip_id: id.to_owned(),
                frames: group.iter().map(|p| p.predictions.nrows()).sum(),
                macro_f1: macro_of(&f1),
                f1,
            }
        })
        .collect();

    Ok(EvalReport {
        macro_f1: macro_of(&f1),
        instruments,
        per_clip,
        thresholds: thresholds.clone(),
        config_hashes: BTreeMap::new(),
    })
}

impl EvalReport {
    pub fn f1(&self) -> Vec<f64> {
        self.instruments.iter().map(|s| s.f1).collect()
    }
}

/// Text table with one row per method and columns
/// `Piano .. Horn, Avg.`.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(0).max("Method".len());
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Method");
    for name in INSTRUMENT_NAMES.iter().chain(&["Avg."]) {
        let _ = write!(out, " | {name:>8}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(width + 11 * (INSTRUMENTS + 1)));
    out.push('\n');
    for (method, report) in rows {
        let _ = write!(out, "{method:<width$}");
        for f in report.f1().iter().chain(std::iter::once(&report.macro_f1)) {
            let _ = write!(out, " | {f:>8.3}");
        }
        out.push('\n');
    }
    out
}
