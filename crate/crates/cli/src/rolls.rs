//! Prediction roll files: one `ROLL` container record per clip with a
//! `predictions` tensor `[frames, 7]` and, when known, a `labels` tensor of
//! the same shape. Every header carries the run configuration and input
//! hash.

use std::path::Path;

use instrec::container::{read_records, write_records, Record};
use instrec::geometry::INSTRUMENTS;
use instrec::train::ThresholdVector;
use ndarray::Array2;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

pub const ROLL_KIND: &[u8; 4] = b"ROLL";

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRoll {
    pub clip_id: String,
    pub predictions: Array2<f32>,
    pub labels: Option<Array2<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollSet {
    pub config: Value,
    pub input_hash: String,
    /// Thresholds in force when the file was written, if any.
    pub thresholds: Option<ThresholdVector>,
    pub clips: Vec<ClipRoll>,
}

fn tensor(record: &Record, name: &str, path: &Path) -> CliResult<Option<Array2<f32>>> {
    let Some((shape, data)) = record.tensor(name) else {
        return Ok(None);
    };
    if shape.len() != 2 || shape[1] != INSTRUMENTS {
        return Err(instrec::Error::Container {
            path: path.to_owned(),
            message: format!("{name} tensor has shape {shape:?}, expected [frames, {INSTRUMENTS}]"),
        }
        .into());
    }
    Ok(Some(Array2::from_shape_vec((shape[0], shape[1]), data.to_vec()).expect("checked shape")))
}

impl RollSet {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let records: Vec<Record> = self
            .clips
            .iter()
            .map(|clip| {
                let mut r = Record::new(
                    ROLL_KIND,
                    json!({
                        "clip_id": clip.clip_id,
                        "frames": clip.predictions.nrows(),
                        "config": self.config,
                        "input_hash": self.input_hash,
                        "thresholds": self.thresholds,
                    }),
                );
                let shape = [clip.predictions.nrows(), INSTRUMENTS];
                r.push("predictions", &shape, clip.predictions.iter().copied().collect());
                if let Some(l) = &clip.labels {
                    r.push("labels", l.shape(), l.iter().copied().collect());
                }
                r
            })
            .collect();
        Ok(write_records(path, &records)?)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let records = read_records(path)?;
        let mut set = RollSet {
            config: Value::Null,
            input_hash: String::new(),
            thresholds: None,
            clips: Vec::new(),
        };
        for record in &records {
            if &record.kind != ROLL_KIND {
                return Err(CliError::Input(format!("{} is not a prediction roll file", path.display())));
            }
            set.config = record.header["config"].clone();
            set.input_hash = record.header["input_hash"].as_str().unwrap_or_default().to_owned();
            set.thresholds = serde_json::from_value(record.header["thresholds"].clone()).ok();
            let predictions = tensor(record, "predictions", path)?
                .ok_or_else(|| CliError::Input(format!("{}: record without predictions", path.display())))?;
            set.clips.push(ClipRoll {
                clip_id: record.header["clip_id"].as_str().unwrap_or_default().to_owned(),
                predictions,
                labels: tensor(record, "labels", path)?,
            });
        }
        Ok(set)
    }
}
