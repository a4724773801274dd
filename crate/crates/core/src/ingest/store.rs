//! On-disk segment store.
//!
//! ```text
//! <dir>/index.json                       StoreIndex (versioned)
//! <dir>/<clip_id>/<segment_index>.seg    one container record of kind "SEG "
//! ```
//!
//! A segment record's header holds `clip_id`, `segment_index`,
//! `valid_samples` and `split`; its tensors are `audio` [132300],
//! `label_roll` [258, 7] and `pitch_roll` [258, 88].

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::catalog::InstrumentCatalog;
use super::dataset::Split;
use super::segment::SegmentRecord;
use crate::container::{self, Record};
use crate::error::{Error, Result};
use crate::geometry::{FRAMES, INSTRUMENTS, PITCH_BINS, SEGMENT_SAMPLES};
use crate::raster::{FrameRaster, FreqAxis};

pub const STORE_VERSION: u32 = 1;
const SEGMENT_KIND: &[u8; 4] = b"SEG ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredClip {
    pub clip_id: String,
    pub split: Split,
    pub segments: usize,
    pub duration_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreIndex {
    pub version: u32,
    /// Hash over the dataset files and catalog the store was built from.
    pub input_hash: String,
    pub catalog: InstrumentCatalog,
    pub clips: Vec<StoredClip>,
}

impl StoreIndex {
    pub fn clips_in(&self, split: Split) -> impl Iterator<Item = &StoredClip> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn segment_count(&self, split: Split) -> usize {
        self.clips_in(split).map(|c| c.segments).sum()
    }
}

pub struct SegmentStore {
    dir: PathBuf,
}

impl SegmentStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn index_path(&self) -> PathBuf {
        self.dir.join("index.json")
    }

    fn segment_path(&self, clip_id: &str, index: usize) -> PathBuf {
        self.dir.join(clip_id).join(format!("{index}.seg"))
    }

    /// The index if the store exists and has the current version.
    pub fn read_index(&self) -> Result<Option<StoreIndex>> {
        let path = self.index_path();
        if !path.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: StoreIndex = serde_json::from_str(&text)?;
        Ok((index.version == STORE_VERSION).then_some(index))
    }

    pub fn write_index(&self, index: &StoreIndex) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.index_path();
        std::fs::write(&path, serde_json::to_vec_pretty(index)?).map_err(|e| Error::io(&path, e))
    }

    pub fn write_segment(&self, split: Split, segment: &SegmentRecord) -> Result<()> {
        let mut record = Record::new(
            SEGMENT_KIND,
            json!({
                "clip_id": segment.clip_id,
                "segment_index": segment.segment_index,
                "valid_samples": segment.valid_samples,
                "split": split,
            }),
        );
        record.push("audio", &[SEGMENT_SAMPLES], segment.audio.clone());
        record.push(
            "label_roll",
            &[FRAMES, INSTRUMENTS],
            segment.label_roll.data().iter().copied().collect(),
        );
        record.push(
            "pitch_roll",
            &[FRAMES, PITCH_BINS],
            segment.pitch_roll.data().iter().copied().collect(),
        );
        container::write_records(
            &self.segment_path(&segment.clip_id, segment.segment_index),
            &[record],
        )
    }

    pub fn read_segment(&self, clip_id: &str, index: usize) -> Result<SegmentRecord> {
        let path = self.segment_path(clip_id, index);
        let record = container::read_single(&path, SEGMENT_KIND)?;
        let malformed = |message: &str| Error::Container {
            path: path.clone(),
            message: message.to_owned(),
        };
        let tensor = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let (s, data) = record
                .tensor(name)
                .ok_or_else(|| malformed(&format!("missing tensor {name}")))?;
            if s != shape {
                return Err(Error::shape(name, shape, s));
            }
            Ok(data.to_vec())
        };
        let roll = |name: &str, axis: FreqAxis| -> Result<FrameRaster> {
            let data = tensor(name, &[FRAMES, axis.len()])?;
            FrameRaster::new(
                Array2::from_shape_vec((FRAMES, axis.len()), data).expect("checked shape"),
                axis,
            )
        };
        let valid_samples = record.header["valid_samples"]
            .as_u64()
            .ok_or_else(|| malformed("missing valid_samples"))? as usize;
        Ok(SegmentRecord {
            clip_id: clip_id.to_owned(),
            segment_index: index,
            audio: tensor("audio", &[SEGMENT_SAMPLES])?,
            valid_samples,
            label_roll: roll("label_roll", FreqAxis::Instruments)?,
            pitch_roll: roll("pitch_roll", FreqAxis::Semitones)?,
        })
    }

    pub fn read_clip(&self, clip: &StoredClip) -> Result<Vec<SegmentRecord>> {
        (0..clip.segments)
            .map(|i| self.read_segment(&clip.clip_id, i))
            .collect()
    }
}
