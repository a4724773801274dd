//! Pitch salience, harmonic maps and harmonic series features (HSF).
//!
//! Given a frame-by-semitone salience matrix `P0` (binary ground truth, or
//! estimator output in `[0, 1]`), the harmonic map of harmonic number `k`
//! moves every active cell from its fundamental bin `f0` to the bin holding
//! the `k`-th partial, `f0 + round(12 * log2(k))` on the semitone grid.
//! Cells pushed past the top bin vanish. The harmonic series feature of order
//! `n`, `H_n`, is the element-wise sum of the maps for `k = 1..=n + 1`:
//!
//! ```text
//! H_n[t][f] = sum over k in 1..=n+1 of P0[t][f - shift(k)]   (terms with f < shift(k) are 0)
//! ```
//!
//! so `H_1` marks fundamentals and octaves, `H_3` adds the twelfth and the
//! double octave, and so on. Sums are not clipped: where a partial of one
//! note lands on another note's fundamental the cell counts both.
//!
//! The operation is linear in `P0` and acts on each frame independently.

use std::path::Path;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{self, Record};
use crate::error::{Error, Result};
use crate::geometry::{Geometry, FRAMES, PITCH_BINS};
use crate::raster::{FrameRaster, FreqAxis};

/// Highest HSF order the models are configured for.
pub const MAX_HSF_ORDER: usize = 5;

const SALIENCE_KIND: &[u8; 4] = b"PSAL";

/// Tolerance outside `[0, 1]` before a salience file is reported as suspect.
const SALIENCE_SLACK: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PitchSource {
    GroundTruth,
    ExternalEstimate,
}

/// Frame-by-semitone likelihood that a fundamental is sounding.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchSalience {
    raster: FrameRaster,
    source: PitchSource,
}

impl PitchSalience {
    /// Wraps a binary pitch roll.
    pub fn ground_truth(pitch_roll: FrameRaster) -> Result<Self> {
        check_semitone_axis(&pitch_roll)?;
        if pitch_roll.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Config("ground-truth salience must be binary".into()));
        }
        Ok(Self {
            raster: pitch_roll,
            source: PitchSource::GroundTruth,
        })
    }

    /// Wraps estimator output, clamping into `[0, 1]`.
    pub fn estimate(raster: FrameRaster) -> Result<Self> {
        check_semitone_axis(&raster)?;
        let mut raster = raster;
        raster.data_mut().mapv_inplace(|v| v.clamp(0.0, 1.0));
        Ok(Self {
            raster,
            source: PitchSource::ExternalEstimate,
        })
    }

    pub fn zeros() -> Self {
        Self {
            raster: FrameRaster::zeros(FreqAxis::Semitones),
            source: PitchSource::GroundTruth,
        }
    }

    pub fn source(&self) -> PitchSource {
        self.source
    }

    pub fn raster(&self) -> &FrameRaster {
        &self.raster
    }
}

fn check_semitone_axis(raster: &FrameRaster) -> Result<()> {
    if raster.axis() != FreqAxis::Semitones {
        return Err(Error::Config("pitch salience needs a semitone axis".into()));
    }
    Ok(())
}

/// Salience shifted onto the bins of one harmonic partial.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicMap {
    pub order: usize,
    pub raster: FrameRaster,
}

/// Harmonic series feature of order `n` (sum of harmonics 1..=n+1).
#[derive(Debug, Clone, PartialEq)]
pub struct Hsf {
    pub n: usize,
    pub raster: FrameRaster,
}

/// Semitone offset of the `k`-th harmonic above the fundamental,
/// `round(12 * log2(k))`.
pub fn harmonic_shift_bins(k: usize) -> Result<usize> {
    if k < 1 {
        return Err(Error::HarmonicNumber(k));
    }
    Ok((12.0 * (k as f64).log2()).round() as usize)
}

fn shifted_add(dst: &mut Array2<f32>, src: &Array2<f32>, shift: usize) {
    if shift >= PITCH_BINS {
        return;
    }
    let mut target = dst.slice_mut(s![.., shift..]);
    target += &src.slice(s![.., ..PITCH_BINS - shift]);
}

/// `out[t][f] = p0[t][f - shift(k)]` for `f >= shift(k)`, else 0.
pub fn harmonic_map(p0: &PitchSalience, k: usize) -> Result<HarmonicMap> {
    let shift = harmonic_shift_bins(k)?;
    let mut out = Array2::zeros((FRAMES, PITCH_BINS));
    shifted_add(&mut out, p0.raster.data(), shift);
    Ok(HarmonicMap {
        order: k,
        raster: FrameRaster::new(out, FreqAxis::Semitones)?,
    })
}

/// Element-wise sum of the harmonic maps for `k = 1..=n + 1`, `n` in 1..=5.
pub fn build_hsf(p0: &PitchSalience, n: usize) -> Result<Hsf> {
    if !(1..=MAX_HSF_ORDER).contains(&n) {
        return Err(Error::HsfOrder(n));
    }
    let src = p0.raster.data();
    let mut out = Array2::zeros((FRAMES, PITCH_BINS));
    for k in 1..=n + 1 {
        shifted_add(&mut out, src, harmonic_shift_bins(k)?);
    }
    Ok(Hsf {
        n,
        raster: FrameRaster::new(out, FreqAxis::Semitones)?,
    })
}

/// One record of a salience exchange file.
#[derive(Debug, Clone, PartialEq)]
pub struct SalienceRecord {
    pub clip_id: String,
    pub segment_index: usize,
    pub salience: PitchSalience,
    /// Values that fell outside `[-0.01, 1.01]` before clamping.
    pub out_of_range: usize,
}

/// Writes salience matrices in the exchange format: one container record of
/// kind `PSAL` per segment, header `{clip_id, segment_index, shape,
/// value_range, source}`, one row-major f32 tensor `salience` of shape
/// `[258, 88]`. See [`crate::container`] for the byte layout.
pub fn write_salience(path: &Path, records: &[(&str, usize, &FrameRaster)]) -> Result<()> {
    let records: Vec<Record> = records
        .iter()
        .map(|(clip_id, segment_index, raster)| {
            let data = raster.data();
            let lo = data.fold(f32::INFINITY, |m, &v| m.min(v));
            let hi = data.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
            let mut r = Record::new(
                SALIENCE_KIND,
                json!({
                    "clip_id": clip_id,
                    "segment_index": segment_index,
                    "shape": data.shape(),
                    "value_range": [lo, hi],
                }),
            );
            r.push("salience", data.shape(), data.iter().copied().collect());
            r
        })
        .collect();
    container::write_records(path, &records)
}

/// Reads every record of a salience exchange file, clamping values into
/// `[0, 1]`.
pub fn read_salience_records(path: &Path, geometry: &Geometry) -> Result<Vec<SalienceRecord>> {
    let expected = [geometry.frames, geometry.pitch_bins];
    container::read_records(path)?
        .into_iter()
        .map(|record| {
            let malformed = |message: &str| Error::Container {
                path: path.to_owned(),
                message: message.to_owned(),
            };
            if &record.kind != SALIENCE_KIND {
                return Err(malformed("not a salience record"));
            }
            let (shape, data) = record
                .tensor("salience")
                .ok_or_else(|| malformed("missing salience tensor"))?;
            if shape != expected {
                return Err(Error::shape("salience matrix", &expected, shape));
            }
            let out_of_range = data
                .iter()
                .filter(|&&v| !(-SALIENCE_SLACK..=1.0 + SALIENCE_SLACK).contains(&v))
                .count();
            let clip_id = record.header["clip_id"].as_str().unwrap_or_default().to_owned();
            let segment_index = record.header["segment_index"].as_u64().unwrap_or(0) as usize;
            if out_of_range > 0 {
                log::warn!(
                    "{}: {out_of_range} salience values outside [0, 1] for {clip_id}#{segment_index}; \
                     is this really a salience file?",
                    path.display()
                );
            }
            let raster = FrameRaster::new(
                Array2::from_shape_vec((expected[0], expected[1]), data.to_vec()).expect("checked"),
                FreqAxis::Semitones,
            )?;
            Ok(SalienceRecord {
                clip_id,
                segment_index,
                salience: PitchSalience::estimate(raster)?,
                out_of_range,
            })
        })
        .collect()
}

/// Loads a single-segment salience file.
pub fn load_external_salience(path: &Path, geometry: &Geometry) -> Result<PitchSalience> {
    let mut records = read_salience_records(path, geometry)?;
    if records.len() != 1 {
        return Err(Error::Container {
            path: path.to_owned(),
            message: format!("expected one salience record, found {}", records.len()),
        });
    }
    Ok(records.pop().unwrap().salience)
}
