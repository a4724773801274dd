use ndarray::Array2;

use super::labels::NoteEvent;
use crate::error::{Error, Result};
use crate::geometry::{pitch_bin, FRAMES, HOP, INSTRUMENTS, PITCH_BINS, SEGMENT_SAMPLES};
use crate::raster::{FrameRaster, FreqAxis};

/// One 3-second example cut from a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub clip_id: String,
    pub segment_index: usize,
    /// Exactly `SEGMENT_SAMPLES` samples; the tail of a clip's last segment
    /// is zero padding.
    pub audio: Vec<f32>,
    /// Samples of `audio` that came from the clip.
    pub valid_samples: usize,
    /// Frame-by-instrument activity, binary.
    pub label_roll: FrameRaster,
    /// Frame-by-semitone activity over all notes, labeled or not, binary.
    pub pitch_roll: FrameRaster,
}

/// Frames `t` whose center `t * HOP + HOP / 2` lies in `[onset, offset)`.
fn active_frames(onset: u64, offset: u64) -> std::ops::Range<usize> {
    let half = (HOP / 2) as u64;
    let hop = HOP as u64;
    // smallest t with t*hop + half >= x
    let first_at_or_after = |x: u64| -> u64 { x.saturating_sub(half).div_ceil(hop) };
    let start = first_at_or_after(onset).min(FRAMES as u64) as usize;
    let end = first_at_or_after(offset).min(FRAMES as u64) as usize;
    start..end.max(start)
}

/// Instrument activity per frame. Events must already be clipped to the
/// segment and re-based to its first sample.
pub fn rasterize_labels(events: &[NoteEvent]) -> FrameRaster {
    let mut roll = Array2::<f32>::zeros((FRAMES, INSTRUMENTS));
    for event in events {
        if let Some(n) = event.instrument {
            for t in active_frames(event.onset_sample, event.offset_sample) {
                roll[[t, n]] = 1.0;
            }
        }
    }
    FrameRaster::new(roll, FreqAxis::Instruments).expect("fixed geometry")
}

/// Pitch activity per frame, one column per piano key. Notes outside MIDI
/// 21..=108 are dropped.
pub fn rasterize_pitch(events: &[NoteEvent]) -> FrameRaster {
    let mut roll = Array2::<f32>::zeros((FRAMES, PITCH_BINS));
    for event in events {
        let Some(bin) = pitch_bin(event.midi_pitch) else {
            log::warn!(
                "dropping MIDI pitch {} outside the piano range",
                event.midi_pitch
            );
            continue;
        };
        for t in active_frames(event.onset_sample, event.offset_sample) {
            roll[[t, bin]] = 1.0;
        }
    }
    FrameRaster::new(roll, FreqAxis::Semitones).expect("fixed geometry")
}

/// Cuts a mono 44.1 kHz clip into 3-second segments, zero-padding the last
/// one, and rasterizes the notes falling in each.
pub fn segment_clip(
    clip_id: &str,
    audio: &[f32],
    events: &[NoteEvent],
) -> Result<Vec<SegmentRecord>> {
    if audio.is_empty() {
        return Err(Error::EmptyAudio);
    }
    Ok(audio
        .chunks(SEGMENT_SAMPLES)
        .enumerate()
        .map(|(index, chunk)| {
            let start = (index * SEGMENT_SAMPLES) as u64;
            let end = start + SEGMENT_SAMPLES as u64;
            let local: Vec<NoteEvent> =
                events.iter().filter_map(|e| e.clipped(start, end)).collect();
            let mut samples = chunk.to_vec();
            samples.resize(SEGMENT_SAMPLES, 0.0);
            SegmentRecord {
                clip_id: clip_id.to_owned(),
                segment_index: index,
                audio: samples,
                valid_samples: chunk.len(),
                label_roll: rasterize_labels(&local),
                pitch_roll: rasterize_pitch(&local),
            }
        })
        .collect())
}

/// Concatenates segment audio and drops the padding.
pub fn reassemble_audio(segments: &[SegmentRecord]) -> Vec<f32> {
    segments
        .iter()
        .flat_map(|s| s.audio[..s.valid_samples].iter().copied())
        .collect()
}
