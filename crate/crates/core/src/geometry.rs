//! Fixed analysis grid shared by audio segments, spectral features, pitch
//! rolls and instrument rolls.

/// Working sample rate. Audio at any other rate is resampled on load.
pub const SAMPLE_RATE: u32 = 44_100;

/// Frame hop in samples.
pub const HOP: usize = 512;

/// Samples in one 3-second segment.
pub const SEGMENT_SAMPLES: usize = 3 * SAMPLE_RATE as usize;

/// Frames per segment, `floor(SEGMENT_SAMPLES / HOP)`.
pub const FRAMES: usize = SEGMENT_SAMPLES / HOP;

/// Semitone bins covering the piano keyboard, A0 through C8.
pub const PITCH_BINS: usize = 88;

/// MIDI note number of the lowest pitch bin (A0).
pub const LOWEST_MIDI: u8 = 21;

/// Number of recognized instruments.
pub const INSTRUMENTS: usize = 7;

/// Sample index a frame is evaluated at. A note is active in frame `t` iff it
/// covers this sample.
#[inline]
pub const fn frame_center(frame: usize) -> usize {
    frame * HOP + HOP / 2
}

/// Pitch bin of a MIDI note, or `None` outside the piano range.
#[inline]
pub fn pitch_bin(midi: u8) -> Option<usize> {
    let bin = midi.checked_sub(LOWEST_MIDI)? as usize;
    (bin < PITCH_BINS).then_some(bin)
}

/// Number of segments needed to cover `samples` samples.
#[inline]
pub fn segment_count(samples: usize) -> usize {
    samples.div_ceil(SEGMENT_SAMPLES)
}

/// Frame-level geometry, hashed into checkpoints and feature caches so
/// artifacts computed on a different grid are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Geometry {
    pub sample_rate: u32,
    pub hop: usize,
    pub segment_samples: usize,
    pub frames: usize,
    pub pitch_bins: usize,
    pub instruments: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            hop: HOP,
            segment_samples: SEGMENT_SAMPLES,
            frames: FRAMES,
            pitch_bins: PITCH_BINS,
            instruments: INSTRUMENTS,
        }
    }
}
