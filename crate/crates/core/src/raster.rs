use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FRAMES, HOP, INSTRUMENTS, PITCH_BINS, SAMPLE_RATE};

/// What the columns of a [`FrameRaster`] index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqAxis {
    /// Semitone bins, bin 0 = A0 (MIDI 21).
    Semitones,
    /// Instrument indices in catalog order.
    Instruments,
}

impl FreqAxis {
    pub fn len(self) -> usize {
        match self {
            FreqAxis::Semitones => PITCH_BINS,
            FreqAxis::Instruments => INSTRUMENTS,
        }
    }
}

/// A time-by-bin matrix on the fixed frame grid. Rows are frames spaced
/// `HOP / SAMPLE_RATE` seconds apart.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRaster {
    data: Array2<f32>,
    axis: FreqAxis,
}

impl FrameRaster {
    pub fn zeros(axis: FreqAxis) -> Self {
        Self {
            data: Array2::zeros((FRAMES, axis.len())),
            axis,
        }
    }

    /// Wraps a matrix, checking its shape against the axis and that every
    /// entry is finite.
    pub fn new(data: Array2<f32>, axis: FreqAxis) -> Result<Self> {
        let expected = [FRAMES, axis.len()];
        if data.shape() != expected {
            return Err(Error::shape("frame raster", &expected, data.shape()));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { index });
        }
        Ok(Self { data, axis })
    }

    pub fn axis(&self) -> FreqAxis {
        self.axis
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.data.view()
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f32> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut Array2<f32> {
        &mut self.data
    }

    pub fn get(&self, frame: usize, bin: usize) -> f32 {
        self.data[[frame, bin]]
    }

    /// Time of a frame center in seconds.
    pub fn frame_time(frame: usize) -> f64 {
        crate::geometry::frame_center(frame) as f64 / SAMPLE_RATE as f64
    }

    /// Seconds between frames.
    pub fn frame_period() -> f64 {
        HOP as f64 / SAMPLE_RATE as f64
    }
}
