//! Constant-Q magnitude spectrogram on the semitone grid.
//!
//! Bin `k` is centred on `fmin * 2^(k/12)`; with `fmin = 27.5 Hz` the 88
//! bins coincide with piano keys A0..C8 and with the pitch-roll columns.
//! Each bin is a Hann-windowed complex exponential of length
//! `ceil(Q * sr / f_k)` with `Q = filter_scale / (2^(1/12) - 1)`, evaluated
//! directly at every frame centre `t * 512 + 256`. Samples outside the
//! segment count as zero. Magnitudes are divided by the window sum, so a
//! unit-amplitude sinusoid on a bin centre reads 0.5.

mod cache;
mod stats;

use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{frame_center, FRAMES, HOP, PITCH_BINS, SAMPLE_RATE, SEGMENT_SAMPLES};
use crate::raster::{FrameRaster, FreqAxis};

pub use cache::FeatureCache;
pub use stats::{FeatureStats, NORMALIZE_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MagnitudeScale {
    Linear,
    /// `ln(1 + |X|)`
    Log1p,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CqtConfig {
    pub sample_rate: u32,
    pub hop: usize,
    pub n_bins: usize,
    pub bins_per_octave: usize,
    pub fmin: f64,
    /// Multiplies every filter length; 1.0 gives one-semitone bandwidth.
    pub filter_scale: f64,
    pub magnitude_scale: MagnitudeScale,
}

impl Default for CqtConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            hop: HOP,
            n_bins: PITCH_BINS,
            bins_per_octave: 12,
            fmin: 27.5,
            filter_scale: 1.0,
            magnitude_scale: MagnitudeScale::Log1p,
        }
    }
}

impl CqtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sample_rate != SAMPLE_RATE || self.hop != HOP {
            return bad(format!(
                "CQT must run at {SAMPLE_RATE} Hz with hop {HOP} to match the frame grid"
            ));
        }
        if self.n_bins != PITCH_BINS || self.bins_per_octave != 12 {
            return bad(format!(
                "CQT must produce {PITCH_BINS} semitone bins (12 per octave) to align with pitch rolls"
            ));
        }
        if SEGMENT_SAMPLES / self.hop < FRAMES {
            return bad("hop too large for 258 frames per segment".into());
        }
        if !(self.fmin > 0.0) || !(self.filter_scale > 0.0) {
            return bad("fmin and filter_scale must be positive".into());
        }
        if self.bin_frequency(self.n_bins - 1) >= self.sample_rate as f64 / 2.0 {
            return bad("highest CQT bin exceeds the Nyquist frequency".into());
        }
        Ok(())
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        self.fmin * 2f64.powf(bin as f64 / self.bins_per_octave as f64)
    }

    pub fn q_factor(&self) -> f64 {
        self.filter_scale / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn filter_length(&self, bin: usize) -> usize {
        (self.q_factor() * self.sample_rate as f64 / self.bin_frequency(bin)).ceil() as usize
    }

    /// Hash keying feature caches.
    pub fn hash(&self) -> String {
        crate::provenance::hash_json(self)
    }
}

struct BinKernel {
    re: Vec<f32>,
    im: Vec<f32>,
}

/// Precomputed filter bank for one configuration.
pub struct Cqt {
    config: CqtConfig,
    kernels: Vec<BinKernel>,
}

impl Cqt {
    pub fn new(config: CqtConfig) -> Result<Self> {
        config.validate()?;
        let kernels = (0..config.n_bins)
            .map(|k| {
                let len = config.filter_length(k);
                let freq = config.bin_frequency(k);
                let window: Vec<f64> = (0..len)
                    .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                    .collect();
                let norm: f64 = window.iter().sum();
                let (re, im) = window
                    .iter()
                    .enumerate()
                    .map(|(n, w)| {
                        let phase = -2.0 * PI * freq * n as f64 / config.sample_rate as f64;
                        ((w * phase.cos() / norm) as f32, (w * phase.sin() / norm) as f32)
                    })
                    .unzip();
                BinKernel { re, im }
            })
            .collect();
        Ok(Self { config, kernels })
    }

    pub fn config(&self) -> &CqtConfig {
        &self.config
    }

    /// Longest filter, in samples. Frames closer than half of this to a
    /// discontinuity (segment edge, padding start) see it through the
    /// low-frequency bins.
    pub fn max_filter_length(&self) -> usize {
        self.kernels.iter().map(|k| k.re.len()).max().unwrap_or(0)
    }

    /// Magnitude spectrogram of one segment, 258 x 88.
    pub fn compute(&self, audio: &[f32]) -> Result<FrameRaster> {
        if audio.len() != SEGMENT_SAMPLES {
            return Err(Error::shape("segment audio", &[SEGMENT_SAMPLES], &[audio.len()]));
        }
        if let Some(index) = audio.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { index });
        }
        let rows: Vec<Vec<f32>> = (0..FRAMES)
            .into_par_iter()
            .map(|t| {
                let center = frame_center(t) as isize;
                self.kernels
                    .iter()
                    .map(|kernel| {
                        let len = kernel.re.len() as isize;
                        let start = center - len / 2;
                        let lo = (-start).max(0) as usize;
                        let hi = (audio.len() as isize - start).min(len).max(0) as usize;
                        if lo >= hi {
                            return 0.0;
                        }
                        let x = &audio[(start + lo as isize) as usize..(start + hi as isize) as usize];
                        let re = dot(x, &kernel.re[lo..hi]);
                        let im = dot(x, &kernel.im[lo..hi]);
                        let mag = (re * re + im * im).sqrt() as f32;
                        match self.config.magnitude_scale {
                            MagnitudeScale::Linear => mag,
                            MagnitudeScale::Log1p => mag.ln_1p(),
                        }
                    })
                    .collect()
            })
            .collect();
        let flat: Vec<f32> = rows.into_iter().flatten().collect();
        FrameRaster::new(
            Array2::from_shape_vec((FRAMES, self.config.n_bins), flat).expect("fixed shape"),
            FreqAxis::Semitones,
        )
    }
}

/// Builds a filter bank and transforms one segment. Prefer [`Cqt::new`] when
/// transforming many segments.
pub fn compute_cqt(audio: &[f32], config: &CqtConfig) -> Result<FrameRaster> {
    Cqt::new(*config)?.compute(audio)
}

fn dot(x: &[f32], k: &[f32]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0f32; LANES];
    let xc = x.chunks_exact(LANES);
    let kc = k.chunks_exact(LANES);
    let tail: f32 = xc
        .remainder()
        .iter()
        .zip(kc.remainder())
        .map(|(a, b)| a * b)
        .sum();
    for (a, b) in xc.zip(kc) {
        for i in 0..LANES {
            acc[i] += a[i] * b[i];
        }
    }
    acc.iter().map(|&v| v as f64).sum::<f64>() + tail as f64
}
