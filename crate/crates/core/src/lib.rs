//! Frame-level instrument recognition for polyphonic music.
//!
//! The pipeline cuts annotated recordings into 3-second segments on a
//! 512-sample frame grid ([`ingest`]), computes an 88-bin constant-Q
//! spectrogram per segment ([`cqt`]), derives pitch-informed harmonic series
//! features from a pitch salience matrix ([`hsf`]), predicts per-frame
//! presence of seven instruments with one of five convolutional networks
//! ([`nn`]) and trains, thresholds and scores those networks ([`train`]).
//!
//! ```
//! use instrec::hsf::{build_hsf, harmonic_shift_bins, PitchSalience};
//! use instrec::ingest::{rasterize_pitch, InstrumentCatalog, NoteEvent};
//!
//! let catalog = InstrumentCatalog::default();
//! // A4 on the violin for the first second of a segment.
//! let note = NoteEvent::new(0, 44_100, 69, 41, &catalog).unwrap();
//! let p0 = PitchSalience::ground_truth(rasterize_pitch(&[note])).unwrap();
//! let h3 = build_hsf(&p0, 3).unwrap();
//!
//! let a4 = 69 - 21;
//! for k in 1..=4 {
//!     assert_eq!(h3.raster.get(10, a4 + harmonic_shift_bins(k).unwrap()), 1.0);
//! }
//! ```

pub mod container;
pub mod cqt;
pub mod error;
pub mod geometry;
pub mod hsf;
pub mod ingest;
pub mod nn;
pub mod plot;
pub mod provenance;
pub mod raster;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use raster::{FrameRaster, FreqAxis};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cqt.md")]
    mod cqt {}
    #[doc = include_str!("../../../book/src/hsf.md")]
    mod hsf {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/full-run.md")]
    mod full_run {}
}
