//! Piano-roll style images comparing label and prediction rolls.
//!
//! The image has time on the horizontal axis, one pixel column per frame.
//! The ground-truth block (one band per instrument, catalog order top to
//! bottom) sits above the prediction block; active cells are black.

use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::geometry::INSTRUMENTS;
use crate::train::ThresholdVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollLayout {
    pub band_height: u32,
    /// Blank rows between the two blocks.
    pub gap: u32,
}

impl Default for RollLayout {
    fn default() -> Self {
        Self { band_height: 8, gap: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Truth,
    Prediction,
}

const ACTIVE: Luma<u8> = Luma([0]);
const IDLE: Luma<u8> = Luma([255]);
const DIVIDER: Luma<u8> = Luma([192]);

impl RollLayout {
    fn block_height(&self) -> u32 {
        self.band_height * INSTRUMENTS as u32
    }

    pub fn height(&self) -> u32 {
        2 * self.block_height() + self.gap
    }

    /// Top pixel row of an instrument band.
    pub fn band_top(&self, block: Block, instrument: usize) -> u32 {
        let base = match block {
            Block::Truth => 0,
            Block::Prediction => self.block_height() + self.gap,
        };
        base + instrument as u32 * self.band_height
    }

    /// Reads back whether a cell is drawn active.
    pub fn is_active(&self, image: &GrayImage, block: Block, instrument: usize, frame: usize) -> bool {
        let y = self.band_top(block, instrument) + self.band_height / 2;
        image.get_pixel(frame as u32, y)[0] < 128
    }
}

fn fill_cell(img: &mut GrayImage, layout: RollLayout, block: Block, instrument: usize, frame: usize) {
    let top = layout.band_top(block, instrument);
    // one blank pixel row between bands keeps adjacent instruments apart
    for y in top..top + layout.band_height.saturating_sub(1).max(1) {
        img.put_pixel(frame as u32, y, ACTIVE);
    }
}

/// Draws labels (active when ≥ 0.5) above predictions binarized with
/// `thresholds`. Both rolls are `(frames, instruments)`.
pub fn render_rolls(
    labels: ArrayView2<f32>,
    predictions: ArrayView2<f32>,
    thresholds: &ThresholdVector,
    layout: RollLayout,
) -> Result<GrayImage> {
    if labels.shape() != predictions.shape() || labels.ncols() != INSTRUMENTS {
        return Err(Error::shape("prediction roll", labels.shape(), predictions.shape()));
    }
    let frames = labels.nrows() as u32;
    let mut img = GrayImage::from_pixel(frames.max(1), layout.height(), IDLE);
    for x in 0..frames {
        img.put_pixel(x, layout.block_height() + layout.gap / 2, DIVIDER);
    }
    for n in 0..INSTRUMENTS {
        for t in 0..frames as usize {
            if labels[[t, n]] >= 0.5 {
                fill_cell(&mut img, layout, Block::Truth, n, t);
            }
            if thresholds.is_active(n, predictions[[t, n]]) {
                fill_cell(&mut img, layout, Block::Prediction, n, t);
            }
        }
    }
    Ok(img)
}

pub fn save_png(image: &GrayImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn cells_round_trip_through_png() {
        let mut labels = Array2::<f32>::zeros((40, INSTRUMENTS));
        let mut preds = Array2::<f32>::zeros((40, INSTRUMENTS));
        for t in 0..40 {
            labels[[t, t % INSTRUMENTS]] = 1.0;
            preds[[t, (t * 3) % INSTRUMENTS]] = 0.9;
            preds[[t, 6]] = 0.2;
        }
        let th = ThresholdVector::uniform(0.5);
        let layout = RollLayout::default();
        let img = render_rolls(labels.view(), preds.view(), &th, layout).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.png");
        save_png(&img, &path).unwrap();
        let back = image::open(&path).unwrap().to_luma8();
        assert_eq!(back.dimensions(), (40, layout.height()));
        for t in 0..40 {
            for n in 0..INSTRUMENTS {
                assert_eq!(layout.is_active(&back, Block::Truth, n, t), labels[[t, n]] == 1.0);
                assert_eq!(layout.is_active(&back, Block::Prediction, n, t), preds[[t, n]] >= 0.5);
            }
        }
    }
}
