use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::FrameRaster;

/// Floor on the per-bin standard deviation.
pub const NORMALIZE_EPS: f32 = 1e-8;

/// Per-bin mean and standard deviation, estimated on training segments only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureStats {
    /// Population statistics over every frame of every raster.
    pub fn from_rasters<'a>(rasters: impl IntoIterator<Item = &'a FrameRaster>) -> Result<Self> {
        let mut sum: Option<Array1<f64>> = None;
        let mut sum_sq: Option<Array1<f64>> = None;
        let mut count = 0usize;
        for raster in rasters {
            let data = raster.data().mapv(|v| v as f64);
            let s = data.sum_axis(Axis(0));
            let q = data.mapv(|v| v * v).sum_axis(Axis(0));
            match (&mut sum, &mut sum_sq) {
                (Some(a), Some(b)) => {
                    if a.len() != s.len() {
                        return Err(Error::shape("feature raster bins", &[a.len()], &[s.len()]));
                    }
                    *a += &s;
                    *b += &q;
                }
                _ => {
                    sum = Some(s);
                    sum_sq = Some(q);
                }
            }
            count += data.nrows();
        }
        let (Some(sum), Some(sum_sq)) = (sum, sum_sq) else {
            return Err(Error::Config("no training features to estimate statistics from".into()));
        };
        let n = count as f64;
        let mean = sum.mapv(|s| s / n);
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m).max(0.0)).sqrt() as f32)
            .collect();
        Ok(Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
        })
    }

    fn check(&self, bins: usize) -> Result<()> {
        if self.mean.len() != bins || self.std.len() != bins {
            return Err(Error::shape(
                "normalization statistics",
                &[bins],
                &[self.mean.len().min(self.std.len())],
            ));
        }
        Ok(())
    }

    /// `(x - mean) / max(std, eps)` per bin.
    pub fn normalize(&self, raster: &FrameRaster) -> Result<FrameRaster> {
        self.apply(raster, |x, m, s| (x - m) / s)
    }

    pub fn denormalize(&self, raster: &FrameRaster) -> Result<FrameRaster> {
        self.apply(raster, |x, m, s| x * s + m)
    }

    fn apply(&self, raster: &FrameRaster, f: impl Fn(f32, f32, f32) -> f32) -> Result<FrameRaster> {
        let bins = raster.data().ncols();
        self.check(bins)?;
        let mut out: Array2<f32> = raster.data().clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(*v, self.mean[j], self.std[j].max(NORMALIZE_EPS));
            }
        }
        FrameRaster::new(out, raster.axis())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::FreqAxis;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn raster(f: impl Fn(usize, usize) -> f32) -> FrameRaster {
        FrameRaster::new(Array2::from_shape_fn((258, 88), |(t, b)| f(t, b)), FreqAxis::Semitones)
            .unwrap()
    }

    #[test]
    fn mean_raster_normalizes_to_zero() {
        let r = raster(|t, b| (t % 5) as f32 + b as f32);
        let stats = FeatureStats::from_rasters([&r]).unwrap();
        let mean = raster(|_, b| stats.mean[b]);
        assert!(stats.normalize(&mean).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_bin_has_no_blowup() {
        let r = raster(|t, b| if b == 3 { 2.0 } else { t as f32 });
        let stats = FeatureStats::from_rasters([&r]).unwrap();
        assert_eq!(stats.std[3], 0.0);
        let n = stats.normalize(&r).unwrap();
        assert!((0..258).all(|t| n.get(t, 3) == 0.0));
        assert!(n.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shape_mismatch() {
        let stats = FeatureStats { mean: vec![0.0; 7], std: vec![1.0; 7] };
        assert!(matches!(stats.normalize(&raster(|_, _| 0.0)), Err(Error::Shape { .. })));
    }

    proptest! {
        #[test]
        fn denormalize_inverts_normalize(seed in any::<u64>(), scale in 0.01f32..100.0) {
            let r = raster(|t, b| {
                let h = (t as u64 * 31 + b as u64 * 17).wrapping_mul(seed | 1) % 1000;
                h as f32 / 1000.0 * scale
            });
            let stats = FeatureStats::from_rasters([&r]).unwrap();
            let back = stats.denormalize(&stats.normalize(&r).unwrap()).unwrap();
            for (a, b) in r.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1e-5 * scale.max(1.0), "{} {}", a, b);
            }
        }
    }
}
