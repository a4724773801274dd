use serde::{Deserialize, Serialize};

use super::metrics::{Confusion, FramePair};
use crate::error::{Error, Result};
use crate::geometry::INSTRUMENTS;

/// Candidate thresholds `0.01, 0.02, .., 0.99`.
pub fn threshold_grid() -> [f64; 99] {
    std::array::from_fn(|i| (i + 1) as f64 / 100.0)
}

/// One decision threshold per instrument; a frame is active iff its
/// likelihood is at least the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub values: Vec<f64>,
}

impl ThresholdVector {
    pub fn uniform(theta: f64) -> Self {
        Self {
            values: vec![theta; INSTRUMENTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != INSTRUMENTS {
            return Err(Error::shape("thresholds", &[INSTRUMENTS], &[self.values.len()]));
        }
        let grid = threshold_grid();
        if let Some(v) = self.values.iter().find(|v| !grid.contains(v)) {
            return Err(Error::Config(format!("threshold {v} is not on the 0.01..0.99 grid")));
        }
        Ok(())
    }

    #[inline]
    pub fn is_active(&self, instrument: usize, likelihood: f32) -> bool {
        likelihood as f64 >= self.values[instrument]
    }
}

/// Per instrument, the grid threshold maximizing F1 over all frames of all
/// segments, ties going to the smallest threshold.
///
/// Each frame is bucketed by how many grid values it clears, so the search
/// costs one pass over the frames plus one pass over the grid.
pub fn tune_thresholds(pairs: &[FramePair<'_>]) -> Result<ThresholdVector> {
    for p in pairs {
        p.check()?;
    }
    let grid = threshold_grid();
    let mut values = Vec::with_capacity(INSTRUMENTS);
    for n in 0..INSTRUMENTS {
        // cleared[k]: frames clearing exactly the first k grid values
        let mut pos = [0u64; 100];
        let mut neg = [0u64; 100];
        for pair in pairs {
            for (p, l) in pair.predictions.column(n).iter().zip(pair.labels.column(n)) {
                let k = grid.partition_point(|&th| *p as f64 >= th);
                if *l >= 0.5 {
                    pos[k] += 1;
                } else {
                    neg[k] += 1;
                }
            }
        }
        let total_pos: u64 = pos.iter().sum();
        // frames clearing grid[i] are those with k > i
        let (mut tp, mut fp) = (total_pos, neg.iter().sum::<u64>());
        let mut best = (f64::NEG_INFINITY, grid[0]);
        for (i, &theta) in grid.iter().enumerate() {
            tp -= pos[i];
            fp -= neg[i];
            let f1 = Confusion { tp, fp, fn_: total_pos - tp }.f1();
            if f1 > best.0 {
                best = (f1, theta);
            }
        }
        values.push(best.1);
    }
    Ok(ThresholdVector { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn grid_has_99_candidates() {
        let g = threshold_grid();
        assert_eq!(g.len(), 99);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[98], 0.99);
    }

    #[test]
    fn perfect_predictor_picks_smallest() {
        let labels = Array2::from_shape_fn((30, 7), |(t, n)| ((t * 7 + n) % 4 == 0) as u8 as f32);
        let th = tune_thresholds(&[FramePair { clip_id: "c", predictions: labels.view(), labels: labels.view() }]).unwrap();
        assert_eq!(th.values, vec![0.01; 7]);
    }

    #[test]
    fn separable_scores() {
        // positives score 0.2, negatives 0.1: any threshold in (0.1, 0.2] is perfect
        let labels = Array2::from_shape_fn((40, 7), |(t, _)| (t % 2) as f32);
        let preds = labels.mapv(|l| if l == 1.0 { 0.2 } else { 0.1 });
        let th = tune_thresholds(&[FramePair { clip_id: "c", predictions: preds.view(), labels: labels.view() }]).unwrap();
        assert_eq!(th.values, vec![0.11; 7]);
    }

    #[test]
    fn validation() {
        assert!(ThresholdVector::uniform(0.5).validate().is_ok());
        assert!(ThresholdVector::uniform(0.505).validate().is_err());
        assert!(ThresholdVector { values: vec![0.5; 3] }.validate().is_err());
    }
}
