use ndarray::Array2;

use super::loss::LossConfig;
use crate::error::Result;
use crate::geometry::INSTRUMENTS;

/// Positive-class weights from training label rolls:
/// `w_n = clamp(N_neg / max(N_pos, 1), 1, cap)`.
///
/// Instruments with no positive frame get the cap; their indices are
/// returned alongside and logged.
pub fn compute_class_weights<'a>(
    labels: impl IntoIterator<Item = &'a Array2<f32>>,
    weight_cap: f64,
) -> Result<(LossConfig, Vec<usize>)> {
    let mut pos = [0u64; INSTRUMENTS];
    let mut total = 0u64;
    for roll in labels {
        for row in roll.rows() {
            for (n, &v) in row.iter().enumerate() {
                if v >= 0.5 {
                    pos[n] += 1;
                }
            }
            total += 1;
        }
    }
    let mut absent = Vec::new();
    let class_weights = (0..INSTRUMENTS)
        .map(|n| {
            if pos[n] == 0 {
                log::warn!("instrument {n} has no positive training frames; using weight cap {weight_cap}");
                absent.push(n);
                return weight_cap;
            }
            let neg = (total - pos[n]) as f64;
            (neg / pos[n] as f64).clamp(1.0, weight_cap)
        })
        .collect();
    let cfg = LossConfig {
        class_weights,
        weight_cap,
    };
    cfg.validate()?;
    Ok((cfg, absent))
}
