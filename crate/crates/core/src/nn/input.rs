use ndarray::{concatenate, stack, Array3, Axis};

use super::spec::Variant;
use crate::error::{Error, Result};
use crate::hsf::{build_hsf, Hsf, PitchSalience};
use crate::raster::{FrameRaster, FreqAxis};

/// One model input, `channels x frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub data: Array3<f32>,
}

impl InputTensor {
    pub fn shape(&self) -> [usize; 3] {
        let (c, t, f) = self.data.dim();
        [c, t, f]
    }
}

fn semitones(raster: &FrameRaster, what: &str) -> Result<()> {
    if raster.axis() != FreqAxis::Semitones {
        return Err(Error::Config(format!("{what} must be on the semitone axis")));
    }
    Ok(())
}

/// Arranges CQT and pitch components the way `variant` expects:
///
/// * `baseline2d`, `resblock1d`: `[X]`, 1 x 258 x 88
/// * `cqt_hsf(n)`: `[X, H_n]`, 2 x 258 x 88
/// * `cqt_pitch_c`: `[X, P0]`, 2 x 258 x 88
/// * `cqt_pitch_f`: `[X | P0]` along frequency, 1 x 258 x 176
pub fn assemble_input(
    variant: Variant,
    cqt: &FrameRaster,
    salience: Option<&PitchSalience>,
    hsf: Option<&Hsf>,
) -> Result<InputTensor> {
    semitones(cqt, "CQT")?;
    let missing = |component| Error::MissingComponent {
        variant: variant.to_string(),
        component,
    };
    let x = cqt.view();
    let data = match variant {
        Variant::Baseline2d | Variant::Resblock1d => x.insert_axis(Axis(0)).to_owned(),
        Variant::CqtHsf(n) => {
            let h = hsf.ok_or_else(|| missing("a harmonic series feature"))?;
            if h.n != n {
                return Err(Error::Config(format!(
                    "variant {variant} needs HSF order {n}, got order {}",
                    h.n
                )));
            }
            stack(Axis(0), &[x, h.raster.view()]).expect("equal shapes")
        }
        Variant::CqtPitchC => {
            let p = salience.ok_or_else(|| missing("pitch salience"))?;
            stack(Axis(0), &[x, p.raster().view()]).expect("equal shapes")
        }
        Variant::CqtPitchF => {
            let p = salience.ok_or_else(|| missing("pitch salience"))?;
            concatenate(Axis(1), &[x, p.raster().view()])
                .expect("equal frames")
                .insert_axis(Axis(0))
        }
    };
    Ok(InputTensor { data })
}

/// Like [`assemble_input`], building the HSF from the salience when the
/// variant needs one.
pub fn prepare_input(
    variant: Variant,
    cqt: &FrameRaster,
    salience: Option<&PitchSalience>,
) -> Result<InputTensor> {
    let hsf = match (variant, salience) {
        (Variant::CqtHsf(n), Some(p)) => Some(build_hsf(p, n)?),
        _ => None,
    };
    assemble_input(variant, cqt, salience, hsf.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn cqt() -> FrameRaster {
        FrameRaster::new(
            Array2::from_shape_fn((258, 88), |(t, f)| (t * 88 + f) as f32),
            FreqAxis::Semitones,
        )
        .unwrap()
    }

    #[test]
    fn shapes_per_variant() {
        let p = PitchSalience::zeros();
        let x = cqt();
        let shape = |v| prepare_input(v, &x, Some(&p)).unwrap().shape();
        assert_eq!(shape(Variant::Resblock1d), [1, 258, 88]);
        assert_eq!(shape(Variant::Baseline2d), [1, 258, 88]);
        assert_eq!(shape(Variant::CqtPitchF), [1, 258, 176]);
        assert_eq!(shape(Variant::CqtPitchC), [2, 258, 88]);
        assert_eq!(shape(Variant::CqtHsf(3)), [2, 258, 88]);
    }

    #[test]
    fn zero_salience_gives_zero_hsf_channel() {
        let x = cqt();
        let input = prepare_input(Variant::CqtHsf(3), &x, Some(&PitchSalience::zeros())).unwrap();
        assert_eq!(input.data.index_axis(Axis(0), 0), x.view());
        assert!(input.data.index_axis(Axis(0), 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frequency_concatenation_layout() {
        let x = cqt();
        let mut p = Array2::zeros((258, 88));
        p[[4, 2]] = 1.0;
        let p = PitchSalience::ground_truth(FrameRaster::new(p, FreqAxis::Semitones).unwrap()).unwrap();
        let input = prepare_input(Variant::CqtPitchF, &x, Some(&p)).unwrap();
        assert_eq!(input.data[[0, 4, 5]], x.get(4, 5));
        assert_eq!(input.data[[0, 4, 88 + 2]], 1.0);
    }

    #[test]
    fn missing_components_are_named() {
        let x = cqt();
        for v in [Variant::CqtHsf(2), Variant::CqtPitchF, Variant::CqtPitchC] {
            let err = assemble_input(v, &x, None, None).unwrap_err().to_string();
            assert!(err.contains(&v.to_string()), "{err}");
        }
    }
}
