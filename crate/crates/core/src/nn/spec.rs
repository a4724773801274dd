use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FRAMES, INSTRUMENTS, PITCH_BINS};
use crate::hsf::MAX_HSF_ORDER;

/// The five model configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// 2D convolutional baseline on the CQT alone.
    Baseline2d,
    /// 1D (time) residual network on the CQT alone.
    Resblock1d,
    /// Residual network on CQT and HSF of the given order as two channels.
    CqtHsf(usize),
    /// Residual network on CQT and `P0` concatenated along frequency.
    CqtPitchF,
    /// Residual network on CQT and `P0` as two channels.
    CqtPitchC,
}

pub const VARIANT_NAMES: [&str; 5] = ["baseline2d", "resblock1d", "cqt_hsf", "cqt_pitch_f", "cqt_pitch_c"];

impl Variant {
    /// Parses a variant name; `cqt_hsf` takes its order from `hsf_order`.
    pub fn parse(name: &str, hsf_order: Option<usize>) -> Result<Self> {
        let v = match name {
            "baseline2d" => Variant::Baseline2d,
            "resblock1d" => Variant::Resblock1d,
            "cqt_pitch_f" => Variant::CqtPitchF,
            "cqt_pitch_c" => Variant::CqtPitchC,
            "cqt_hsf" => {
                let n = hsf_order.unwrap_or(3);
                if !(1..=MAX_HSF_ORDER).contains(&n) {
                    return Err(Error::HsfOrder(n));
                }
                Variant::CqtHsf(n)
            }
            other => {
                return Err(Error::UnknownVariant {
                    given: other.to_owned(),
                    valid: VARIANT_NAMES.join(", "),
                })
            }
        };
        Ok(v)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline2d => VARIANT_NAMES[0],
            Variant::Resblock1d => VARIANT_NAMES[1],
            Variant::CqtHsf(_) => VARIANT_NAMES[2],
            Variant::CqtPitchF => VARIANT_NAMES[3],
            Variant::CqtPitchC => VARIANT_NAMES[4],
        }
    }

    /// Whether the variant consumes pitch salience.
    pub fn needs_pitch(self) -> bool {
        matches!(self, Variant::CqtHsf(_) | Variant::CqtPitchF | Variant::CqtPitchC)
    }

    pub fn input_arrangement(self) -> InputArrangement {
        let (channels, bins) = match self {
            Variant::Baseline2d | Variant::Resblock1d => (1, PITCH_BINS),
            Variant::CqtHsf(_) | Variant::CqtPitchC => (2, PITCH_BINS),
            Variant::CqtPitchF => (1, 2 * PITCH_BINS),
        };
        InputArrangement {
            channels,
            frames: FRAMES,
            bins,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::CqtHsf(n) => write!(f, "cqt_hsf({n})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Shape of one model input: `channels x frames x bins`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputArrangement {
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
}

impl InputArrangement {
    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.frames, self.bins]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Convolution along time; input channels are the flattened
    /// `channels x bins`.
    Conv1d,
    Conv2d,
    BatchNorm,
    Relu,
    /// Max pooling by 2 along frequency.
    PoolFreq,
    /// Mean over the remaining frequency positions.
    MeanFreq,
    /// Start of a residual branch; its input is saved for the skip.
    ResidualBegin,
    /// Adds the saved skip input to the branch output.
    ResidualAdd,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub kind: LayerKind,
    /// Kernel extent `(time, freq)` for convolutions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<(usize, usize)>,
    /// Output channels (convolutions) or normalized channels (batch norm).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bias: bool,
}

impl LayerDesc {
    fn conv(kind: LayerKind, in_ch: usize, out_ch: usize, kernel: (usize, usize), bias: bool) -> Self {
        Self {
            kind,
            kernel: Some(kernel),
            channels: Some(out_ch),
            in_channels: Some(in_ch),
            bias,
        }
    }

    fn bn(channels: usize) -> Self {
        Self {
            kind: LayerKind::BatchNorm,
            kernel: None,
            channels: Some(channels),
            in_channels: None,
            bias: false,
        }
    }

    fn plain(kind: LayerKind) -> Self {
        Self {
            kind,
            kernel: None,
            channels: None,
            in_channels: None,
            bias: false,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv1d | LayerKind::Conv2d)
    }

    /// Trainable parameter count.
    pub fn n_params(&self) -> usize {
        match self.kind {
            LayerKind::Conv1d | LayerKind::Conv2d => {
                let (kt, kf) = self.kernel.unwrap_or((1, 1));
                let out = self.channels.unwrap_or(0);
                out * self.in_channels.unwrap_or(0) * kt * kf + if self.bias { out } else { 0 }
            }
            LayerKind::BatchNorm => 2 * self.channels.unwrap_or(0),
            _ => 0,
        }
    }
}

/// Declarative description of one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub input: InputArrangement,
    /// Channel width of the residual network.
    pub width: usize,
    /// First-block channels of the 2D baseline (doubling per block).
    pub base_channels: usize,
    pub layer_plan: Vec<LayerDesc>,
    pub n_params: usize,
}

pub const DEFAULT_WIDTH: usize = 128;
pub const DEFAULT_BASE_CHANNELS: usize = 32;
const RES_BLOCKS: usize = 3;
const CONVS_PER_BLOCK: usize = 3;
const BASELINE_BLOCKS: usize = 4;

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        Self::with_widths(variant, DEFAULT_WIDTH, DEFAULT_BASE_CHANNELS)
    }

    pub fn with_widths(variant: Variant, width: usize, base_channels: usize) -> Self {
        let input = variant.input_arrangement();
        let layer_plan = match variant {
            Variant::Baseline2d => baseline_plan(input, base_channels),
            _ => residual_plan(input, width),
        };
        let n_params = layer_plan.iter().map(LayerDesc::n_params).sum();
        Self {
            variant,
            input,
            width,
            base_channels,
            layer_plan,
            n_params,
        }
    }

    /// Checks that a deserialized spec is the one its variant and widths
    /// generate.
    pub fn validate(&self) -> Result<()> {
        if *self != Self::with_widths(self.variant, self.width, self.base_channels) {
            return Err(Error::Config(format!(
                "model spec for {} does not match its generated layer plan",
                self.variant
            )));
        }
        Ok(())
    }
}

fn residual_plan(input: InputArrangement, width: usize) -> Vec<LayerDesc> {
    use LayerKind::*;
    let flat = input.channels * input.bins;
    let mut plan = vec![
        LayerDesc::conv(Conv1d, flat, width, (3, 1), false),
        LayerDesc::bn(width),
        LayerDesc::plain(Relu),
    ];
    for _ in 0..RES_BLOCKS {
        plan.push(LayerDesc::plain(ResidualBegin));
        for i in 0..CONVS_PER_BLOCK {
            plan.push(LayerDesc::conv(Conv1d, width, width, (3, 1), false));
            plan.push(LayerDesc::bn(width));
            if i + 1 < CONVS_PER_BLOCK {
                plan.push(LayerDesc::plain(Relu));
            }
        }
        plan.push(LayerDesc::plain(ResidualAdd));
    }
    plan.push(LayerDesc::conv(Conv1d, width, INSTRUMENTS, (1, 1), false));
    plan.push(LayerDesc::bn(INSTRUMENTS));
    plan.push(LayerDesc::plain(Sigmoid));
    plan
}

fn baseline_plan(input: InputArrangement, base: usize) -> Vec<LayerDesc> {
    use LayerKind::*;
    let mut plan = Vec::new();
    let mut ch = input.channels;
    for b in 0..BASELINE_BLOCKS {
        let out = base << b;
        plan.push(LayerDesc::conv(Conv2d, ch, out, (3, 3), false));
        plan.push(LayerDesc::bn(out));
        plan.push(LayerDesc::plain(Relu));
        plan.push(LayerDesc::plain(PoolFreq));
        ch = out;
    }
    plan.push(LayerDesc::plain(MeanFreq));
    plan.push(LayerDesc::conv(Conv1d, ch, INSTRUMENTS, (1, 1), true));
    plan.push(LayerDesc::plain(Sigmoid));
    plan
}

/// Number of convolutional layers in a plan.
pub fn count_conv_layers(spec: &ModelSpec) -> usize {
    spec.layer_plan.iter().filter(|l| l.is_conv()).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_counts() {
        assert_eq!(count_conv_layers(&ModelSpec::new(Variant::Resblock1d)), 11);
        for n in 1..=5 {
            assert_eq!(count_conv_layers(&ModelSpec::new(Variant::CqtHsf(n))), 11);
        }
        assert_eq!(count_conv_layers(&ModelSpec::new(Variant::CqtPitchF)), 11);
        assert_eq!(count_conv_layers(&ModelSpec::new(Variant::Baseline2d)), 5);
    }

    #[test]
    fn every_residual_conv_is_batch_normalized() {
        for v in [Variant::Resblock1d, Variant::CqtHsf(2), Variant::CqtPitchC] {
            let plan = ModelSpec::new(v).layer_plan;
            for (i, l) in plan.iter().enumerate() {
                if l.is_conv() {
                    assert_eq!(plan[i + 1].kind, LayerKind::BatchNorm);
                    assert_eq!(plan[i + 1].channels, l.channels);
                }
            }
        }
    }

    #[test]
    fn arrangements() {
        assert_eq!(Variant::Resblock1d.input_arrangement().shape(), [1, 258, 88]);
        assert_eq!(Variant::CqtPitchF.input_arrangement().shape(), [1, 258, 176]);
        assert_eq!(Variant::CqtHsf(3).input_arrangement().shape(), [2, 258, 88]);
        assert_eq!(Variant::CqtPitchC.input_arrangement().shape(), [2, 258, 88]);
    }

    #[test]
    fn parse_names() {
        assert_eq!(Variant::parse("cqt_hsf", Some(5)).unwrap(), Variant::CqtHsf(5));
        assert_eq!(Variant::parse("resblock1d", None).unwrap(), Variant::Resblock1d);
        let err = Variant::parse("lstm", None).unwrap_err().to_string();
        for name in VARIANT_NAMES {
            assert!(err.contains(name), "{err}");
        }
        assert!(Variant::parse("cqt_hsf", Some(6)).is_err());
    }

    #[test]
    fn spec_serde_round_trip() {
        let spec = ModelSpec::with_widths(Variant::CqtHsf(3), 16, 8);
        let text = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        back.validate().unwrap();
    }
}
