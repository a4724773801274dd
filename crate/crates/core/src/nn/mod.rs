//! Network variants for frame-level instrument prediction.

mod input;
pub mod layers;
mod model;
mod spec;

pub use input::{assemble_input, prepare_input, InputTensor};
pub use model::{sigmoid, stack_labels, unstack_frames, Model, PredictionRoll};
pub use spec::{
    count_conv_layers, InputArrangement, LayerDesc, LayerKind, ModelSpec, Variant, DEFAULT_BASE_CHANNELS,
    DEFAULT_WIDTH, VARIANT_NAMES,
};
