//! The heart-rate network: two dilated-TCN extractors (PPG, and one shared
//! across the three accelerometer axes), multi-head attention fusing the
//! embedding sequences, layer normalization, and a two-layer dense head.

mod config;
mod forward;
mod io;
mod params;

pub use config::{dense_param_count, param_count, AttentionMode, PulseConfig};
pub use forward::{
    attention_on_tape, extract_features, extract_on_tape, forward, forward_backward, forward_on_tape, forward_scalar,
    mhca, AttentionMap, Segment, Stream,
};
pub use io::{decode_params, encode_params, load_params, read_header, save_params, TensorEntry, WeightHeader, WEIGHT_MAGIC};
pub use params::{init_params, ConvIndex, ExtractorIndex, Init, ParamIndex, ParamLayout, ParamSpec, PulseParams};

/// Parameter count reported for the cross-attention model.
pub const REFERENCE_PARAM_COUNT: usize = 131_820;
