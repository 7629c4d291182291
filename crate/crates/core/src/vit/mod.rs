//! Vision-transformer encoder and its configuration registry.

mod config;
mod encoder;
mod params;
mod patch;
mod posembed;

pub use config::{
    count_decoder_params, count_encoder_params, count_params, estimate_flops, registry, FlopEstimate, ViTConfig,
    FLOP_CONVENTION, MODEL_NAMES, REFERENCE_SPECS,
};
pub use encoder::{
    attention, block_forward, encode, init_block, init_encoder, layer_norm, linear, TokenSelection, LN_EPS,
};
pub use params::{trunc_normal, ParamStore, INIT_STD};
pub use patch::{patchify, patchify_batch, unpatchify, unpatchify_batch, TokenGrid};
pub use posembed::interpolate_pos_embed;
