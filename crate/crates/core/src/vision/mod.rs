//! Randomly initialized 2-D ResNet frame encoder.

mod encoder;

pub use encoder::{
    encode_frames, encoder_forward, init_encoder, residual_block, EncoderConfig, EncoderOutput, FrameFeatures,
    NormMode, NormStats, BN_MOMENTUM,
};
