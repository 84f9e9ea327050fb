//! Encoder views and text encoders that feed the fusor.

pub mod encoders;
pub mod image;
pub mod text;

pub use encoders::{
    default_mock_encoders, encode_all, mock_encoders, BlurView, DownsampleView, EdgeView, EncoderAdapter,
    StatView, MOCK_ENCODER_NAMES,
};
pub use image::SyntheticImage;
pub use text::{mock_text_encoder, HashedTextEncoder, TextEncoderAdapter, TextEncoderSpec};
