//! The assembled surrogate: encoder, attention stack, latent marching, decoder.

mod checkpoint;
mod config;
mod factformer;
mod rollout;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::FactFormerConfig;
pub use factformer::{FactFormer, ModelCache};
pub use rollout::{rollout, CallCounter, FramePredictor, Persistence};

pub(crate) use config::parse_value;
