//! Toy latent diffusion: schedule, denoiser, training loop and guided sampler.

pub mod checkpoint;
pub mod denoiser;
pub mod codec;
pub mod loss;
pub mod sample;
pub mod schedule;
pub mod train;

pub use checkpoint::{read_loss_csv, write_loss_csv, Checkpoint};
pub use denoiser::{timestep_features, Denoiser, DenoiserConfig};
pub use codec::{decode, encode_image, RgbaImage};
pub use loss::{hybrid_loss, hybrid_loss_node, region_losses};
pub use sample::{global_cfg_sample, guide_dense, guide_global, sample, sample_traced, SampleConfig, StepTrace};
pub use schedule::{forward_noise, NoiseSchedule};
pub use train::{train, AdamState, LossRecord, TrainConfig, TrainExample, TrainReport, Trainer};

use crate::encoders::{chunked_prompt_encode, glyph_encode, null_encode, EncoderConfig};
use crate::layout::Layout;
use crate::region_attention::{RegionTokens, TokenSource};
use crate::scalar::Scalar;

/// Encodes every layer of `layout`: visual-text layers through the glyph
/// encoder, everything else through the chunked prompt encoder.
pub fn encode_regions<S: Scalar>(layout: &Layout, cfg: &EncoderConfig) -> Vec<RegionTokens<S>> {
    layout
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            if layer.is_text() {
                let text = if layer.text.is_empty() { &layer.prompt } else { &layer.text };
                RegionTokens {
                    layer_index: i,
                    tokens: glyph_encode(text, cfg).embeddings,
                    source: TokenSource::Glyph,
                }
            } else {
                RegionTokens {
                    layer_index: i,
                    tokens: chunked_prompt_encode(&layer.prompt, cfg).embeddings,
                    source: TokenSource::ClipLike,
                }
            }
        })
        .collect()
}

/// The null prompt for one layer.
pub fn null_region<S: Scalar>(layer_index: usize, cfg: &EncoderConfig) -> RegionTokens<S> {
    RegionTokens {
        layer_index,
        tokens: null_encode(cfg).embeddings,
        source: TokenSource::ClipLike,
    }
}

/// Null prompts for all `layers`; the unconditional branch of guidance.
pub fn null_regions<S: Scalar>(layers: usize, cfg: &EncoderConfig) -> Vec<RegionTokens<S>> {
    (0..layers).map(|i| null_region(i, cfg)).collect()
}
