//! Numeric core for layout-conditioned diffusion over ultra-dense layouts.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.
//!
//! * [`tensor`], [`ops`], [`autodiff`], [`rng`]: dense tensors, attention
//!   primitives, a small reverse-mode tape and counter-based randomness.
//! * [`layout`]: layered layouts, rect discretization, z-order combination,
//!   masks and guidance maps.
//! * [`encoders`]: hashed prompt encoder, byte-level glyph encoder and mapper.
//! * [`region_attention`]: layout-guided cross attention and its oracle.
//! * [`diffusion`]: schedule, denoiser, masked loss, training and guided sampling.

pub mod autodiff;
pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod layout;
pub mod ops;
pub mod region_attention;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use layout::{CombineMode, GuidanceSpec, Layer, LayerKind, Layout, NormalizedBBox, PixelRect};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Denoiser64 = diffusion::Denoiser<f64>;
pub type Denoiser32 = diffusion::Denoiser<f32>;
pub type RegionTokens64 = region_attention::RegionTokens<f64>;
pub type RegionTokens32 = region_attention::RegionTokens<f32>;
