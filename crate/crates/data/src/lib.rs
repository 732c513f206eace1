//! Data engine: a transparent-layer database, alpha screening, dominant-layer
//! selection, similarity retrieval, layer and background replacement, and the
//! synthetic color-semantics datasets the trainer consumes.

pub mod asset;
pub mod composite;
pub mod dataset;
pub mod error;
pub mod filter;
pub mod palette;
pub mod pattern;
pub mod replace;
pub mod retrieve;
pub mod synth;

pub use asset::{DownsampleEmbedder, EmbeddingProvider, LayerAsset, LayerDatabase, Style};
pub use dataset::{augment, load_dataset, save_dataset, to_train_examples};
pub use error::{Error, Result};
pub use filter::{
    select_dominant, transparency_filter, DominantClassifier, DominantLabel, FilterDecision, FilterThresholds,
    HeuristicDominant, RejectReason,
};
pub use replace::{replace_background, replace_layers, LayeredDesign, PlacedLayer, ReplacementPlan};
pub use retrieve::{retrieve, Hit};
pub use synth::{synth_dataset, SynthItem, SynthSpec};
