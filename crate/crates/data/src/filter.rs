//! Alpha-channel screening of candidate layers and dominant-layer selection.

use image::RgbaImage;
use serde::{Deserialize, Serialize};

use densegen_core::{LayerKind, Layout};

use crate::error::{Error, Result};

pub const DEFAULT_THETA_BG: f64 = 0.15;
pub const DEFAULT_THETA_BORDER: f64 = 0.60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    /// Minimum fraction of fully transparent pixels overall.
    pub theta_bg: f64,
    /// Minimum fraction of fully transparent pixels on the outer ring.
    pub theta_border: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            theta_bg: DEFAULT_THETA_BG,
            theta_border: DEFAULT_THETA_BORDER,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Too few transparent pixels anywhere: a flat picture rather than a cut-out.
    OpaqueCanvas,
    /// Enough transparency inside, but the object runs into the canvas edges.
    ObjectFillsCanvas,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "reason")]
pub enum FilterDecision {
    Accept,
    Reject(RejectReason),
}

/// Fractions of alpha-0 pixels over the whole bitmap and over its one-pixel outer ring.
pub fn transparency_stats(rgba: &RgbaImage) -> Result<(f64, f64)> {
    let (w, h) = rgba.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Validation("zero-sized bitmap".into()));
    }
    let (mut clear, mut ring, mut ring_clear) = (0usize, 0usize, 0usize);
    for (x, y, p) in rgba.enumerate_pixels() {
        let transparent = p[3] == 0;
        clear += usize::from(transparent);
        if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
            ring += 1;
            ring_clear += usize::from(transparent);
        }
    }
    Ok((clear as f64 / (w * h) as f64, ring_clear as f64 / ring as f64))
}

pub fn transparency_filter(rgba: &RgbaImage, th: &FilterThresholds) -> Result<FilterDecision> {
    let (overall, border) = transparency_stats(rgba)?;
    Ok(if overall < th.theta_bg {
        FilterDecision::Reject(RejectReason::OpaqueCanvas)
    } else if border < th.theta_border {
        FilterDecision::Reject(RejectReason::ObjectFillsCanvas)
    } else {
        FilterDecision::Accept
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DominantLabel {
    MainElement,
    Others,
}

/// Labels each layer of a template; `bitmaps[i]` is layer `i`'s content cropped to its bbox.
pub trait DominantClassifier {
    fn classify(&self, layout: &Layout, bitmaps: &[RgbaImage]) -> Result<Vec<DominantLabel>>;
}

/// Area, coverage and intactness rules for non-text foreground layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeuristicDominant {
    pub min_area: f64,
    pub max_area: f64,
    pub min_opaque: f64,
    /// Alpha at or above this counts as opaque.
    pub opaque_alpha: u8,
}

impl Default for HeuristicDominant {
    fn default() -> Self {
        Self {
            min_area: 0.01,
            max_area: 0.5,
            min_opaque: 0.05,
            opaque_alpha: 128,
        }
    }
}

impl HeuristicDominant {
    fn is_main(&self, area: f64, bitmap: &RgbaImage) -> bool {
        let (w, h) = bitmap.dimensions();
        if w == 0 || h == 0 || !(self.min_area..=self.max_area).contains(&area) {
            return false;
        }
        let opaque = |p: &image::Rgba<u8>| p[3] >= self.opaque_alpha;
        let count = bitmap.pixels().filter(|p| opaque(p)).count();
        if (count as f64) < self.min_opaque * f64::from(w * h) {
            return false;
        }
        !bitmap
            .enumerate_pixels()
            .any(|(x, y, p)| (x == 0 || y == 0 || x == w - 1 || y == h - 1) && opaque(p))
    }
}

impl DominantClassifier for HeuristicDominant {
    fn classify(&self, layout: &Layout, bitmaps: &[RgbaImage]) -> Result<Vec<DominantLabel>> {
        if bitmaps.len() != layout.len() {
            return Err(Error::Validation(format!(
                "{} bitmaps for {} layers",
                bitmaps.len(),
                layout.len()
            )));
        }
        Ok(layout
            .layers
            .iter()
            .zip(bitmaps)
            .map(|(layer, bmp)| {
                if layer.kind == LayerKind::NonText && self.is_main(layer.bbox.area(), bmp) {
                    DominantLabel::MainElement
                } else {
                    DominantLabel::Others
                }
            })
            .collect())
    }
}

pub fn select_dominant(
    layout: &Layout,
    bitmaps: &[RgbaImage],
    classifier: &dyn DominantClassifier,
) -> Result<Vec<DominantLabel>> {
    classifier.classify(layout, bitmaps)
}
