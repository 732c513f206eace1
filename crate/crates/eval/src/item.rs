//! Evaluation items and per-layer spelling scores.

use image::RgbaImage;
use serde::{Deserialize, Serialize};

use densegen_core::Layout;
use densegen_data::pattern;

use crate::crop::{canvas_rects, check_canvas};
use crate::error::{Error, Result};
use crate::spelling::{spelling_precision, Language};

/// Where recognized text comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum HypothesisSource {
    /// Copies the references; exercises the pipeline without a recognizer.
    GroundTruth,
    /// Reads band-pattern text renders back from the image.
    Pattern,
    /// One string per text layer, from an outside recognizer.
    External(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub image: RgbaImage,
    pub layout: Layout,
    /// One per text layer, in z-order.
    pub references: Vec<String>,
    pub hypotheses: Vec<String>,
}

impl EvalItem {
    pub fn new(id: impl Into<String>, image: RgbaImage, layout: Layout, source: HypothesisSource) -> Result<Self> {
        check_canvas(&image, &layout)?;
        let text: Vec<usize> = (0..layout.len()).filter(|&i| layout.layers[i].is_text()).collect();
        let references: Vec<String> = text.iter().map(|&i| layout.layers[i].text.clone()).collect();
        let hypotheses = match source {
            HypothesisSource::GroundTruth => references.clone(),
            HypothesisSource::Pattern => {
                let rects = canvas_rects(&layout);
                text.iter().map(|&i| pattern::decode(&image, &rects[i])).collect()
            }
            HypothesisSource::External(h) => {
                if h.len() != references.len() {
                    return Err(Error::Validation(format!(
                        "{} hypotheses for {} text layers",
                        h.len(),
                        references.len()
                    )));
                }
                h
            }
        };
        Ok(Self {
            id: id.into(),
            image,
            layout,
            references,
            hypotheses,
        })
    }

    /// Indices of the text layers the reference and hypothesis lists align with.
    pub fn text_layers(&self) -> Vec<usize> {
        (0..self.layout.len()).filter(|&i| self.layout.layers[i].is_text()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpellingScore {
    pub index: usize,
    pub language: Language,
    pub reference: String,
    pub hypothesis: String,
    pub precision: f64,
}

/// Scores every text layer. A layer without a language tag is English.
pub fn item_spelling(item: &EvalItem) -> Result<Vec<SpellingScore>> {
    item.text_layers()
        .into_iter()
        .zip(item.references.iter().zip(&item.hypotheses))
        .map(|(i, (r, h))| {
            let language: Language = item.layout.layers[i].lang.as_deref().unwrap_or("en").parse()?;
            Ok(SpellingScore {
                index: i,
                language,
                reference: r.clone(),
                hypothesis: h.clone(),
                precision: spelling_precision(r, h, language),
            })
        })
        .collect()
}

/// Mean precision over text layers; `None` without text layers.
pub fn mean_precision(scores: &[SpellingScore]) -> Option<f64> {
    (!scores.is_empty()).then(|| scores.iter().map(|s| s.precision).sum::<f64>() / scores.len() as f64)
}
