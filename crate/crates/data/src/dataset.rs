//! On-disk datasets of (image, layout) pairs, template directories, and
//! retrieval-driven augmentation.
//!
//! Dataset layout:
//!
//! ```text
//! out/
//!   index.json    {"format": "densegen-dataset", "version": 1, "items": ["00000", ...]}
//!   00000.png     composite RGBA
//!   00000.json    layout manifest
//!   stats.json    layer-count statistics over all manifests
//! ```

use std::path::Path;

use image::RgbaImage;
use serde::{Deserialize, Serialize};

use densegen_core::diffusion::{encode_image, encode_regions, TrainExample};
use densegen_core::encoders::EncoderConfig;
use densegen_core::layout::{layout_stats, load_manifest, save_manifest, LATENT_DOWNSCALE};
use densegen_core::{Layout, Scalar};

use crate::asset::{DownsampleEmbedder, LayerAsset, LayerDatabase, Style};
use crate::error::{Error, Result};
use crate::filter::{DominantClassifier, DominantLabel};
use crate::replace::{replace_layers, LayeredDesign, PlacedLayer, ReplacementPlan};
use crate::retrieve::retrieve;
use crate::synth::SynthItem;

pub const DATASET_FORMAT: &str = "densegen-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    format: String,
    version: u32,
    items: Vec<String>,
}

pub fn save_dataset(dir: impl AsRef<Path>, items: &[SynthItem]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for item in items {
        item.image
            .save_with_format(dir.join(format!("{}.png", item.id)), image::ImageFormat::Png)?;
        save_manifest(&item.layout, dir.join(format!("{}.json", item.id)))?;
    }
    let index = Index {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        items: items.iter().map(|i| i.id.clone()).collect(),
    };
    std::fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index).expect("serializable") + "\n")?;
    if !items.is_empty() {
        let layouts: Vec<Layout> = items.iter().map(|i| i.layout.clone()).collect();
        let stats = layout_stats(&layouts)?;
        std::fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&stats).expect("serializable") + "\n")?;
    }
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<SynthItem>> {
    let dir = dir.as_ref();
    let index_path = dir.join("index.json");
    let index: Index =
        serde_json::from_str(&std::fs::read_to_string(&index_path)?).map_err(|e| Error::format(&index_path, e))?;
    if index.format != DATASET_FORMAT || index.version != DATASET_VERSION {
        return Err(Error::format(
            &index_path,
            format!("unsupported dataset {} v{}", index.format, index.version),
        ));
    }
    index
        .items
        .into_iter()
        .map(|id| {
            let layout = load_manifest(dir.join(format!("{id}.json")))?;
            let image = image::open(dir.join(format!("{id}.png")))?.to_rgba8();
            if image.dimensions() != (layout.canvas_width, layout.canvas_height) {
                return Err(Error::format(
                    dir.join(format!("{id}.png")),
                    format!(
                        "image is {:?} but the manifest canvas is {}x{}",
                        image.dimensions(),
                        layout.canvas_width,
                        layout.canvas_height
                    ),
                ));
            }
            Ok(SynthItem { id, image, layout })
        })
        .collect()
}

/// Latents, layouts and encoded prompts for the trainer. All items must share one canvas.
pub fn to_train_examples<S: Scalar>(items: &[SynthItem], enc: &EncoderConfig, channels: usize) -> Result<Vec<TrainExample<S>>> {
    if let Some(first) = items.first() {
        let canvas = (first.layout.canvas_width, first.layout.canvas_height);
        if let Some(bad) = items
            .iter()
            .find(|i| (i.layout.canvas_width, i.layout.canvas_height) != canvas)
        {
            return Err(Error::Validation(format!(
                "item {} has canvas {}x{}, expected {}x{}",
                bad.id, bad.layout.canvas_width, bad.layout.canvas_height, canvas.0, canvas.1
            )));
        }
    }
    items
        .iter()
        .map(|item| {
            Ok(TrainExample {
                latent: encode_image(&item.image, LATENT_DOWNSCALE, channels)?,
                tokens: encode_regions(&item.layout, enc),
                layout: item.layout.clone(),
            })
        })
        .collect()
}

/// Template directory: `layout.json` plus `layer_<i>.png` per layer, each sized to its rect.
pub fn load_template(dir: impl AsRef<Path>) -> Result<LayeredDesign> {
    let dir = dir.as_ref();
    let layout: Layout = load_manifest(dir.join("layout.json"))?;
    let layers = (0..layout.len())
        .map(|i| {
            Ok(PlacedLayer {
                rgba: image::open(dir.join(format!("layer_{i}.png")))?.to_rgba8(),
                source: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LayeredDesign::new(layout, layers)
}

pub fn save_template(design: &LayeredDesign, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    save_manifest(&design.layout, dir.join("layout.json"))?;
    for (i, l) in design.layers.iter().enumerate() {
        l.rgba
            .save_with_format(dir.join(format!("layer_{i}.png")), image::ImageFormat::Png)?;
    }
    Ok(())
}

/// One augmented variant.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub layer: usize,
    pub plan: ReplacementPlan,
    pub image: RgbaImage,
}

/// For every layer labelled as a main element, retrieves up to `k` similar
/// assets and renders one variant per hit.
pub fn augment(
    design: &LayeredDesign,
    db: &LayerDatabase,
    classifier: &dyn DominantClassifier,
    k: usize,
    ar_tol: f64,
) -> Result<Vec<Variant>> {
    let bitmaps: Vec<RgbaImage> = design.layers.iter().map(|l| l.rgba.clone()).collect();
    let labels = classifier.classify(&design.layout, &bitmaps)?;
    let mut out = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        if *label != DominantLabel::MainElement {
            continue;
        }
        let query = LayerAsset::new(
            format!("template-{i}"),
            bitmaps[i].clone(),
            design.layout.layers[i].prompt.clone(),
            Style::None,
            &DownsampleEmbedder,
        )?;
        for hit in retrieve(&query, db, k, ar_tol) {
            let plan = ReplacementPlan {
                layers: [(i, hit.id)].into(),
                background: None,
            };
            let image = replace_layers(design, &plan, db)?.composite();
            out.push(Variant { layer: i, plan, image });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::HeuristicDominant;
    use crate::synth::{synth_dataset, SynthSpec};
    use densegen_core::{Layer, NormalizedBBox, Rng};
    use image::Rgba;

    #[test]
    fn dataset_roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        let items = synth_dataset(&SynthSpec { count: 3, ..SynthSpec::default() }, &Rng::new(1)).unwrap();
        save_dataset(tmp.path(), &items).unwrap();
        assert_eq!(load_dataset(tmp.path()).unwrap(), items);
        let ex: Vec<TrainExample<f64>> = to_train_examples(&items, &EncoderConfig::default(), 3).unwrap();
        assert_eq!(ex[0].latent.shape(), &[12, 20, 3]);
    }

    #[test]
    fn mixed_canvases_rejected() {
        let mut items = synth_dataset(&SynthSpec { count: 2, ..SynthSpec::default() }, &Rng::new(1)).unwrap();
        let other = synth_dataset(
            &SynthSpec {
                count: 1,
                canvas_width: 320,
                ..SynthSpec::default()
            },
            &Rng::new(1),
        )
        .unwrap();
        items.extend(other);
        assert!(to_train_examples::<f64>(&items, &EncoderConfig::default(), 3).is_err());
    }

    fn disc(size: u32, color: [u8; 3]) -> RgbaImage {
        let c = size as f64 / 2.0;
        RgbaImage::from_fn(size, size, |x, y| {
            let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
            if d < c - 2.0 {
                Rgba([color[0], color[1], color[2], 255])
            } else {
                Rgba([0, 0, 0, 0])
            }
        })
    }

    #[test]
    fn augment_respects_k_and_main_elements() {
        let mut db = LayerDatabase::new();
        for i in 0..14u8 {
            db.insert(LayerAsset::new(format!("d{i}"), disc(20, [i * 15, 100, 50]), "disc", Style::None, &DownsampleEmbedder).unwrap())
                .unwrap();
        }
        let layout = Layout::new(
            100,
            100,
            vec![
                Layer::background("paper"),
                Layer::non_text(1, NormalizedBBox::new(0.3, 0.3, 0.6, 0.6).unwrap(), "icon"),
            ],
        )
        .unwrap();
        let design = LayeredDesign::new(
            layout,
            vec![
                PlacedLayer {
                    rgba: RgbaImage::from_pixel(100, 100, Rgba([250, 250, 250, 255])),
                    source: None,
                },
                PlacedLayer {
                    rgba: disc(30, [200, 40, 40]),
                    source: None,
                },
            ],
        )
        .unwrap();
        let tmp = tempfile::tempdir().unwrap();
        save_template(&design, tmp.path()).unwrap();
        let design = load_template(tmp.path()).unwrap();
        let variants = augment(&design, &db, &HeuristicDominant::default(), 10, 1.5).unwrap();
        assert_eq!(variants.len(), 10);
        assert!(variants.iter().all(|v| v.layer == 1));
    }
}
