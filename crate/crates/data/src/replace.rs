//! Layer-wise and background replacement on layered designs.

use std::collections::BTreeMap;

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use densegen_core::layout::discretize;
use densegen_core::{Layout, PixelRect, Rng};

use crate::asset::LayerDatabase;
use crate::composite::{draw_over, letterbox};
use crate::error::{Error, Result};

/// Per-channel variance bound (in `[0, 1]` units) for a bitmap to count as one flat color.
pub const SOLID_VARIANCE: f64 = 1e-4;

/// One layer's pixels, sized to its rect, and the asset it came from if any.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacedLayer {
    pub rgba: RgbaImage,
    pub source: Option<String>,
}

/// A template: layout plus one bitmap per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredDesign {
    pub layout: Layout,
    pub layers: Vec<PlacedLayer>,
}

impl LayeredDesign {
    pub fn new(layout: Layout, layers: Vec<PlacedLayer>) -> Result<Self> {
        if layers.len() != layout.len() {
            return Err(Error::Validation(format!(
                "{} bitmaps for {} layers",
                layers.len(),
                layout.len()
            )));
        }
        let d = Self { layout, layers };
        for (i, l) in d.layers.iter().enumerate() {
            let r = d.rect(i);
            if l.rgba.dimensions() != (r.width() as u32, r.height() as u32) {
                return Err(Error::Validation(format!(
                    "layer {i} bitmap is {:?}, rect is {}x{}",
                    l.rgba.dimensions(),
                    r.width(),
                    r.height()
                )));
            }
        }
        Ok(d)
    }

    /// Builds a design by fitting database assets into each layer's rect.
    pub fn from_assets(layout: Layout, ids: &[&str], db: &LayerDatabase) -> Result<Self> {
        if ids.len() != layout.len() {
            return Err(Error::Validation(format!("{} asset ids for {} layers", ids.len(), layout.len())));
        }
        let layers = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let r = discretize(&layout.layers[i].bbox, layout.canvas_height as usize, layout.canvas_width as usize);
                Ok(PlacedLayer {
                    rgba: letterbox(&db.get(id)?.rgba, r.width() as u32, r.height() as u32),
                    source: Some(id.to_string()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layout, layers)
    }

    /// Pixel rect of layer `i` on the canvas.
    pub fn rect(&self, i: usize) -> PixelRect {
        discretize(
            &self.layout.layers[i].bbox,
            self.layout.canvas_height as usize,
            self.layout.canvas_width as usize,
        )
    }

    /// Source-over composite of all layers, bottom to top, on a transparent canvas.
    pub fn composite(&self) -> RgbaImage {
        let mut canvas = RgbaImage::new(self.layout.canvas_width, self.layout.canvas_height);
        for (i, l) in self.layers.iter().enumerate() {
            draw_over(&mut canvas, &l.rgba, &self.rect(i));
        }
        canvas
    }
}

/// Which template layers receive which assets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplacementPlan {
    pub layers: BTreeMap<usize, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
}

impl ReplacementPlan {
    /// The plan that restores the sources `design` currently uses at every index `self` touches.
    pub fn inverse(&self, design: &LayeredDesign) -> Result<Self> {
        let source = |i: usize| -> Result<String> {
            design
                .layers
                .get(i)
                .ok_or_else(|| Error::Validation(format!("plan references layer {i} of {}", design.layers.len())))?
                .source
                .clone()
                .ok_or_else(|| Error::Validation(format!("layer {i} has no source asset to restore")))
        };
        Ok(Self {
            layers: self.layers.keys().map(|&i| Ok((i, source(i)?))).collect::<Result<_>>()?,
            background: match self.background {
                Some(_) => Some(source(0)?),
                None => None,
            },
        })
    }
}

/// Applies `plan`: each replaced asset is letterboxed into its layer's rect.
/// The background entry, when present, targets layer 0.
pub fn replace_layers(design: &LayeredDesign, plan: &ReplacementPlan, db: &LayerDatabase) -> Result<LayeredDesign> {
    let mut out = design.clone();
    let targets = plan
        .background
        .iter()
        .map(|id| (0usize, id))
        .chain(plan.layers.iter().map(|(&i, id)| (i, id)));
    for (i, id) in targets {
        if i >= out.layers.len() {
            return Err(Error::Validation(format!("plan references layer {i} of {}", out.layers.len())));
        }
        let r = out.rect(i);
        out.layers[i] = PlacedLayer {
            rgba: letterbox(&db.get(id)?.rgba, r.width() as u32, r.height() as u32),
            source: Some(id.clone()),
        };
    }
    Ok(out)
}

/// Per-channel RGB variance below [`SOLID_VARIANCE`].
pub fn is_solid(img: &RgbaImage) -> bool {
    let n = f64::from(img.width() * img.height());
    if n == 0.0 {
        return false;
    }
    (0..3).all(|k| {
        let vals = img.pixels().map(|p| f64::from(p[k]) / 255.0);
        let mean = vals.clone().sum::<f64>() / n;
        let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        var <= SOLID_VARIANCE
    })
}

/// Swaps a solid background for a uniformly drawn solid asset from `db`.
/// Returns the design unchanged and `None` when the background is not solid
/// or the database has no solid candidates.
pub fn replace_background(design: &LayeredDesign, db: &LayerDatabase, rng: &mut Rng) -> (LayeredDesign, Option<String>) {
    let Some(bg) = design.layers.first() else {
        return (design.clone(), None);
    };
    if !is_solid(&bg.rgba) {
        return (design.clone(), None);
    }
    let candidates = db.solid_backgrounds();
    let Some(choice) = rng.choose(&candidates) else {
        return (design.clone(), None);
    };
    let color = *choice.rgba.get_pixel(0, 0);
    let mut out = design.clone();
    let (w, h) = bg.rgba.dimensions();
    out.layers[0] = PlacedLayer {
        rgba: RgbaImage::from_pixel(w, h, Rgba([color[0], color[1], color[2], 255])),
        source: Some(choice.id.clone()),
    };
    (out, Some(choice.id.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::{DownsampleEmbedder, LayerAsset, Style};
    use densegen_core::{Layer, NormalizedBBox};

    fn add(db: &mut LayerDatabase, id: &str, img: RgbaImage) {
        db.insert(LayerAsset::new(id, img, id, Style::None, &DownsampleEmbedder).unwrap()).unwrap();
    }

    fn blob(w: u32, h: u32, color: [u8; 3], alpha: u8) -> RgbaImage {
        RgbaImage::from_fn(w, h, |x, y| {
            let inside = x > 0 && y > 0 && x < w - 1 && y < h - 1;
            if inside {
                Rgba([color[0], color[1], color[2], alpha])
            } else {
                Rgba([0, 0, 0, 0])
            }
        })
    }

    fn fixture() -> (LayeredDesign, LayerDatabase) {
        let mut db = LayerDatabase::new();
        add(&mut db, "bg_white", RgbaImage::from_pixel(40, 20, Rgba([250, 250, 250, 255])));
        add(&mut db, "bg_navy", RgbaImage::from_pixel(8, 4, Rgba([10, 20, 80, 255])));
        add(&mut db, "red", blob(10, 10, [220, 20, 20], 255));
        add(&mut db, "green_half", blob(10, 10, [20, 220, 20], 128));
        add(&mut db, "blue_wide", blob(20, 10, [20, 20, 220], 200));
        let layout = Layout::new(
            40,
            20,
            vec![
                Layer::background("white"),
                Layer::non_text(1, NormalizedBBox::new(0.0, 0.0, 0.5, 1.0).unwrap(), "a"),
                Layer::non_text(2, NormalizedBBox::new(0.25, 0.25, 0.75, 0.75).unwrap(), "b"),
            ],
        )
        .unwrap();
        let d = LayeredDesign::from_assets(layout, &["bg_white", "red", "green_half"], &db).unwrap();
        (d, db)
    }

    #[test]
    fn empty_plan_and_identity_replacement() {
        let (d, db) = fixture();
        let same = replace_layers(&d, &ReplacementPlan::default(), &db).unwrap();
        assert_eq!(same.composite(), d.composite());
        let plan = ReplacementPlan {
            layers: [(1, "red".to_string())].into(),
            background: None,
        };
        assert_eq!(replace_layers(&d, &plan, &db).unwrap().composite(), d.composite());
    }

    #[test]
    fn inverse_plan_roundtrip() {
        let (d, db) = fixture();
        let plan = ReplacementPlan {
            layers: [(1, "blue_wide".to_string()), (2, "red".to_string())].into(),
            background: Some("bg_navy".into()),
        };
        let inv = plan.inverse(&d).unwrap();
        let changed = replace_layers(&d, &plan, &db).unwrap();
        assert_ne!(changed.composite(), d.composite());
        let back = replace_layers(&changed, &inv, &db).unwrap();
        assert_eq!(back.composite(), d.composite());
    }

    #[test]
    fn unknown_asset_is_lookup_error() {
        let (d, db) = fixture();
        let plan = ReplacementPlan {
            layers: [(1, "nope".to_string())].into(),
            background: None,
        };
        assert!(matches!(replace_layers(&d, &plan, &db), Err(Error::UnknownAsset(_))));
    }

    #[test]
    fn overlap_probes_by_hand() {
        let (d, _) = fixture();
        let img = d.composite();
        // Background only.
        assert_eq!(img.get_pixel(39, 0), &Rgba([250, 250, 250, 255]));
        // Red over white: opaque red.
        assert_eq!(img.get_pixel(5, 10), &Rgba([220, 20, 20, 255]));
        // Half green over red: a = 128/255.
        let a = 128.0 / 255.0;
        let mix = |s: f64, d: f64| (s * a + d * (1.0 - a)).round() as u8;
        assert_eq!(img.get_pixel(16, 10), &Rgba([mix(20.0, 220.0), mix(220.0, 20.0), 20, 255]));
        // Half green over white.
        assert_eq!(img.get_pixel(22, 10), &Rgba([mix(20.0, 250.0), mix(220.0, 250.0), mix(20.0, 250.0), 255]));
    }

    #[test]
    fn background_swap_is_seeded_and_local() {
        let (d, db) = fixture();
        let (a, id_a) = replace_background(&d, &db, &mut Rng::new(3));
        let (_, id_b) = replace_background(&d, &db, &mut Rng::new(3));
        assert_eq!(id_a, id_b);
        assert!(id_a.is_some());
        let (before, after) = (d.composite(), a.composite());
        // Pixels may only differ where something above the background lets it show through.
        let mut cover = RgbaImage::new(40, 20);
        for i in 1..d.layers.len() {
            draw_over(&mut cover, &d.layers[i].rgba, &d.rect(i));
        }
        for (x, y, p) in before.enumerate_pixels() {
            if after.get_pixel(x, y) != p {
                assert!(cover.get_pixel(x, y)[3] < 255, "({x},{y})");
            }
        }
    }

    #[test]
    fn gradient_background_untouched() {
        let (mut d, db) = fixture();
        d.layers[0].rgba = RgbaImage::from_fn(40, 20, |x, _| Rgba([(x * 6) as u8, 0, 0, 255]));
        d.layers[0].source = None;
        let (out, id) = replace_background(&d, &db, &mut Rng::new(1));
        assert_eq!(id, None);
        assert_eq!(out, d);
    }
}
