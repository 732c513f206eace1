//! Transparent-layer assets and the on-disk database.
//!
//! Directory layout:
//!
//! ```text
//! db/
//!   index.json        {"format": "densegen-layer-db", "version": 1, "assets": ["id", ...]}
//!   <id>.png          RGBA bitmap
//!   <id>.json         {"caption", "style", "aspect_ratio", "embedding"}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbaImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DB_FORMAT: &str = "densegen-layer-db";
pub const DB_VERSION: u32 = 1;

const EMBED_GRID: u32 = 8;
const UNIT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    Chinese,
    Comic,
    Illustration,
    Minimalism,
    #[default]
    None,
}

/// Maps a bitmap to a unit vector.
pub trait EmbeddingProvider {
    fn embed(&self, rgba: &RgbaImage) -> Vec<f64>;
}

/// Mean-pools RGBA over an 8×8 grid of cells (256 values in `[0, 1]`) and
/// L2-normalizes. A fully zero bitmap maps to the uniform unit vector.
#[derive(Clone, Copy, Debug, Default)]
pub struct DownsampleEmbedder;

impl EmbeddingProvider for DownsampleEmbedder {
    fn embed(&self, rgba: &RgbaImage) -> Vec<f64> {
        let (w, h) = rgba.dimensions();
        let g = EMBED_GRID;
        let mut v = vec![0.0; (g * g * 4) as usize];
        for gy in 0..g {
            for gx in 0..g {
                let (x0, x1) = (gx * w / g, ((gx + 1) * w / g).max(gx * w / g + 1).min(w));
                let (y0, y1) = (gy * h / g, ((gy + 1) * h / g).max(gy * h / g + 1).min(h));
                let mut acc = [0.0f64; 4];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = rgba.get_pixel(x, y);
                        for k in 0..4 {
                            acc[k] += f64::from(p[k]) / 255.0;
                        }
                    }
                }
                let n = f64::from((x1 - x0) * (y1 - y0));
                let base = ((gy * g + gx) * 4) as usize;
                for k in 0..4 {
                    v[base + k] = acc[k] / n;
                }
            }
        }
        normalize(v)
    }
}

pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let u = 1.0 / (v.len() as f64).sqrt();
        v.iter_mut().for_each(|x| *x = u);
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerAsset {
    pub id: String,
    pub rgba: RgbaImage,
    pub caption: String,
    pub style: Style,
    /// Width over height.
    pub aspect_ratio: f64,
    /// Unit-norm embedding.
    pub embedding: Vec<f64>,
}

impl LayerAsset {
    pub fn new(
        id: impl Into<String>,
        rgba: RgbaImage,
        caption: impl Into<String>,
        style: Style,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Self> {
        let embedding = embedder.embed(&rgba);
        Self::with_embedding(id, rgba, caption, style, embedding)
    }

    pub fn with_embedding(
        id: impl Into<String>,
        rgba: RgbaImage,
        caption: impl Into<String>,
        style: Style,
        embedding: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if !valid_id(&id) {
            return Err(Error::Validation(format!("asset id {id:?} must be [A-Za-z0-9_-]+")));
        }
        let (w, h) = rgba.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::Validation(format!("asset {id}: empty bitmap")));
        }
        let norm = embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::Validation(format!("asset {id}: embedding norm {norm} is not 1")));
        }
        Ok(Self {
            id,
            aspect_ratio: f64::from(w) / f64::from(h),
            rgba,
            caption: caption.into(),
            style,
            embedding,
        })
    }

    /// Opaque and uniform in color: per-channel variance ≤ `1e-4` in `[0, 1]` units.
    pub fn is_solid(&self) -> bool {
        self.rgba.pixels().all(|p| p[3] == 255) && crate::replace::is_solid(&self.rgba)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    caption: String,
    style: Style,
    aspect_ratio: f64,
    embedding: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    format: String,
    version: u32,
    assets: Vec<String>,
}

/// Assets indexed by id, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerDatabase {
    assets: Vec<LayerAsset>,
    by_id: BTreeMap<String, usize>,
}

impl LayerDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, asset: LayerAsset) -> Result<()> {
        if self.by_id.contains_key(&asset.id) {
            return Err(Error::DuplicateAsset(asset.id));
        }
        self.by_id.insert(asset.id.clone(), self.assets.len());
        self.assets.push(asset);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&LayerAsset> {
        self.by_id
            .get(id)
            .map(|&i| &self.assets[i])
            .ok_or_else(|| Error::UnknownAsset(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn assets(&self) -> &[LayerAsset] {
        &self.assets
    }

    pub fn with_style(&self, style: Style) -> impl Iterator<Item = &LayerAsset> {
        self.assets.iter().filter(move |a| a.style == style)
    }

    /// Solid-color assets, candidates for background replacement.
    pub fn solid_backgrounds(&self) -> Vec<&LayerAsset> {
        self.assets.iter().filter(|a| a.is_solid()).collect()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for a in &self.assets {
            a.rgba.save_with_format(dir.join(format!("{}.png", a.id)), image::ImageFormat::Png)?;
            let side = Sidecar {
                caption: a.caption.clone(),
                style: a.style,
                aspect_ratio: a.aspect_ratio,
                embedding: a.embedding.clone(),
            };
            std::fs::write(dir.join(format!("{}.json", a.id)), serde_json::to_string_pretty(&side).expect("serializable"))?;
        }
        let index = Index {
            format: DB_FORMAT.into(),
            version: DB_VERSION,
            assets: self.assets.iter().map(|a| a.id.clone()).collect(),
        };
        std::fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index).expect("serializable"))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index_path = dir.join("index.json");
        let index: Index = serde_json::from_str(&std::fs::read_to_string(&index_path)?)
            .map_err(|e| Error::format(&index_path, e))?;
        if index.format != DB_FORMAT || index.version != DB_VERSION {
            return Err(Error::format(
                &index_path,
                format!("unsupported database {} v{}", index.format, index.version),
            ));
        }
        let mut db = Self::new();
        for id in index.assets {
            if !valid_id(&id) {
                return Err(Error::format(&index_path, format!("invalid asset id {id:?}")));
            }
            let side_path = dir.join(format!("{id}.json"));
            let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(&side_path)?)
                .map_err(|e| Error::format(&side_path, e))?;
            let rgba = image::open(dir.join(format!("{id}.png")))?.to_rgba8();
            let asset = LayerAsset::with_embedding(id, rgba, side.caption, side.style, side.embedding)?;
            if (asset.aspect_ratio - side.aspect_ratio).abs() > 1e-9 {
                return Err(Error::format(&side_path, "aspect ratio disagrees with bitmap"));
            }
            db.insert(asset)?;
        }
        Ok(db)
    }
}
