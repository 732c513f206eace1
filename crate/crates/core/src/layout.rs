//! Layers, layouts, grid geometry, masks, and guidance maps.
//!
//! A [`Layout`] is a z-ordered stack: layer 0 is the full-canvas background,
//! higher indices draw on top. Everything that touches the latent grid goes
//! through [`discretize`], which rounds bounding boxes outward so that no
//! conditioned cell is dropped.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Paper-scale canvas, in pixels.
pub const DEFAULT_CANVAS_WIDTH: u32 = 2240;
pub const DEFAULT_CANVAS_HEIGHT: u32 = 896;
/// Pixels per latent cell along each axis.
pub const LATENT_DOWNSCALE: u32 = 32;

/// Slack for `k / n` coordinates that do not round-trip through `f64` exactly.
const SNAP_EPS: f64 = 1e-9;

/// Bounding box in normalized canvas coordinates, `[x1, y1, x2, y2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct NormalizedBBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl NormalizedBBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.check()?;
        Ok(b)
    }

    pub const FULL: Self = Self {
        x1: 0.0,
        y1: 0.0,
        x2: 1.0,
        y2: 1.0,
    };

    fn check(&self) -> Result<()> {
        let ok_x = 0.0 <= self.x1 && self.x1 < self.x2 && self.x2 <= 1.0;
        let ok_y = 0.0 <= self.y1 && self.y1 < self.y2 && self.y2 <= 1.0;
        if ok_x && ok_y {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "bbox [{}, {}, {}, {}] violates 0 <= x1 < x2 <= 1, 0 <= y1 < y2 <= 1",
                self.x1, self.y1, self.x2, self.y2
            )))
        }
    }

    pub fn is_full(&self) -> bool {
        *self == Self::FULL
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, other: &Self) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }
}

impl From<NormalizedBBox> for [f64; 4] {
    fn from(b: NormalizedBBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl TryFrom<[f64; 4]> for NormalizedBBox {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        // Validity is checked with layer context in `Layout::validate`.
        Ok(Self {
            x1: v[0],
            y1: v[1],
            x2: v[2],
            y2: v[3],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Background,
    #[serde(rename = "nontext")]
    NonText,
    Text,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub index: usize,
    pub kind: LayerKind,
    pub bbox: NormalizedBBox,
    pub prompt: String,
    /// Rendered string; Text layers only.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    /// Language tag such as `en` or `zh`; Text layers only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
}

impl Layer {
    pub fn background(prompt: impl Into<String>) -> Self {
        Self {
            index: 0,
            kind: LayerKind::Background,
            bbox: NormalizedBBox::FULL,
            prompt: prompt.into(),
            text: String::new(),
            lang: None,
            style: None,
        }
    }

    pub fn non_text(index: usize, bbox: NormalizedBBox, prompt: impl Into<String>) -> Self {
        Self {
            index,
            kind: LayerKind::NonText,
            bbox,
            prompt: prompt.into(),
            text: String::new(),
            lang: None,
            style: None,
        }
    }

    pub fn text(
        index: usize,
        bbox: NormalizedBBox,
        prompt: impl Into<String>,
        text: impl Into<String>,
        lang: impl Into<String>,
    ) -> Self {
        Self {
            index,
            kind: LayerKind::Text,
            bbox,
            prompt: prompt.into(),
            text: text.into(),
            lang: Some(lang.into()),
            style: None,
        }
    }

    pub fn is_text(&self) -> bool {
        self.kind == LayerKind::Text
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    canvas: [u32; 2],
    layers: Vec<Layer>,
}

impl Layout {
    pub fn new(canvas_width: u32, canvas_height: u32, layers: Vec<Layer>) -> Result<Self> {
        let layout = Self {
            canvas_width,
            canvas_height,
            layers,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas_width == 0 || self.canvas_height == 0 {
            return Err(Error::Validation("canvas dimensions must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Validation("layout has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let fail = |reason: String| Error::InvalidLayer { index: i, reason };
            if layer.index != i {
                return Err(fail(format!("index {} out of z-order position", layer.index)));
            }
            layer.bbox.check().map_err(|e| fail(e.to_string()))?;
            match layer.kind {
                LayerKind::Background if i != 0 => {
                    return Err(fail("background layer must be at index 0".into()))
                }
                LayerKind::Background if !layer.bbox.is_full() => {
                    return Err(fail("background bbox must be [0, 0, 1, 1]".into()))
                }
                _ if i == 0 && layer.kind != LayerKind::Background => {
                    return Err(fail("layer 0 must be the background".into()))
                }
                LayerKind::Text if layer.text.is_empty() => {
                    return Err(fail("text layer has empty text".into()))
                }
                LayerKind::Background | LayerKind::NonText if !layer.text.is_empty() => {
                    return Err(fail("non-text layer carries text".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn text_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_text()).count()
    }

    /// Non-text object layers, excluding the background.
    pub fn non_text_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::NonText)
            .count()
    }

    /// Latent grid `(H, W)` for a given pixel-per-cell downscale factor.
    pub fn latent_dims(&self, downscale: u32) -> (usize, usize) {
        (
            (self.canvas_height / downscale).max(1) as usize,
            (self.canvas_width / downscale).max(1) as usize,
        )
    }

    pub fn rects(&self, h: usize, w: usize) -> Vec<PixelRect> {
        self.layers.iter().map(|l| discretize(&l.bbox, h, w)).collect()
    }

    /// For each cell in row-major order, the highest-z layer whose rect covers it.
    pub fn owner_map(&self, h: usize, w: usize) -> Vec<usize> {
        let mut owner = vec![usize::MAX; h * w];
        for (i, rect) in self.rects(h, w).iter().enumerate() {
            for cell in rect.cell_indices(w) {
                owner[cell] = i;
            }
        }
        owner
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ManifestDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::new(doc.canvas[0], doc.canvas[1], doc.layers)
    }

    pub fn to_json(&self) -> String {
        let doc = ManifestDoc {
            canvas: [self.canvas_width, self.canvas_height],
            layers: self.layers.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("layout serializes")
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Layout> {
    Layout::from_json(&fs::read_to_string(path)?)
}

pub fn save_manifest(layout: &Layout, path: impl AsRef<Path>) -> Result<()> {
    layout.validate()?;
    fs::write(path, layout.to_json() + "\n")?;
    Ok(())
}

/// Half-open grid rectangle `[r0, r1) × [c0, c1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl PixelRect {
    pub fn full(h: usize, w: usize) -> Self {
        Self {
            r0: 0,
            r1: h,
            c0: 0,
            c1: w,
        }
    }

    pub fn height(&self) -> usize {
        self.r1 - self.r0
    }

    pub fn width(&self) -> usize {
        self.c1 - self.c0
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.r0..self.r1).contains(&r) && (self.c0..self.c1).contains(&c)
    }

    pub fn fits(&self, h: usize, w: usize) -> bool {
        self.r0 < self.r1 && self.r1 <= h && self.c0 < self.c1 && self.c1 <= w
    }

    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let r = Self {
            r0: self.r0.max(other.r0),
            r1: self.r1.min(other.r1),
            c0: self.c0.max(other.c0),
            c1: self.c1.min(other.c1),
        };
        (r.r0 < r.r1 && r.c0 < r.c1).then_some(r)
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.intersect(other).is_some()
    }

    /// Row-major flat indices of the covered cells on a grid of width `w`.
    pub fn cell_indices(&self, w: usize) -> impl Iterator<Item = usize> + '_ {
        (self.r0..self.r1).flat_map(move |r| (self.c0..self.c1).map(move |c| r * w + c))
    }
}

/// Outward rounding of a normalized bbox onto an `h×w` grid.
pub fn discretize(bbox: &NormalizedBBox, h: usize, w: usize) -> PixelRect {
    assert!(h >= 1 && w >= 1, "grid must be non-empty");
    let lo = |v: f64, n: usize| ((v * n as f64 + SNAP_EPS).floor().max(0.0) as usize).min(n - 1);
    let hi = |v: f64, n: usize, start: usize| {
        ((v * n as f64 - SNAP_EPS).ceil().max(0.0) as usize).clamp(start + 1, n)
    };
    let r0 = lo(bbox.y1, h);
    let c0 = lo(bbox.x1, w);
    PixelRect {
        r0,
        r1: hi(bbox.y2, h, r0),
        c0,
        c1: hi(bbox.x2, w, c0),
    }
}

/// Copies the sub-grid under `rect` out of an `H×W×C` tensor.
pub fn crop<S: Scalar>(f: &Tensor<S>, rect: &PixelRect) -> Result<Tensor<S>> {
    let (h, w, c) = f.dims3()?;
    if !rect.fits(h, w) {
        return Err(Error::Geometry(format!("{rect:?} outside {h}x{w} grid")));
    }
    let mut data = Vec::with_capacity(rect.area() * c);
    for r in rect.r0..rect.r1 {
        let start = (r * w + rect.c0) * c;
        data.extend_from_slice(&f.data()[start..start + rect.width() * c]);
    }
    Tensor::new(vec![rect.height(), rect.width(), c], data)
}

/// Places `z` at `rect` inside an otherwise zero `H×W×C` tensor.
pub fn paste<S: Scalar>(z: &Tensor<S>, rect: &PixelRect, h: usize, w: usize) -> Result<Tensor<S>> {
    let (zh, zw, c) = z.dims3()?;
    if !rect.fits(h, w) || zh != rect.height() || zw != rect.width() {
        return Err(Error::Geometry(format!(
            "cannot paste {zh}x{zw} piece into {rect:?} on {h}x{w} grid"
        )));
    }
    let mut out = Tensor::zeros(&[h, w, c]);
    write_rect(&mut out, z, rect);
    Ok(out)
}

fn write_rect<S: Scalar>(dst: &mut Tensor<S>, z: &Tensor<S>, rect: &PixelRect) {
    let w = dst.shape()[1];
    let c = dst.shape()[2];
    let row_len = rect.width() * c;
    for (i, r) in (rect.r0..rect.r1).enumerate() {
        let start = (r * w + rect.c0) * c;
        dst.data_mut()[start..start + row_len].copy_from_slice(&z.data()[i * row_len..(i + 1) * row_len]);
    }
}

/// How overlapping pieces are merged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    /// Highest z-order piece wins on overlap.
    #[default]
    Overwrite,
    /// Plain sum of zero-padded pastes.
    Sum,
}

impl std::str::FromStr for CombineMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overwrite" => Ok(Self::Overwrite),
            "sum" => Ok(Self::Sum),
            other => Err(Error::Configuration(format!("unknown combine mode {other:?}"))),
        }
    }
}

/// Merges `(piece, rect)` pairs given bottom-to-top.
pub fn combine<S: Scalar>(
    pieces: &[(Tensor<S>, PixelRect)],
    h: usize,
    w: usize,
    mode: CombineMode,
) -> Result<Tensor<S>> {
    let (_, _, c) = pieces
        .first()
        .ok_or(Error::EmptyInput("combine: no pieces"))?
        .0
        .dims3()?;
    let mut out = Tensor::zeros(&[h, w, c]);
    match mode {
        CombineMode::Sum => {
            for (z, rect) in pieces {
                out.add_assign(&paste(z, rect, h, w)?)?;
            }
        }
        CombineMode::Overwrite => {
            let mut covered = vec![false; h * w];
            for (z, rect) in pieces {
                let (zh, zw, zc) = z.dims3()?;
                if !rect.fits(h, w) || zh != rect.height() || zw != rect.width() || zc != c {
                    return Err(Error::Geometry(format!(
                        "piece {:?} does not match {rect:?}",
                        z.shape()
                    )));
                }
                write_rect(&mut out, z, rect);
                for cell in rect.cell_indices(w) {
                    covered[cell] = true;
                }
            }
            if let Some(cell) = covered.iter().position(|&x| !x) {
                return Err(Error::Coverage {
                    row: cell / w,
                    col: cell % w,
                });
            }
        }
    }
    Ok(out)
}

/// `H×W` indicator of the layer's discretized rect.
pub fn binary_mask<S: Scalar>(layer: &Layer, h: usize, w: usize) -> Tensor<S> {
    let mut m = Tensor::zeros(&[h, w]);
    for cell in discretize(&layer.bbox, h, w).cell_indices(w) {
        m.data_mut()[cell] = S::one();
    }
    m
}

/// Union of all Text-layer masks.
pub fn text_mask<S: Scalar>(layout: &Layout, h: usize, w: usize) -> Tensor<S> {
    let mut m = Tensor::zeros(&[h, w]);
    for layer in layout.layers.iter().filter(|l| l.is_text()) {
        for cell in discretize(&layer.bbox, h, w).cell_indices(w) {
            m.data_mut()[cell] = S::one();
        }
    }
    m
}

/// Per-layer guidance weights plus the timestep window and the scale used outside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub gammas: Vec<f64>,
    /// Dense map applies for `t <= alpha * T`.
    pub alpha: f64,
    pub global_scale: f64,
}

impl GuidanceSpec {
    pub const DEFAULT_ALPHA: f64 = 0.5;
    pub const DEFAULT_GLOBAL_SCALE: f64 = 7.0;

    /// Every layer at `global_scale`.
    pub fn uniform(layers: usize, global_scale: f64) -> Self {
        Self {
            gammas: vec![global_scale; layers],
            alpha: Self::DEFAULT_ALPHA,
            global_scale,
        }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.gammas.len() != layers {
            return Err(Error::Configuration(format!(
                "guidance spec has {} gammas for {layers} layers",
                self.gammas.len()
            )));
        }
        if let Some(i) = self.gammas.iter().position(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Configuration(format!("gamma[{i}] must be finite and >= 0")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Configuration("alpha must lie in [0, 1]".into()));
        }
        if !(self.global_scale.is_finite() && self.global_scale >= 0.0) {
            return Err(Error::Configuration("global scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Dense `H×W` guidance-scale map from per-layer weights.
pub fn compose_guidance_map<S: Scalar>(
    layout: &Layout,
    spec: &GuidanceSpec,
    h: usize,
    w: usize,
    mode: CombineMode,
) -> Result<Tensor<S>> {
    spec.validate(layout.len())?;
    let mut map = Tensor::zeros(&[h, w]);
    for (layer, &gamma) in layout.layers.iter().zip(&spec.gammas) {
        let g = S::of(gamma);
        for cell in discretize(&layer.bbox, h, w).cell_indices(w) {
            let slot = &mut map.data_mut()[cell];
            match mode {
                CombineMode::Overwrite => *slot = g,
                CombineMode::Sum => *slot += g,
            }
        }
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutCounts {
    pub text: usize,
    /// Includes the background layer.
    pub non_text: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutStats {
    pub layouts: usize,
    pub per_layout: Vec<LayoutCounts>,
    pub chars_per_text_layer: Vec<usize>,
    pub median_text: f64,
    pub median_non_text: f64,
    pub median_total: f64,
    /// `None` when no layout has a text layer.
    pub median_chars: Option<f64>,
}

pub fn layout_stats(layouts: &[Layout]) -> Result<LayoutStats> {
    if layouts.is_empty() {
        return Err(Error::EmptyInput("layout_stats: no layouts"));
    }
    let per_layout: Vec<LayoutCounts> = layouts
        .iter()
        .map(|l| LayoutCounts {
            text: l.text_count(),
            non_text: l.len() - l.text_count(),
            total: l.len(),
        })
        .collect();
    let chars: Vec<usize> = layouts
        .iter()
        .flat_map(|l| l.layers.iter())
        .filter(|l| l.is_text())
        .map(|l| l.text.chars().count())
        .collect();
    let col = |f: fn(&LayoutCounts) -> usize| per_layout.iter().map(f).collect::<Vec<_>>();
    Ok(LayoutStats {
        layouts: layouts.len(),
        median_text: median(&col(|c| c.text)).expect("non-empty"),
        median_non_text: median(&col(|c| c.non_text)).expect("non-empty"),
        median_total: median(&col(|c| c.total)).expect("non-empty"),
        median_chars: median(&chars),
        chars_per_text_layer: chars,
        per_layout,
    })
}

/// Median; for an even count, the mean of the two central values.
pub fn median(values: &[usize]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    })
}
