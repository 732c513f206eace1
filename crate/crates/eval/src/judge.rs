//! Judge providers for layer scoring: an offline stub and an HTTP client.
//!
//! Every request travels as one JSON record:
//!
//! ```json
//! {"kind": "score", "global_caption": "...", "images": ["<base64 png>", ...],
//!  "layers": [{"index": 3, "caption": "...", "bbox": [x1, y1, x2, y2],
//!              "occluders": [4, 7], "element_type": "block", "description": "..."}],
//!  "target": 3}
//! ```
//!
//! and the reply is `{"score"?, "element_type"?, "description"?, "reason"}`.

use std::io::Cursor;
use std::time::Duration;

use base64::Engine;
use image::RgbaImage;
use serde::{Deserialize, Serialize};

use densegen_core::Layout;
use densegen_data::palette::{classify, color_in_prompt, PALETTE};

use crate::crop::occlusion_crop;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    /// Substrate-like layer judged on color and texture.
    Block,
    /// Layer depicting a specific object.
    Object,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Classify,
    Caption,
    Score,
}

/// Per-layer metadata sent to the judge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub index: usize,
    pub caption: String,
    /// Normalized `[x1, y1, x2, y2]`.
    pub bbox: [f64; 4],
    /// Higher layers whose rect overlaps this one.
    pub occluders: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_type: Option<ElementType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_caption: Option<String>,
    pub images: Vec<String>,
    pub layers: Vec<LayerInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    #[serde(default)]
    pub score: Option<i64>,
    #[serde(default)]
    pub element_type: Option<ElementType>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub reason: String,
}

/// Everything the scoring step sees.
pub struct ScoreContext<'a> {
    pub global_caption: &'a str,
    pub image: &'a RgbaImage,
    pub annotated: &'a RgbaImage,
    pub layout: &'a Layout,
    /// Metadata for every judged layer, including earlier steps' outputs.
    pub layers: &'a [LayerInfo],
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scored {
    pub score: u8,
    pub reason: String,
}

pub trait JudgeProvider: Sync {
    fn classify(&self, layer: &LayerInfo) -> Result<ElementType>;
    /// Describes the occlusion-masked crop without seeing the layer's caption.
    fn caption(&self, layer: &LayerInfo, crop: &RgbaImage) -> Result<String>;
    fn score(&self, ctx: &ScoreContext<'_>) -> Result<Scored>;
}

const BLOCK_WORDS: &[&str] = &[
    "background", "block", "panel", "banner", "frame", "card", "box", "band", "stripe", "bar", "area", "region",
    "shape", "rectangle", "substrate", "texture",
];

/// Share of visible pixels per palette class, and the visible count.
fn palette_shares(crop: &RgbaImage) -> ([f64; PALETTE.len()], usize) {
    let mut counts = [0usize; PALETTE.len()];
    for p in crop.pixels().filter(|p| p[3] > 0) {
        counts[classify([p[0], p[1], p[2]])] += 1;
    }
    let n: usize = counts.iter().sum();
    let mut shares = [0.0; PALETTE.len()];
    if n > 0 {
        for (s, c) in shares.iter_mut().zip(counts) {
            *s = c as f64 / n as f64;
        }
    }
    (shares, n)
}

/// Deterministic offline judge for color-semantics images: it reads the
/// palette color named in a layer caption and checks how much of the
/// visible crop has that color.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubJudge;

impl JudgeProvider for StubJudge {
    fn classify(&self, layer: &LayerInfo) -> Result<ElementType> {
        let lower = layer.caption.to_lowercase();
        let block = lower
            .split(|c: char| !c.is_alphanumeric())
            .any(|w| BLOCK_WORDS.contains(&w));
        Ok(if block { ElementType::Block } else { ElementType::Object })
    }

    fn caption(&self, _layer: &LayerInfo, crop: &RgbaImage) -> Result<String> {
        let (shares, n) = palette_shares(crop);
        if n == 0 {
            return Ok("nothing visible".into());
        }
        let top = (0..shares.len()).max_by(|&a, &b| shares[a].total_cmp(&shares[b]).then(b.cmp(&a))).expect("non-empty");
        Ok(format!("mostly {} ({:.0}% of visible pixels)", PALETTE[top].name, shares[top] * 100.0))
    }

    fn score(&self, ctx: &ScoreContext<'_>) -> Result<Scored> {
        let caption = &ctx.layout.layers[ctx.target].prompt;
        let Some(color) = color_in_prompt(caption) else {
            return Ok(Scored {
                score: 0,
                reason: "caption names no palette color".into(),
            });
        };
        let crop = occlusion_crop(ctx.image, ctx.layout, ctx.target)?;
        let (shares, n) = palette_shares(&crop);
        if n == 0 {
            return Ok(Scored {
                score: 0,
                reason: "region fully occluded".into(),
            });
        }
        let score = (shares[color] * 10.0).round() as u8;
        Ok(Scored {
            score,
            reason: format!("{:.1}% of visible pixels are {}", shares[color] * 100.0, PALETTE[color].name),
        })
    }
}

pub fn png_base64(img: &RgbaImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

pub const ENDPOINT_VAR: &str = "JUDGE_ENDPOINT";
pub const TOKEN_VAR: &str = "JUDGE_TOKEN";

/// JSON-over-HTTP judge. One POST per request; HTTP errors surface as
/// transport errors so the pipeline can retry them.
pub struct RemoteJudge {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl RemoteJudge {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self {
            endpoint: endpoint.into(),
            token,
            agent,
        }
    }

    /// Reads the endpoint and optional bearer token from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| Error::Config(format!("{ENDPOINT_VAR} is not set")))?;
        Ok(Self::new(endpoint, std::env::var(TOKEN_VAR).ok(), timeout))
    }

    pub fn send(&self, req: &JudgeRequest) -> Result<JudgeResponse> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            call = call.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = call.send_json(req).map_err(|e| Error::Transport(e.to_string()))?;
        resp.body_mut()
            .read_json::<JudgeResponse>()
            .map_err(|e| Error::Protocol(e.to_string()))
    }
}

impl JudgeProvider for RemoteJudge {
    fn classify(&self, layer: &LayerInfo) -> Result<ElementType> {
        let resp = self.send(&JudgeRequest {
            kind: RequestKind::Classify,
            global_caption: None,
            images: vec![],
            layers: vec![layer.clone()],
            target: Some(layer.index),
        })?;
        resp.element_type
            .ok_or_else(|| Error::Protocol("classify reply lacks element_type".into()))
    }

    fn caption(&self, layer: &LayerInfo, crop: &RgbaImage) -> Result<String> {
        // The caption step must not see the ground-truth layer caption.
        let blind = LayerInfo {
            caption: String::new(),
            ..layer.clone()
        };
        let resp = self.send(&JudgeRequest {
            kind: RequestKind::Caption,
            global_caption: None,
            images: vec![png_base64(crop)?],
            layers: vec![blind],
            target: Some(layer.index),
        })?;
        resp.description
            .ok_or_else(|| Error::Protocol("caption reply lacks description".into()))
    }

    fn score(&self, ctx: &ScoreContext<'_>) -> Result<Scored> {
        let resp = self.send(&JudgeRequest {
            kind: RequestKind::Score,
            global_caption: Some(ctx.global_caption.to_string()),
            images: vec![png_base64(ctx.image)?, png_base64(ctx.annotated)?],
            layers: ctx.layers.to_vec(),
            target: Some(ctx.target),
        })?;
        match resp.score {
            Some(s @ 0..=10) => Ok(Scored {
                score: s as u8,
                reason: resp.reason,
            }),
            Some(s) => Err(Error::Protocol(format!("score {s} outside 0..=10"))),
            None => Err(Error::Protocol("score reply lacks score".into())),
        }
    }
}
