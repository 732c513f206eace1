//! Layer generation success rate via classify, caption, then score.

use std::collections::BTreeMap;

use image::RgbaImage;
use serde::{Deserialize, Serialize};

use densegen_core::{LayerKind, Layout};

use crate::crop::{occluders, occlusion_crop};
use crate::error::{Error, Result};
use crate::judge::{ElementType, JudgeProvider, LayerInfo, ScoreContext};
use crate::som::annotate_som;

pub const DEFAULT_THRESHOLD: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LgsrConfig {
    /// A layer succeeds when its score is at least this.
    pub threshold: u8,
    /// Tries per judge request before the layer is marked unscored.
    pub attempts: usize,
    /// Concurrent judge requests.
    pub parallelism: usize,
}

impl Default for LgsrConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            attempts: 3,
            parallelism: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerJudgement {
    pub index: usize,
    pub element_type: Option<ElementType>,
    pub description: Option<String>,
    /// `None` when the judge failed on every attempt.
    pub score: Option<u8>,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgsrReport {
    pub threshold: u8,
    pub judgements: Vec<LayerJudgement>,
    /// Non-text, non-background layers.
    pub layers: usize,
    pub successes: usize,
    /// `successes / layers`; absent when there are no such layers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lgsr: Option<f64>,
    /// Some layer could not be scored; those count as failures.
    pub incomplete: bool,
}

/// Success rate from raw scores; unscored entries count as failures.
pub fn lgsr_from_scores(scores: &[Option<u8>], threshold: u8) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let ok = scores.iter().filter(|s| s.is_some_and(|s| s >= threshold)).count();
    Some(ok as f64 / scores.len() as f64)
}

fn retry<T>(attempts: usize, mut f: impl FnMut() -> Result<T>) -> Result<T> {
    let mut last = Error::Transport("no attempts configured".into());
    for _ in 0..attempts {
        match f() {
            Ok(v) => return Ok(v),
            Err(e @ (Error::Transport(_) | Error::Protocol(_))) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Runs `f` over `items` on at most `parallelism` threads; results keep item order.
fn par_map<T: Sync, R: Send>(items: &[T], parallelism: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let chunk = items.len().div_ceil(parallelism.max(1)).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("judge worker panicked"))
            .collect()
    })
}

fn layer_info(layout: &Layout, index: usize) -> LayerInfo {
    let b = &layout.layers[index].bbox;
    LayerInfo {
        index,
        caption: layout.layers[index].prompt.clone(),
        bbox: [b.x1, b.y1, b.x2, b.y2],
        occluders: occluders(layout, index),
        element_type: None,
        description: None,
    }
}

/// Scores every non-text foreground layer of `image`. Judge failures are
/// retried, then recorded as unscored; other errors abort.
pub fn lgsr(
    image: &RgbaImage,
    layout: &Layout,
    global_caption: &str,
    judge: &dyn JudgeProvider,
    cfg: &LgsrConfig,
) -> Result<LgsrReport> {
    let targets: Vec<usize> = layout
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind == LayerKind::NonText)
        .map(|(i, _)| i)
        .collect();
    let annotated = annotate_som(image, layout)?;

    let mut infos: BTreeMap<usize, LayerInfo> = targets.iter().map(|&i| (i, layer_info(layout, i))).collect();
    let mut failures: BTreeMap<usize, String> = BTreeMap::new();

    let kinds = par_map(&targets, cfg.parallelism, |&i| retry(cfg.attempts, || judge.classify(&infos[&i])));
    for (&i, r) in targets.iter().zip(kinds) {
        match r {
            Ok(t) => infos.get_mut(&i).expect("target").element_type = Some(t),
            Err(e) => {
                failures.insert(i, format!("classify: {e}"));
            }
        }
    }

    let crops = targets
        .iter()
        .map(|&i| occlusion_crop(image, layout, i))
        .collect::<Result<Vec<_>>>()?;
    let described = par_map(&targets.iter().zip(&crops).collect::<Vec<_>>(), cfg.parallelism, |(&i, crop)| {
        retry(cfg.attempts, || judge.caption(&infos[&i], crop))
    });
    for (&i, r) in targets.iter().zip(described) {
        match r {
            Ok(d) => infos.get_mut(&i).expect("target").description = Some(d),
            Err(e) => {
                failures.entry(i).or_insert(format!("caption: {e}"));
            }
        }
    }

    let all: Vec<LayerInfo> = infos.values().cloned().collect();
    let scored = par_map(&targets, cfg.parallelism, |&i| {
        let ctx = ScoreContext {
            global_caption,
            image,
            annotated: &annotated,
            layout,
            layers: &all,
            target: i,
        };
        retry(cfg.attempts, || judge.score(&ctx))
    });

    let mut judgements = Vec::with_capacity(targets.len());
    for (&i, r) in targets.iter().zip(scored) {
        let info = &infos[&i];
        let (score, reason) = match (r, failures.get(&i)) {
            (Ok(s), None) => (Some(s.score), s.reason),
            (Ok(_), Some(f)) => (None, f.clone()),
            (Err(e @ (Error::Transport(_) | Error::Protocol(_))), prior) => {
                (None, prior.cloned().unwrap_or_else(|| format!("score: {e}")))
            }
            (Err(e), _) => return Err(e),
        };
        judgements.push(LayerJudgement {
            index: i,
            element_type: info.element_type,
            description: info.description.clone(),
            score,
            reason,
        });
    }
    let scores: Vec<Option<u8>> = judgements.iter().map(|j| j.score).collect();
    Ok(LgsrReport {
        threshold: cfg.threshold,
        layers: judgements.len(),
        successes: scores.iter().filter(|s| s.is_some_and(|s| s >= cfg.threshold)).count(),
        lgsr: lgsr_from_scores(&scores, cfg.threshold),
        incomplete: scores.iter().any(Option::is_none),
        judgements,
    })
}
