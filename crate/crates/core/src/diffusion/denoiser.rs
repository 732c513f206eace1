//! Toy ε-prediction network.
//!
//! Per-cell residual stack; the only spatial interaction is the
//! layout-guided cross attention, so a cell sees its own value, the
//! timestep, and the tokens of the layer that owns it.
//!
//! ```text
//! h  = z_t·W_in + b_in
//! for each block:
//!     u = (h·W_mix + b_mix + attn(h) + shift(t)) ⊙ (1 + scale(t))
//!     h = h + act(u)
//! ε̂ = h·W_out + b_out
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Nonlinearity, NodeId, ParamId, ParamStore};
use crate::encoders::glyph_map_node;
use crate::error::{Error, Result};
use crate::layout::{CombineMode, Layout};
use crate::region_attention::{region_attention_node, HeadParams, RegionPlan, RegionTokens, TokenSource};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Latent grid rows.
    pub height: usize,
    /// Latent grid columns.
    pub width: usize,
    pub channels: usize,
    pub blocks: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub heads: usize,
    pub d_text: usize,
    /// Width of the sinusoidal timestep features.
    pub d_time: usize,
    pub nonlinearity: Nonlinearity,
    pub combine: CombineMode,
    /// Recorded for reference only; toy weights train at full rank.
    pub lora_rank: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            height: 28,
            width: 70,
            channels: 3,
            blocks: 4,
            d_model: 32,
            d_head: 16,
            heads: 1,
            d_text: 16,
            d_time: 16,
            nonlinearity: Nonlinearity::Silu,
            combine: CombineMode::Overwrite,
            lora_rank: 128,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.height,
            self.width,
            self.blocks,
            self.d_model,
            self.d_head,
            self.heads,
            self.d_text,
            self.d_time,
        ];
        if dims.contains(&0) {
            return Err(Error::Configuration("denoiser dimensions must be positive".into()));
        }
        if self.channels < 3 {
            return Err(Error::Configuration("latent needs at least 3 channels".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct BlockParams {
    mix_w: ParamId,
    mix_b: ParamId,
    time_shift: ParamId,
    time_scale: ParamId,
    heads: Vec<HeadParams>,
}

#[derive(Clone, Debug)]
struct ParamIds {
    in_w: ParamId,
    in_b: ParamId,
    blocks: Vec<BlockParams>,
    out_w: ParamId,
    out_b: ParamId,
    map_w: ParamId,
    map_b: ParamId,
}

/// Configuration plus trainable weights.
#[derive(Clone, Debug)]
pub struct Denoiser<S: Scalar = f64> {
    pub config: DenoiserConfig,
    pub params: ParamStore<S>,
    ids: ParamIds,
}

fn gaussian<S: Scalar>(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Tensor<S> {
    rng.normal_tensor::<f64>(&[rows, cols]).scale(std).cast()
}

impl<S: Scalar> Denoiser<S> {
    /// Parameter names in registration order. Checkpoints rely on this order.
    fn register(config: &DenoiserConfig, mut make: impl FnMut(&str, usize, usize, Init) -> Tensor<S>) -> (ParamStore<S>, ParamIds) {
        let c = config;
        let mut store = ParamStore::new();
        let mut add = |store: &mut ParamStore<S>, name: String, r: usize, k: usize, init: Init| {
            let t = make(&name, r, k, init);
            store.insert(name, t)
        };
        let in_w = add(&mut store, "in.w".into(), c.channels, c.d_model, Init::FanIn);
        let in_b = add(&mut store, "in.b".into(), 1, c.d_model, Init::Zero);
        let mut blocks = Vec::with_capacity(c.blocks);
        for b in 0..c.blocks {
            let p = format!("block{b}");
            let mix_w = add(&mut store, format!("{p}.mix.w"), c.d_model, c.d_model, Init::FanIn);
            let mix_b = add(&mut store, format!("{p}.mix.b"), 1, c.d_model, Init::Zero);
            let time_shift = add(&mut store, format!("{p}.time.shift"), c.d_time, c.d_model, Init::FanIn);
            let time_scale = add(&mut store, format!("{p}.time.scale"), c.d_time, c.d_model, Init::Small);
            let heads = (0..c.heads)
                .map(|h| HeadParams {
                    w_q: add(&mut store, format!("{p}.attn{h}.q"), c.d_model, c.d_head, Init::FanIn),
                    w_k: add(&mut store, format!("{p}.attn{h}.k"), c.d_text, c.d_head, Init::FanIn),
                    w_v: add(&mut store, format!("{p}.attn{h}.v"), c.d_text, c.d_head, Init::FanIn),
                    w_out: add(&mut store, format!("{p}.attn{h}.out"), c.d_head, c.d_model, Init::FanIn),
                })
                .collect();
            blocks.push(BlockParams {
                mix_w,
                mix_b,
                time_shift,
                time_scale,
                heads,
            });
        }
        let out_w = add(&mut store, "out.w".into(), c.d_model, c.channels, Init::Small);
        let out_b = add(&mut store, "out.b".into(), 1, c.channels, Init::Zero);
        let map_w = add(&mut store, "glyph_map.w".into(), c.d_text, c.d_text, Init::Identity);
        let map_b = add(&mut store, "glyph_map.b".into(), 1, c.d_text, Init::Zero);
        (
            store,
            ParamIds {
                in_w,
                in_b,
                blocks,
                out_w,
                out_b,
                map_w,
                map_b,
            },
        )
    }

    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed).fork(0xDE7);
        let (params, ids) = Self::register(&config, |_, r, c, init| match init {
            Init::FanIn => gaussian(&mut rng, r, c, 1.0 / (r as f64).sqrt()),
            Init::Small => gaussian(&mut rng, r, c, 0.1 / (r as f64).sqrt()),
            Init::Zero => Tensor::zeros(&[r, c]),
            Init::Identity => Tensor::identity(r),
        });
        Ok(Self { config, params, ids })
    }

    /// All-zero weights; the prediction is identically zero.
    pub fn zeros(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let (params, ids) = Self::register(&config, |_, r, c, _| Tensor::zeros(&[r, c]));
        Ok(Self { config, params, ids })
    }

    /// Rebuilds a denoiser from named tensors, checking names and shapes.
    pub fn from_named(config: DenoiserConfig, named: Vec<(String, Tensor<S>)>) -> Result<Self> {
        let mut fresh = Self::zeros(config)?;
        if named.len() != fresh.params.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors, found {}",
                fresh.params.len(),
                named.len()
            )));
        }
        for (name, tensor) in named {
            let id = fresh
                .params
                .id(&name)
                .ok_or_else(|| Error::Validation(format!("unknown parameter {name}")))?;
            if fresh.params.get(id).shape() != tensor.shape() {
                return Err(Error::Validation(format!(
                    "parameter {name}: shape {:?}, expected {:?}",
                    tensor.shape(),
                    fresh.params.get(id).shape()
                )));
            }
            *fresh.params.get_mut(id) = tensor;
        }
        Ok(fresh)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Builds `ε̂` inside `graph`; returns the `(H·W)×C` output node.
    pub fn forward_node(
        &self,
        graph: &mut Graph<S>,
        z_t: &Tensor<S>,
        t: f64,
        t_max: usize,
        plan: &RegionPlan,
        region_tokens: &[RegionTokens<S>],
    ) -> Result<NodeId> {
        let c = &self.config;
        let (h, w, ch) = z_t.dims3()?;
        if (h, w, ch) != (c.height, c.width, c.channels) {
            return Err(Error::dim("denoise(z_t)", z_t.shape(), &[c.height, c.width, c.channels]));
        }
        if (plan.h, plan.w) != (h, w) {
            return Err(Error::dim("denoise(plan)", &[plan.h, plan.w], &[h, w]));
        }
        let store = &self.params;
        let ids = &self.ids;

        let mut token_nodes = Vec::with_capacity(plan.rects.len());
        for i in 0..plan.rects.len() {
            let rt = region_tokens
                .iter()
                .find(|r| r.layer_index == i)
                .ok_or_else(|| Error::Configuration(format!("missing region tokens for layer {i}")))?;
            let (_, d) = rt.tokens.dims2()?;
            if d != c.d_text {
                return Err(Error::dim("denoise(tokens)", rt.tokens.shape(), &[rt.tokens.shape()[0], c.d_text]));
            }
            let node = graph.constant(rt.tokens.clone());
            let node = match rt.source {
                TokenSource::Glyph => glyph_map_node(graph, store, node, ids.map_w, ids.map_b)?,
                TokenSource::ClipLike => node,
            };
            token_nodes.push(node);
        }

        let x = graph.constant(z_t.clone().reshape(&[h * w, ch])?);
        let t_feat = graph.constant(timestep_features(t, t_max, c.d_time));
        let n = h * w;
        let broadcast = std::rc::Rc::new(vec![0usize; n]);

        let w_in = graph.param(store, ids.in_w);
        let b_in = graph.param(store, ids.in_b);
        let mut hidden = graph.matmul(x, w_in)?;
        hidden = graph.add_row(hidden, b_in)?;

        for block in &ids.blocks {
            let mix_w = graph.param(store, block.mix_w);
            let mix_b = graph.param(store, block.mix_b);
            let mut u = graph.matmul(hidden, mix_w)?;
            u = graph.add_row(u, mix_b)?;
            let attn = region_attention_node(graph, store, hidden, plan, &token_nodes, &block.heads, c.combine)?;
            u = graph.add(u, attn)?;

            let shift_w = graph.param(store, block.time_shift);
            let shift = graph.matmul(t_feat, shift_w)?;
            u = graph.add_row(u, shift)?;
            let scale_w = graph.param(store, block.time_scale);
            let scale = graph.matmul(t_feat, scale_w)?;
            let scale = graph.gather_rows(scale, broadcast.clone())?;
            let gated = graph.mul(u, scale)?;
            u = graph.add(u, gated)?;

            let act = graph.pointwise(u, c.nonlinearity);
            hidden = graph.add(hidden, act)?;
        }

        let w_out = graph.param(store, ids.out_w);
        let b_out = graph.param(store, ids.out_b);
        let out = graph.matmul(hidden, w_out)?;
        graph.add_row(out, b_out)
    }

    /// `ε̂(z_t, t, layout, prompts)`, shaped like `z_t`.
    pub fn denoise(
        &self,
        z_t: &Tensor<S>,
        t: usize,
        t_max: usize,
        layout: &Layout,
        region_tokens: &[RegionTokens<S>],
    ) -> Result<Tensor<S>> {
        let plan = RegionPlan::new(layout, self.config.height, self.config.width);
        self.denoise_with_plan(z_t, t, t_max, &plan, region_tokens)
    }

    pub fn denoise_with_plan(
        &self,
        z_t: &Tensor<S>,
        t: usize,
        t_max: usize,
        plan: &RegionPlan,
        region_tokens: &[RegionTokens<S>],
    ) -> Result<Tensor<S>> {
        let mut graph = Graph::new();
        let out = self.forward_node(&mut graph, z_t, t as f64, t_max, plan, region_tokens)?;
        graph.value(out).clone().reshape(z_t.shape())
    }
}

#[derive(Clone, Copy)]
enum Init {
    FanIn,
    Small,
    Zero,
    Identity,
}

/// `1×d` sinusoidal features of `t / t_max`.
pub fn timestep_features<S: Scalar>(t: f64, t_max: usize, d: usize) -> Tensor<S> {
    let x = t / t_max.max(1) as f64;
    let data = (0..d)
        .map(|i| {
            let freq = std::f64::consts::PI * (1u64 << (i / 2).min(20)) as f64 / 2.0;
            S::of(if i % 2 == 0 { (freq * x).sin() } else { (freq * x).cos() })
        })
        .collect();
    Tensor::new(vec![1, d], data).expect("d >= 1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Layer, NormalizedBBox};

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            height: 4,
            width: 6,
            channels: 3,
            blocks: 2,
            d_model: 5,
            d_head: 3,
            heads: 1,
            d_text: 4,
            d_time: 4,
            ..DenoiserConfig::default()
        }
    }

    fn layout() -> Layout {
        Layout::new(
            60,
            40,
            vec![
                Layer::background("bg"),
                Layer::non_text(1, NormalizedBBox::new(0.0, 0.0, 0.5, 0.5).unwrap(), "a"),
                Layer::text(2, NormalizedBBox::new(0.5, 0.5, 1.0, 1.0).unwrap(), "b", "b", "en"),
            ],
        )
        .unwrap()
    }

    fn tokens(rng: &mut Rng, n: usize, d: usize) -> Vec<RegionTokens<f64>> {
        (0..n)
            .map(|i| RegionTokens {
                layer_index: i,
                tokens: rng.normal_tensor(&[2, d]),
                source: if i == 2 { TokenSource::Glyph } else { TokenSource::ClipLike },
            })
            .collect()
    }

    #[test]
    fn zero_weights_predict_zero() {
        let d = Denoiser::<f64>::zeros(tiny()).unwrap();
        let mut rng = Rng::new(1);
        let z = rng.normal_tensor(&[4, 6, 3]);
        let toks = tokens(&mut rng, 3, 4);
        let out = d.denoise(&z, 10, 100, &layout(), &toks).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn output_matches_latent_shape() {
        for seed in 0..5 {
            let mut rng = Rng::new(seed);
            let cfg = DenoiserConfig {
                height: 2 + seed as usize,
                width: 3 + 2 * seed as usize,
                channels: 3 + seed as usize % 2,
                ..tiny()
            };
            let d = Denoiser::<f64>::new(cfg.clone(), seed).unwrap();
            let z = rng.normal_tensor(&[cfg.height, cfg.width, cfg.channels]);
            let toks = tokens(&mut rng, 3, 4);
            let out = d.denoise(&z, 5, 100, &layout(), &toks).unwrap();
            assert_eq!(out.shape(), z.shape());
            assert!(out.is_finite());
        }
    }

    #[test]
    fn rejects_wrong_latent_shape() {
        let d = Denoiser::<f64>::new(tiny(), 0).unwrap();
        let mut rng = Rng::new(2);
        let z = rng.normal_tensor(&[4, 5, 3]);
        let toks = tokens(&mut rng, 3, 4);
        assert!(matches!(d.denoise(&z, 5, 100, &layout(), &toks), Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_block_is_region_local() {
        let cfg = DenoiserConfig { blocks: 1, ..tiny() };
        let d = Denoiser::<f64>::new(cfg, 3).unwrap();
        let mut rng = Rng::new(3);
        let z = rng.normal_tensor(&[4, 6, 3]);
        let toks = tokens(&mut rng, 3, 4);
        let mut changed = toks.clone();
        changed[1].tokens = rng.normal_tensor(&[3, 4]);
        let a = d.denoise(&z, 7, 100, &layout(), &toks).unwrap();
        let b = d.denoise(&z, 7, 100, &layout(), &changed).unwrap();
        let rect = layout().rects(4, 6)[1];
        let mut inside_changed = false;
        for r in 0..4 {
            for c in 0..6 {
                for k in 0..3 {
                    let same = a.at3(r, c, k) == b.at3(r, c, k);
                    if rect.contains(r, c) {
                        inside_changed |= !same;
                    } else {
                        assert!(same, "cell ({r},{c}) changed outside region");
                    }
                }
            }
        }
        assert!(inside_changed);
    }

    #[test]
    fn from_named_checks_shapes() {
        let d = Denoiser::<f64>::new(tiny(), 0).unwrap();
        let named: Vec<(String, Tensor<f64>)> =
            d.params.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
        let back = Denoiser::from_named(tiny(), named.clone()).unwrap();
        assert_eq!(back.params, d.params);
        let mut bad = named;
        bad[0].1 = Tensor::zeros(&[1, 1]);
        assert!(Denoiser::<f64>::from_named(tiny(), bad).is_err());
    }
}
