//! Layout-guided cross attention.
//!
//! Visual tokens are cropped per layer, each crop attends only to its own
//! layer's text tokens, and the per-layer outputs are pasted back and merged
//! by z-order. Three evaluation routes exist and must agree:
//!
//! * [`layout_guided_cross_attention`]: crop → attend → combine, one region at a time;
//! * [`layout_guided_cross_attention_batched`]: regions batched and padded
//!   to the largest member, padding masked out;
//! * [`region_attention_node`]: the differentiable version used by the denoiser,
//!   all regions concatenated into one block-diagonal attention.
//!
//! [`oracle_masked_attention`] is the naive reference: every visual token
//! against every text token with a `-inf` block mask.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AttentionGroups, Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::layout::{combine, crop, CombineMode, Layout, PixelRect};
use crate::ops::{attention, attention_masked};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    ClipLike,
    Glyph,
}

/// Embedded prompt for one layer, `T×d_text`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionTokens<S: Scalar = f64> {
    pub layer_index: usize,
    pub tokens: Tensor<S>,
    pub source: TokenSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights<S: Scalar = f64> {
    pub w_q: Tensor<S>,
    pub w_k: Tensor<S>,
    pub w_v: Tensor<S>,
    pub w_out: Tensor<S>,
}

/// Projection weights, one set per head; head outputs are summed.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<S: Scalar = f64> {
    pub heads: Vec<HeadWeights<S>>,
}

impl<S: Scalar> AttentionWeights<S> {
    /// Gaussian init scaled by `1/√fan_in`.
    pub fn random(d_model: usize, d_text: usize, d_head: usize, heads: usize, rng: &mut Rng) -> Self {
        let mut init = |r: usize, c: usize| -> Tensor<S> {
            let std = 1.0 / (r as f64).sqrt();
            rng.normal_tensor::<f64>(&[r, c]).scale(std).cast()
        };
        Self {
            heads: (0..heads)
                .map(|_| HeadWeights {
                    w_q: init(d_model, d_head),
                    w_k: init(d_text, d_head),
                    w_v: init(d_text, d_head),
                    w_out: init(d_head, d_model),
                })
                .collect(),
        }
    }

    fn check(&self, d_model: usize, d_text: usize) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::Configuration("attention needs at least one head".into()));
        }
        for h in &self.heads {
            let (qm, qh) = h.w_q.dims2()?;
            let (kt, kh) = h.w_k.dims2()?;
            let (vt, _) = h.w_v.dims2()?;
            let (oh, om) = h.w_out.dims2()?;
            if qm != d_model || om != d_model || kt != d_text || vt != d_text || qh != kh || oh != h.w_v.shape()[1] {
                return Err(Error::Configuration(format!(
                    "attention weights {:?}/{:?}/{:?}/{:?} inconsistent with d_model={d_model}, d_text={d_text}",
                    h.w_q.shape(),
                    h.w_k.shape(),
                    h.w_v.shape(),
                    h.w_out.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Region tokens ordered by layer index, or a configuration error naming the
/// first layer without tokens.
fn tokens_by_layer<'a, S: Scalar>(
    layout: &Layout,
    region_tokens: &'a [RegionTokens<S>],
) -> Result<Vec<&'a Tensor<S>>> {
    (0..layout.len())
        .map(|i| {
            region_tokens
                .iter()
                .find(|r| r.layer_index == i)
                .map(|r| &r.tokens)
                .ok_or_else(|| Error::Configuration(format!("missing region tokens for layer {i}")))
        })
        .collect()
}

fn flatten_cells<S: Scalar>(t: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w, c) = t.dims3()?;
    t.clone().reshape(&[h * w, c])
}

fn check_inputs<S: Scalar>(
    f: &Tensor<S>,
    tokens: &[&Tensor<S>],
    weights: &AttentionWeights<S>,
) -> Result<(usize, usize, usize)> {
    let (h, w, c) = f.dims3()?;
    let d_text = tokens[0].dims2()?.1;
    for t in tokens {
        if t.dims2()?.1 != d_text {
            return Err(Error::dim("region tokens", tokens[0].shape(), t.shape()));
        }
    }
    weights.check(c, d_text)?;
    Ok((h, w, c))
}

/// Cross attention of `x` (`n×d_model`) against `tokens` summed over heads.
fn region_attend<S: Scalar>(x: &Tensor<S>, tokens: &Tensor<S>, weights: &AttentionWeights<S>) -> Result<Tensor<S>> {
    let mut out: Option<Tensor<S>> = None;
    for head in &weights.heads {
        let q = x.matmul(&head.w_q)?;
        let k = tokens.matmul(&head.w_k)?;
        let v = tokens.matmul(&head.w_v)?;
        let z = attention(&q, &k, &v)?.matmul(&head.w_out)?;
        out = Some(match out {
            None => z,
            Some(acc) => acc.add(&z)?,
        });
    }
    Ok(out.expect("at least one head"))
}

/// Crop → per-region cross attention → z-order combine.
pub fn layout_guided_cross_attention<S: Scalar>(
    f: &Tensor<S>,
    layout: &Layout,
    region_tokens: &[RegionTokens<S>],
    weights: &AttentionWeights<S>,
    mode: CombineMode,
) -> Result<Tensor<S>> {
    let tokens = tokens_by_layer(layout, region_tokens)?;
    let (h, w, c) = check_inputs(f, &tokens, weights)?;
    let mut pieces = Vec::with_capacity(layout.len());
    for (rect, toks) in layout.rects(h, w).into_iter().zip(tokens) {
        let x = crop(f, &rect)?.reshape(&[rect.area(), c])?;
        let z = region_attend(&x, toks, weights)?.reshape(&[rect.height(), rect.width(), c])?;
        pieces.push((z, rect));
    }
    combine(&pieces, h, w, mode)
}

/// Same result as [`layout_guided_cross_attention`], computed in batches of
/// `batch` regions padded to the largest crop and token count in the batch.
pub fn layout_guided_cross_attention_batched<S: Scalar>(
    f: &Tensor<S>,
    layout: &Layout,
    region_tokens: &[RegionTokens<S>],
    weights: &AttentionWeights<S>,
    mode: CombineMode,
    batch: usize,
) -> Result<Tensor<S>> {
    if batch == 0 {
        return Err(Error::Configuration("batch size must be >= 1".into()));
    }
    let tokens = tokens_by_layer(layout, region_tokens)?;
    let (h, w, c) = check_inputs(f, &tokens, weights)?;
    let rects = layout.rects(h, w);
    let mut outputs: Vec<Option<Tensor<S>>> = vec![None; rects.len()];

    let order: Vec<usize> = (0..rects.len()).collect();
    for group in order.chunks(batch) {
        let max_q = group.iter().map(|&i| rects[i].area()).max().expect("non-empty");
        let max_k = group.iter().map(|&i| tokens[i].dims2().map(|d| d.0)).collect::<Result<Vec<_>>>()?;
        let max_k = max_k.into_iter().max().expect("non-empty");
        for &i in group {
            // Pad queries with zero rows and keys with zero rows; padded keys
            // are masked, padded query rows are discarded.
            let x = crop(f, &rects[i])?.reshape(&[rects[i].area(), c])?;
            let n_q = rects[i].area();
            let n_k = tokens[i].dims2()?.0;
            let x_pad = pad_rows(&x, max_q)?;
            let t_pad = pad_rows(tokens[i], max_k)?;
            let mask: Vec<bool> = (0..max_q * max_k).map(|p| p % max_k < n_k).collect();
            let mut acc: Option<Tensor<S>> = None;
            for head in &weights.heads {
                let q = x_pad.matmul(&head.w_q)?;
                let k = t_pad.matmul(&head.w_k)?;
                let v = t_pad.matmul(&head.w_v)?;
                let z = attention_masked(&q, &k, &v, Some(&mask))?.matmul(&head.w_out)?;
                acc = Some(match acc {
                    None => z,
                    Some(a) => a.add(&z)?,
                });
            }
            let z = acc.expect("at least one head");
            let z = Tensor::new(vec![n_q, c], z.data()[..n_q * c].to_vec())?;
            outputs[i] = Some(z.reshape(&[rects[i].height(), rects[i].width(), c])?);
        }
    }
    let pieces: Vec<(Tensor<S>, PixelRect)> = outputs
        .into_iter()
        .zip(rects)
        .map(|(z, r)| (z.expect("every region computed"), r))
        .collect();
    combine(&pieces, h, w, mode)
}

fn pad_rows<S: Scalar>(t: &Tensor<S>, rows: usize) -> Result<Tensor<S>> {
    let (m, n) = t.dims2()?;
    let mut data = t.data().to_vec();
    data.resize(rows.max(m) * n, S::zero());
    Tensor::new(vec![rows.max(m), n], data)
}

/// Full attention of all `H·W` cells against all text tokens with a block
/// mask: a cell may only see the tokens of the layer that owns it (the
/// highest-z layer covering it). Scope: non-background rects pairwise disjoint.
pub fn oracle_masked_attention<S: Scalar>(
    f: &Tensor<S>,
    layout: &Layout,
    region_tokens: &[RegionTokens<S>],
    weights: &AttentionWeights<S>,
) -> Result<Tensor<S>> {
    let tokens = tokens_by_layer(layout, region_tokens)?;
    let (h, w, c) = check_inputs(f, &tokens, weights)?;
    let rects = layout.rects(h, w);
    for i in 1..rects.len() {
        for j in i + 1..rects.len() {
            if rects[i].overlaps(&rects[j]) {
                return Err(Error::OracleScope(format!(
                    "layers {i} and {j} overlap after discretization"
                )));
            }
        }
    }
    let owner = layout.owner_map(h, w);
    let mut block_of_token = Vec::new();
    for (layer, t) in tokens.iter().enumerate() {
        block_of_token.extend(std::iter::repeat_n(layer, t.dims2()?.0));
    }
    let n_k = block_of_token.len();
    let mask: Vec<bool> = owner
        .iter()
        .flat_map(|&o| block_of_token.iter().map(move |&b| b == o))
        .collect();
    let all_tokens = Tensor::vstack(&tokens)?;
    let x = flatten_cells(f)?;
    debug_assert_eq!(mask.len(), h * w * n_k);
    let mut out: Option<Tensor<S>> = None;
    for head in &weights.heads {
        let q = x.matmul(&head.w_q)?;
        let k = all_tokens.matmul(&head.w_k)?;
        let v = all_tokens.matmul(&head.w_v)?;
        let z = attention_masked(&q, &k, &v, Some(&mask))?.matmul(&head.w_out)?;
        out = Some(match out {
            None => z,
            Some(a) => a.add(&z)?,
        });
    }
    out.expect("at least one head").reshape(&[h, w, c])
}

/// Parameter ids of one head inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_out: ParamId,
}

/// Precomputed gather/scatter indices for one layout on one grid.
#[derive(Clone, Debug)]
pub struct RegionPlan {
    pub h: usize,
    pub w: usize,
    pub rects: Vec<PixelRect>,
    cells: Rc<Vec<usize>>,
    query_ranges: Vec<std::ops::Range<usize>>,
    /// For overwrite mode: row of the concatenated region output that each cell takes.
    owner_rows: Rc<Vec<usize>>,
}

impl RegionPlan {
    pub fn new(layout: &Layout, h: usize, w: usize) -> Self {
        let rects = layout.rects(h, w);
        let mut cells = Vec::new();
        let mut query_ranges = Vec::with_capacity(rects.len());
        let mut owner_rows = vec![usize::MAX; h * w];
        for rect in &rects {
            let start = cells.len();
            for (k, cell) in rect.cell_indices(w).enumerate() {
                cells.push(cell);
                owner_rows[cell] = start + k;
            }
            query_ranges.push(start..cells.len());
        }
        Self {
            h,
            w,
            rects,
            cells: Rc::new(cells),
            query_ranges,
            owner_rows: Rc::new(owner_rows),
        }
    }

    /// Whether every cell is covered by some rect.
    pub fn covers_grid(&self) -> bool {
        self.owner_rows.iter().all(|&r| r != usize::MAX)
    }
}

/// Differentiable layout-guided cross attention.
///
/// `x` is the flattened `(H·W)×d_model` feature map and `tokens[i]` the
/// `T_i×d_text` token node of layer `i`. All regions run in one block-diagonal
/// attention call.
pub fn region_attention_node<S: Scalar>(
    graph: &mut Graph<S>,
    store: &ParamStore<S>,
    x: NodeId,
    plan: &RegionPlan,
    tokens: &[NodeId],
    heads: &[HeadParams],
    mode: CombineMode,
) -> Result<NodeId> {
    if tokens.len() != plan.rects.len() {
        return Err(Error::Configuration(format!(
            "{} token sets for {} layers",
            tokens.len(),
            plan.rects.len()
        )));
    }
    if mode == CombineMode::Overwrite && !plan.covers_grid() {
        let cell = plan.owner_rows.iter().position(|&r| r == usize::MAX).expect("uncovered");
        return Err(Error::Coverage {
            row: cell / plan.w,
            col: cell % plan.w,
        });
    }
    let mut key_ranges = Vec::with_capacity(tokens.len());
    let mut offset = 0;
    for &t in tokens {
        let n = graph.value(t).dims2()?.0;
        key_ranges.push(offset..offset + n);
        offset += n;
    }
    let groups = Rc::new(AttentionGroups {
        query_ranges: plan.query_ranges.clone(),
        key_ranges,
    });
    let xs = graph.gather_rows(x, plan.cells.clone())?;
    let all_tokens = graph.concat_rows(tokens)?;
    let mut z: Option<NodeId> = None;
    for head in heads {
        let wq = graph.param(store, head.w_q);
        let wk = graph.param(store, head.w_k);
        let wv = graph.param(store, head.w_v);
        let wo = graph.param(store, head.w_out);
        let q = graph.matmul(xs, wq)?;
        let k = graph.matmul(all_tokens, wk)?;
        let v = graph.matmul(all_tokens, wv)?;
        let o = graph.grouped_attention(q, k, v, groups.clone())?;
        let o = graph.matmul(o, wo)?;
        z = Some(match z {
            None => o,
            Some(acc) => graph.add(acc, o)?,
        });
    }
    let z = z.ok_or_else(|| Error::Configuration("attention needs at least one head".into()))?;
    match mode {
        CombineMode::Overwrite => graph.gather_rows(z, plan.owner_rows.clone()),
        CombineMode::Sum => graph.scatter_add_rows(z, plan.cells.clone(), plan.h * plan.w),
    }
}

/// Query–key pair counts for grouped versus full attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub grouped_pairs: u64,
    pub full_pairs: u64,
    pub ratio: f64,
}

/// Cost for explicit `(rect, token count)` regions on an `h×w` grid.
pub fn attention_cost_regions(regions: &[(PixelRect, usize)], h: usize, w: usize) -> CostReport {
    let grouped: u64 = regions.iter().map(|(r, t)| (r.area() * t) as u64).sum();
    let total_tokens: u64 = regions.iter().map(|(_, t)| *t as u64).sum();
    let full = (h * w) as u64 * total_tokens;
    CostReport {
        grouped_pairs: grouped,
        full_pairs: full,
        ratio: if grouped == 0 { 0.0 } else { full as f64 / grouped as f64 },
    }
}

pub fn attention_cost<S: Scalar>(
    layout: &Layout,
    region_tokens: &[RegionTokens<S>],
    h: usize,
    w: usize,
) -> Result<CostReport> {
    let tokens = tokens_by_layer(layout, region_tokens)?;
    let regions: Vec<(PixelRect, usize)> = layout
        .rects(h, w)
        .into_iter()
        .zip(tokens)
        .map(|(r, t)| Ok((r, t.dims2()?.0)))
        .collect::<Result<_>>()?;
    Ok(attention_cost_regions(&regions, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Layer, NormalizedBBox};

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> NormalizedBBox {
        NormalizedBBox::new(x1, y1, x2, y2).unwrap()
    }

    fn setup(layout: &Layout, d: usize, seed: u64) -> (Tensor<f64>, Vec<RegionTokens<f64>>, AttentionWeights<f64>) {
        let mut rng = Rng::new(seed);
        let f = rng.normal_tensor(&[6, 8, d]);
        let toks = (0..layout.len())
            .map(|i| RegionTokens {
                layer_index: i,
                tokens: rng.normal_tensor(&[1 + i % 3, 5]),
                source: TokenSource::ClipLike,
            })
            .collect();
        let w = AttentionWeights::random(d, 5, 4, 1, &mut rng);
        (f, toks, w)
    }

    fn two_region_layout() -> Layout {
        Layout::new(
            80,
            60,
            vec![
                Layer::background("bg"),
                Layer::non_text(1, bb(0.0, 0.0, 0.5, 0.5), "a"),
                Layer::text(2, bb(0.5, 0.5, 1.0, 1.0), "b", "txt", "en"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_layer_equals_plain_cross_attention() {
        let layout = Layout::new(10, 10, vec![Layer::background("bg")]).unwrap();
        let (f, toks, w) = setup(&layout, 3, 1);
        let out = layout_guided_cross_attention(&f, &layout, &toks, &w, CombineMode::Overwrite).unwrap();
        let x = f.clone().reshape(&[48, 3]).unwrap();
        let direct = region_attend(&x, &toks[0].tokens, &w).unwrap().reshape(&[6, 8, 3]).unwrap();
        assert_eq!(out, direct);
    }

    #[test]
    fn disjoint_layout_matches_oracle() {
        let layout = two_region_layout();
        let (f, toks, w) = setup(&layout, 3, 2);
        let a = layout_guided_cross_attention(&f, &layout, &toks, &w, CombineMode::Overwrite).unwrap();
        let b = oracle_masked_attention(&f, &layout, &toks, &w).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-10);
    }

    #[test]
    fn oracle_rejects_overlap() {
        let layout = Layout::new(
            10,
            10,
            vec![
                Layer::background("bg"),
                Layer::non_text(1, bb(0.0, 0.0, 0.6, 0.6), "a"),
                Layer::non_text(2, bb(0.4, 0.4, 1.0, 1.0), "b"),
            ],
        )
        .unwrap();
        let (f, toks, w) = setup(&layout, 3, 3);
        assert!(matches!(
            oracle_masked_attention(&f, &layout, &toks, &w),
            Err(Error::OracleScope(_))
        ));
    }

    #[test]
    fn one_token_region_copies_value_row() {
        let layout = Layout::new(10, 10, vec![Layer::background("bg")]).unwrap();
        let (f, mut toks, w) = setup(&layout, 3, 4);
        toks[0].tokens = Tensor::from_rows(&[vec![0.5, -1.0, 2.0, 0.0, 1.0]]);
        let out = oracle_masked_attention(&f, &layout, &toks, &w).unwrap();
        let h = &w.heads[0];
        let expected = toks[0].tokens.matmul(&h.w_v).unwrap().matmul(&h.w_out).unwrap();
        for cell in 0..48 {
            for k in 0..3 {
                assert!((out.data()[cell * 3 + k] - expected.data()[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_tokens_name_the_layer() {
        let layout = two_region_layout();
        let (f, mut toks, w) = setup(&layout, 3, 5);
        toks.remove(1);
        match layout_guided_cross_attention(&f, &layout, &toks, &w, CombineMode::Overwrite) {
            Err(Error::Configuration(msg)) => assert!(msg.contains("layer 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn batched_padding_is_invisible() {
        let layout = two_region_layout();
        let (f, toks, w) = setup(&layout, 3, 6);
        let seq = layout_guided_cross_attention(&f, &layout, &toks, &w, CombineMode::Overwrite).unwrap();
        for batch in 1..=4 {
            let b = layout_guided_cross_attention_batched(&f, &layout, &toks, &w, CombineMode::Overwrite, batch)
                .unwrap();
            assert!(seq.max_abs_diff(&b).unwrap() <= 1e-12, "batch {batch}");
        }
    }

    #[test]
    fn graph_route_matches_direct_route_in_both_modes() {
        let layout = two_region_layout();
        let mut rng = Rng::new(7);
        let f: Tensor<f64> = rng.normal_tensor(&[6, 8, 3]);
        let mut store = ParamStore::new();
        let mut heads = Vec::new();
        let mut weights = AttentionWeights { heads: Vec::new() };
        for hi in 0..2 {
            let hw = AttentionWeights::<f64>::random(3, 5, 4, 1, &mut rng).heads.remove(0);
            heads.push(HeadParams {
                w_q: store.insert(format!("q{hi}"), hw.w_q.clone()),
                w_k: store.insert(format!("k{hi}"), hw.w_k.clone()),
                w_v: store.insert(format!("v{hi}"), hw.w_v.clone()),
                w_out: store.insert(format!("o{hi}"), hw.w_out.clone()),
            });
            weights.heads.push(hw);
        }
        let toks: Vec<RegionTokens<f64>> = (0..3)
            .map(|i| RegionTokens {
                layer_index: i,
                tokens: rng.normal_tensor(&[2 + i, 5]),
                source: TokenSource::Glyph,
            })
            .collect();
        let plan = RegionPlan::new(&layout, 6, 8);
        for mode in [CombineMode::Overwrite, CombineMode::Sum] {
            let mut g = Graph::new();
            let x = g.constant(f.clone().reshape(&[48, 3]).unwrap());
            let t: Vec<NodeId> = toks.iter().map(|r| g.constant(r.tokens.clone())).collect();
            let out = region_attention_node(&mut g, &store, x, &plan, &t, &heads, mode).unwrap();
            let direct = layout_guided_cross_attention(&f, &layout, &toks, &weights, mode).unwrap();
            let got = g.value(out).clone().reshape(&[6, 8, 3]).unwrap();
            assert!(got.max_abs_diff(&direct).unwrap() <= 1e-12, "{mode:?}");
        }
    }

    #[test]
    fn cost_examples() {
        let layout = Layout::new(10, 10, vec![Layer::background("bg")]).unwrap();
        let toks = vec![RegionTokens {
            layer_index: 0,
            tokens: Tensor::<f64>::zeros(&[7, 2]),
            source: TokenSource::ClipLike,
        }];
        let r = attention_cost(&layout, &toks, 4, 4).unwrap();
        assert_eq!(r.ratio, 1.0);
        // Ten equal vertical strips with equal token counts.
        let strips: Vec<(PixelRect, usize)> = (0..10)
            .map(|i| (PixelRect { r0: 0, r1: 4, c0: 2 * i, c1: 2 * i + 2 }, 6))
            .collect();
        let r = attention_cost_regions(&strips, 4, 20);
        assert_eq!(r.ratio, 10.0);
        assert_eq!(r.grouped_pairs, 10 * 8 * 6);
    }
}
