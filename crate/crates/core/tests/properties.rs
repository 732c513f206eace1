use densegen_core::autodiff::Graph;
use densegen_core::diffusion::{encode_regions, hybrid_loss, hybrid_loss_node, Denoiser, DenoiserConfig};
use densegen_core::encoders::EncoderConfig;
use densegen_core::layout::{load_manifest, text_mask, LATENT_DOWNSCALE};
use densegen_core::region_attention::{
    attention_cost, layout_guided_cross_attention, oracle_masked_attention, AttentionWeights, RegionPlan,
    RegionTokens, TokenSource,
};
use densegen_core::{CombineMode, Layer, Layout, NormalizedBBox, PixelRect, Rng, Tensor};
use proptest::prelude::*;

fn grid_box(r0: usize, r1: usize, c0: usize, c1: usize, h: usize, w: usize) -> NormalizedBBox {
    let (h, w) = (h as f64, w as f64);
    NormalizedBBox::new(c0 as f64 / w, r0 as f64 / h, c1 as f64 / w, r1 as f64 / h).unwrap()
}

/// Up to `max` pairwise-disjoint foreground rects on an `h×w` grid, by rejection.
fn disjoint_layout(rng: &mut Rng, h: usize, w: usize, max: usize) -> Layout {
    let mut rects: Vec<PixelRect> = Vec::new();
    let want = rng.range_inclusive(1, max);
    for _ in 0..50 {
        if rects.len() == want {
            break;
        }
        let (r0, c0) = (rng.range_inclusive(0, h - 1), rng.range_inclusive(0, w - 1));
        let (r1, c1) = (rng.range_inclusive(r0 + 1, h), rng.range_inclusive(c0 + 1, w));
        let r = PixelRect { r0, r1, c0, c1 };
        if rects.iter().all(|o| !o.overlaps(&r)) {
            rects.push(r);
        }
    }
    let mut layers = vec![Layer::background("bg")];
    for (i, r) in rects.iter().enumerate() {
        layers.push(Layer::non_text(i + 1, grid_box(r.r0, r.r1, r.c0, r.c1, h, w), "x"));
    }
    Layout::new((w * 32) as u32, (h * 32) as u32, layers).unwrap()
}

fn random_tokens(rng: &mut Rng, layout: &Layout, d_text: usize, max_tokens: usize) -> Vec<RegionTokens<f64>> {
    (0..layout.len())
        .map(|i| {
            let n = rng.range_inclusive(1, max_tokens);
            RegionTokens {
                layer_index: i,
                tokens: rng.normal_tensor(&[n, d_text]),
                source: TokenSource::ClipLike,
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grouped_attention_equals_masked_full_attention(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (h, w) = (rng.range_inclusive(1, 12), rng.range_inclusive(1, 12));
        let layout = disjoint_layout(&mut rng, h, w, 5);
        let (d, dt) = (rng.range_inclusive(2, 8), rng.range_inclusive(2, 8));
        let tokens = random_tokens(&mut rng, &layout, dt, 8);
        let weights = AttentionWeights::random(d, dt, rng.range_inclusive(2, 6), rng.range_inclusive(1, 2), &mut rng);
        let f: Tensor<f64> = rng.normal_tensor(&[h, w, d]);
        let ours = layout_guided_cross_attention(&f, &layout, &tokens, &weights, CombineMode::Overwrite).unwrap();
        let oracle = oracle_masked_attention(&f, &layout, &tokens, &weights).unwrap();
        prop_assert!(ours.max_abs_diff(&oracle).unwrap() <= 1e-10);
    }

    #[test]
    fn region_tokens_only_reach_their_own_cells(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (h, w) = (rng.range_inclusive(2, 8), rng.range_inclusive(2, 8));
        let layout = disjoint_layout(&mut rng, h, w, 4);
        let d = rng.range_inclusive(2, 6);
        let mut tokens = random_tokens(&mut rng, &layout, 4, 5);
        let weights = AttentionWeights::random(d, 4, 3, 1, &mut rng);
        let f: Tensor<f64> = rng.normal_tensor(&[h, w, d]);
        let before = layout_guided_cross_attention(&f, &layout, &tokens, &weights, CombineMode::Overwrite).unwrap();
        let target = rng.range_inclusive(1, layout.len() - 1);
        let shape = tokens[target].tokens.shape().to_vec();
        tokens[target].tokens = rng.normal_tensor(&shape);
        let after = layout_guided_cross_attention(&f, &layout, &tokens, &weights, CombineMode::Overwrite).unwrap();
        let rect = layout.rects(h, w)[target];
        for r in 0..h {
            for c in 0..w {
                if !rect.contains(r, c) {
                    for k in 0..d {
                        let i = (r * w + c) * d + k;
                        prop_assert_eq!(before.data()[i].to_bits(), after.data()[i].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn unit_beta_is_plain_mse(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (h, w, c) = (rng.range_inclusive(1, 6), rng.range_inclusive(1, 6), rng.range_inclusive(1, 4));
        let a: Tensor<f64> = rng.normal_tensor(&[h, w, c]);
        let b: Tensor<f64> = rng.normal_tensor(&[h, w, c]);
        let mask = Tensor::new(vec![h, w], (0..h * w).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect()).unwrap();
        let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
        prop_assert!((hybrid_loss(&a, &b, &mask, 1.0).unwrap() - mse).abs() <= 1e-12);
    }
}

/// Loss of the whole denoiser on one noisy latent, built in a fresh graph.
fn model_loss(
    den: &Denoiser<f64>,
    z: &Tensor<f64>,
    eps: &Tensor<f64>,
    mask: &Tensor<f64>,
    plan: &RegionPlan,
    tokens: &[RegionTokens<f64>],
    beta: f64,
) -> (f64, Graph<f64>, densegen_core::autodiff::NodeId) {
    let mut g = Graph::new();
    let out = den.forward_node(&mut g, z, 137.0, 1000, plan, tokens).unwrap();
    let loss = hybrid_loss_node(&mut g, eps, out, mask, beta).unwrap();
    (g.value(loss).data()[0], g, loss)
}

#[test]
fn full_model_gradient_matches_central_differences() {
    let mut worst: f64 = 0.0;
    for case in 0..60u64 {
        let mut rng = Rng::new(1000 + case);
        let (h, w) = (rng.range_inclusive(2, 4), rng.range_inclusive(2, 4));
        let mut layout = disjoint_layout(&mut rng, h, w, 2);
        // One text layer so the glyph mapper sits on the gradient path.
        let last = layout.len() - 1;
        let l = &layout.layers[last];
        layout.layers[last] = Layer::text(last, l.bbox, "caption", "ab", "en");
        let enc = EncoderConfig { d_text: rng.range_inclusive(2, 4), ..EncoderConfig::default() };
        let cfg = DenoiserConfig {
            height: h,
            width: w,
            channels: rng.range_inclusive(3, 4),
            blocks: rng.range_inclusive(1, 2),
            d_model: rng.range_inclusive(2, 4),
            d_head: rng.range_inclusive(2, 3),
            heads: rng.range_inclusive(1, 2),
            d_text: enc.d_text,
            d_time: rng.range_inclusive(2, 4),
            combine: if rng.bernoulli(0.5) { CombineMode::Overwrite } else { CombineMode::Sum },
            ..DenoiserConfig::default()
        };
        let mut den = Denoiser::<f64>::new(cfg.clone(), case).unwrap();
        // Perturb every weight so zero-initialised ones still carry curvature.
        for id in den.params.ids().collect::<Vec<_>>() {
            for v in den.params.get_mut(id).data_mut() {
                *v += 0.3 * rng.normal();
            }
        }
        let tokens = encode_regions::<f64>(&layout, &enc);
        let plan = RegionPlan::new(&layout, h, w);
        let z: Tensor<f64> = rng.normal_tensor(&[h, w, cfg.channels]);
        let eps: Tensor<f64> = rng.normal_tensor(&[h, w, cfg.channels]);
        let mask = text_mask::<f64>(&layout, h, w);
        let beta = rng.uniform(1.0, 5.0);

        let (_, g, loss) = model_loss(&den, &z, &eps, &mask, &plan, &tokens, beta);
        let grads = g.backward(loss, &den.params).unwrap();
        let step = 1e-5;
        let (mut diff2, mut norm_a, mut norm_n) = (0.0f64, 0.0f64, 0.0f64);
        for id in den.params.ids().collect::<Vec<_>>() {
            for i in 0..den.params.get(id).len() {
                let orig = den.params.get(id).data()[i];
                den.params.get_mut(id).data_mut()[i] = orig + step;
                let plus = model_loss(&den, &z, &eps, &mask, &plan, &tokens, beta).0;
                den.params.get_mut(id).data_mut()[i] = orig - step;
                let minus = model_loss(&den, &z, &eps, &mask, &plan, &tokens, beta).0;
                den.params.get_mut(id).data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let analytic = grads.get(id).unwrap().data()[i];
                diff2 += (analytic - numeric).powi(2);
                norm_a += analytic * analytic;
                norm_n += numeric * numeric;
            }
        }
        let rel = diff2.sqrt() / norm_a.sqrt().max(norm_n.sqrt()).max(1e-12);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "worst relative gradient error {worst:e}");
}

#[test]
fn dense_fixture_cuts_attention_cost() {
    let layout = load_manifest(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/dense_30_layers.json")).unwrap();
    assert_eq!(layout.len(), 30);
    let (h, w) = layout.latent_dims(LATENT_DOWNSCALE);
    let tokens = encode_regions::<f64>(&layout, &EncoderConfig::default());
    let cost = attention_cost(&layout, &tokens, h, w).unwrap();
    // Oracle: count query-key pairs cell by cell.
    let rects = layout.rects(h, w);
    let counts: Vec<u64> = tokens.iter().map(|t| t.tokens.shape()[0] as u64).collect();
    let mut grouped = 0u64;
    for r in 0..h {
        for c in 0..w {
            grouped += rects.iter().zip(&counts).filter(|(rect, _)| rect.contains(r, c)).map(|(_, t)| t).sum::<u64>();
        }
    }
    assert_eq!(cost.grouped_pairs, grouped);
    assert_eq!(cost.full_pairs, (h * w) as u64 * counts.iter().sum::<u64>());
    assert!(cost.ratio >= 5.0, "ratio {}", cost.ratio);
}
