use densegen_core::{Layer, Layout, NormalizedBBox};
use densegen_eval::lgsr::lgsr_from_scores;
use densegen_eval::{occlusion_crop, spelling_precision, Language};
use image::{Rgba, RgbaImage};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-z]{1,6}", 0..8)
}

fn bbox() -> impl Strategy<Value = NormalizedBBox> {
    (0u32..19, 0u32..19, 1u32..20, 1u32..20).prop_map(|(x, y, w, h)| {
        let f = |v: u32| f64::from(v) / 20.0;
        NormalizedBBox::new(f(x), f(y), f((x + w).min(20)), f((y + h).min(20))).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn precision_bounds_and_fixed_points(r in words(), h in words()) {
        let (r, h) = (r.join(" "), h.join(" "));
        let p = spelling_precision(&r, &h, Language::En);
        prop_assert!((0.0..=1.0).contains(&p));
        if !r.is_empty() {
            prop_assert_eq!(spelling_precision(&r, &r, Language::En), 1.0);
            let upper = r.to_uppercase();
            prop_assert_eq!(spelling_precision(&r, &upper, Language::Fr), 1.0);
            let disjoint: String = h.split(' ').map(|w| format!("{w}0")).collect::<Vec<_>>().join(" ");
            prop_assert_eq!(spelling_precision(&r, &disjoint, Language::En), 0.0);
        }
    }

    #[test]
    fn lgsr_monotone_in_threshold(scores in prop::collection::vec(prop::option::weighted(0.9, 0u8..=10), 1..20), t in 0u8..10) {
        let lo = lgsr_from_scores(&scores, t).unwrap();
        let hi = lgsr_from_scores(&scores, t + 1).unwrap();
        prop_assert!(hi <= lo);
    }

    #[test]
    fn masked_pixels_equal_union_of_higher_rects(boxes in prop::collection::vec(bbox(), 1..5), target in 0usize..5) {
        let mut layers = vec![Layer::background("bg")];
        for (i, b) in boxes.iter().enumerate() {
            layers.push(Layer::non_text(i + 1, *b, "x"));
        }
        let target = target % layers.len();
        let layout = Layout::new(40, 20, layers).unwrap();
        let img = RgbaImage::from_pixel(40, 20, Rgba([1, 2, 3, 255]));
        let crop = occlusion_crop(&img, &layout, target).unwrap();
        // Oracle: outward rounding with a tolerance for representation error.
        let (fl, ce) = (|v: f64| (v + 1e-9).floor() as usize, |v: f64| (v - 1e-9).ceil() as usize);
        let cover = |b: &NormalizedBBox, x: usize, y: usize| {
            let (c0, c1) = (fl(b.x1 * 40.0), ce(b.x2 * 40.0));
            let (r0, r1) = (fl(b.y1 * 20.0), ce(b.y2 * 20.0));
            (c0..c1).contains(&x) && (r0..r1).contains(&y)
        };
        let t = &layout.layers[target].bbox;
        let (ox, oy) = (fl(t.x1 * 40.0), fl(t.y1 * 20.0));
        let mut expected = 0;
        for y in 0..20 {
            for x in 0..40 {
                if cover(t, x, y) && layout.layers[target + 1..].iter().any(|l| cover(&l.bbox, x, y)) {
                    expected += 1;
                    prop_assert_eq!(crop.get_pixel((x - ox) as u32, (y - oy) as u32)[3], 0);
                }
            }
        }
        prop_assert_eq!(crop.pixels().filter(|p| p[3] == 0).count(), expected);
    }
}
