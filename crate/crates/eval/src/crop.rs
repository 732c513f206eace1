//! Per-layer crops with occluding upper layers masked out.

use image::{Rgba, RgbaImage};

use densegen_core::layout::discretize;
use densegen_core::{Layout, PixelRect};

use crate::error::{Error, Result};

/// Layer rects in canvas pixels.
pub fn canvas_rects(layout: &Layout) -> Vec<PixelRect> {
    layout
        .layers
        .iter()
        .map(|l| discretize(&l.bbox, layout.canvas_height as usize, layout.canvas_width as usize))
        .collect()
}

pub(crate) fn check_canvas(image: &RgbaImage, layout: &Layout) -> Result<()> {
    if image.dimensions() != (layout.canvas_width, layout.canvas_height) {
        return Err(Error::Validation(format!(
            "image is {:?}, layout canvas is {}x{}",
            image.dimensions(),
            layout.canvas_width,
            layout.canvas_height
        )));
    }
    Ok(())
}

/// Indices of higher layers whose rect overlaps layer `index`.
pub fn occluders(layout: &Layout, index: usize) -> Vec<usize> {
    let rects = canvas_rects(layout);
    (index + 1..rects.len()).filter(|&j| rects[j].overlaps(&rects[index])).collect()
}

/// Crop of layer `index`'s rect in which every pixel under a higher layer's
/// rect is fully transparent.
pub fn occlusion_crop(image: &RgbaImage, layout: &Layout, index: usize) -> Result<RgbaImage> {
    check_canvas(image, layout)?;
    let layer = layout
        .layers
        .get(index)
        .ok_or_else(|| Error::Validation(format!("layer {index} of {}", layout.len())))?;
    if layer.is_text() {
        return Err(Error::Scope(format!(
            "layer {index} is visual text; it is scored by spelling precision"
        )));
    }
    let rects = canvas_rects(layout);
    let r = rects[index];
    let above = &rects[index + 1..];
    Ok(RgbaImage::from_fn(r.width() as u32, r.height() as u32, |x, y| {
        let (row, col) = (r.r0 + y as usize, r.c0 + x as usize);
        if above.iter().any(|o| o.contains(row, col)) {
            Rgba([0, 0, 0, 0])
        } else {
            *image.get_pixel(col as u32, row as u32)
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use densegen_core::{Layer, NormalizedBBox};

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> NormalizedBBox {
        NormalizedBBox::new(x1, y1, x2, y2).unwrap()
    }

    fn layout() -> Layout {
        Layout::new(
            40,
            20,
            vec![
                Layer::background("white background"),
                Layer::non_text(1, bb(0.0, 0.0, 0.5, 1.0), "red block"),
                Layer::non_text(2, bb(0.25, 0.0, 0.5, 0.5), "blue block"),
                Layer::text(3, bb(0.6, 0.5, 0.9, 0.9), "text", "Hi", "en"),
            ],
        )
        .unwrap()
    }

    fn canvas() -> RgbaImage {
        RgbaImage::from_fn(40, 20, |x, y| Rgba([x as u8, y as u8, 7, 255]))
    }

    fn clear(img: &RgbaImage) -> usize {
        img.pixels().filter(|p| p[3] == 0).count()
    }

    #[test]
    fn topmost_non_text_layer_is_unmasked() {
        let c = occlusion_crop(&canvas(), &layout(), 2).unwrap();
        assert_eq!(c.dimensions(), (10, 10));
        assert_eq!(clear(&c), 0);
        assert_eq!(c.get_pixel(0, 0), &Rgba([10, 0, 7, 255]));
    }

    #[test]
    fn half_occluded_masks_intersection_area() {
        // Layer 1 is 20x20; layer 2 covers its 10x10 top-right quarter.
        let c = occlusion_crop(&canvas(), &layout(), 1).unwrap();
        assert_eq!(clear(&c), 10 * 10);
        assert_eq!(c.get_pixel(15, 5)[3], 0);
        assert_eq!(c.get_pixel(5, 15), &Rgba([5, 15, 7, 255]));
    }

    #[test]
    fn fully_occluded_is_all_clear() {
        let mut l = layout();
        l.layers[2].bbox = bb(0.0, 0.0, 0.6, 1.0);
        let c = occlusion_crop(&canvas(), &l, 1).unwrap();
        assert_eq!(clear(&c), 20 * 20);
    }

    #[test]
    fn text_layer_is_scope_error() {
        assert!(matches!(occlusion_crop(&canvas(), &layout(), 3), Err(Error::Scope(_))));
        assert!(matches!(occlusion_crop(&canvas(), &layout(), 9), Err(Error::Validation(_))));
    }

    #[test]
    fn occluder_lists() {
        assert_eq!(occluders(&layout(), 0), vec![1, 2, 3]);
        assert_eq!(occluders(&layout(), 1), vec![2]);
        assert!(occluders(&layout(), 2).is_empty());
    }
}
