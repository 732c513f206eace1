//! Set-of-Mark replica: each layer's rect outlined and numbered in one color.

use image::{Rgba, RgbaImage};

use densegen_core::{Layout, PixelRect};

use crate::crop::{canvas_rects, check_canvas};
use crate::error::Result;

/// Box colors, reused cyclically by layer index.
pub const MARK_COLORS: [Rgba<u8>; 10] = [
    Rgba([230, 25, 75, 255]),
    Rgba([60, 180, 75, 255]),
    Rgba([255, 225, 25, 255]),
    Rgba([0, 130, 200, 255]),
    Rgba([245, 130, 48, 255]),
    Rgba([145, 30, 180, 255]),
    Rgba([70, 240, 240, 255]),
    Rgba([240, 50, 230, 255]),
    Rgba([210, 245, 60, 255]),
    Rgba([0, 128, 128, 255]),
];

// 3x5 digits, one row per entry, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MarkBox {
    pub index: usize,
    pub rect: PixelRect,
    pub color: Rgba<u8>,
}

pub fn mark_color(index: usize) -> Rgba<u8> {
    MARK_COLORS[index % MARK_COLORS.len()]
}

/// One box per layer, in z-order.
pub fn mark_boxes(layout: &Layout) -> Vec<MarkBox> {
    canvas_rects(layout)
        .into_iter()
        .enumerate()
        .map(|(index, rect)| MarkBox {
            index,
            rect,
            color: mark_color(index),
        })
        .collect()
}

fn put(img: &mut RgbaImage, x: usize, y: usize, c: Rgba<u8>) {
    if (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn outline(img: &mut RgbaImage, r: &PixelRect, c: Rgba<u8>) {
    if r.area() == 0 {
        return;
    }
    for x in r.c0..r.c1 {
        put(img, x, r.r0, c);
        put(img, x, r.r1 - 1, c);
    }
    for y in r.r0..r.r1 {
        put(img, r.c0, y, c);
        put(img, r.c1 - 1, y, c);
    }
}

fn label(img: &mut RgbaImage, x0: usize, y0: usize, n: usize, c: Rgba<u8>) {
    for (k, ch) in n.to_string().bytes().enumerate() {
        let glyph = DIGITS[usize::from(ch - b'0')];
        for (dy, row) in glyph.iter().enumerate() {
            for dx in 0..3 {
                if row >> (2 - dx) & 1 == 1 {
                    put(img, x0 + k * 4 + dx, y0 + dy, c);
                }
            }
        }
    }
}

/// Copy of `image` with every layer box drawn bottom to top, each labelled
/// with its index just inside its top-left corner.
pub fn annotate_som(image: &RgbaImage, layout: &Layout) -> Result<RgbaImage> {
    check_canvas(image, layout)?;
    let mut out = image.clone();
    for b in mark_boxes(layout) {
        outline(&mut out, &b.rect, b.color);
        label(&mut out, b.rect.c0 + 2, b.rect.r0 + 2, b.index, b.color);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use densegen_core::{Layer, NormalizedBBox};

    fn layout(n: usize) -> Layout {
        let mut layers = vec![Layer::background("bg")];
        for i in 1..n {
            let x = (i % 4) as f64 * 0.25;
            let y = (i / 4 % 4) as f64 * 0.25;
            layers.push(Layer::non_text(i, NormalizedBBox::new(x, y, x + 0.25, y + 0.25).unwrap(), "b"));
        }
        Layout::new(160, 160, layers).unwrap()
    }

    #[test]
    fn one_box_per_layer_at_discretized_rects() {
        let l = layout(13);
        let boxes = mark_boxes(&l);
        assert_eq!(boxes.len(), 13);
        assert_eq!(boxes[0].rect, PixelRect::full(160, 160));
        assert_eq!(boxes[5].rect, PixelRect { r0: 40, r1: 80, c0: 40, c1: 80 });
        assert_eq!(boxes[10].color, boxes[0].color);
        assert_ne!(boxes[1].color, boxes[0].color);
    }

    #[test]
    fn outlines_land_on_rect_borders() {
        let l = layout(6);
        let img = RgbaImage::from_pixel(160, 160, Rgba([0, 0, 0, 255]));
        let out = annotate_som(&img, &l).unwrap();
        let b = mark_boxes(&l)[5];
        assert_eq!(out.get_pixel(b.rect.c1 as u32 - 1, b.rect.r1 as u32 - 1), &b.color);
        // The label "5" starts with a full top row.
        assert_eq!(out.get_pixel(b.rect.c0 as u32 + 2, b.rect.r0 as u32 + 2), &b.color);
        // Interior far from the label stays untouched.
        assert_eq!(out.get_pixel(b.rect.c0 as u32 + 20, b.rect.r0 as u32 + 20), &Rgba([0, 0, 0, 255]));
        assert_eq!(annotate_som(&img, &l).unwrap(), out);
    }
}
