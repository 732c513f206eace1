//! Straight-alpha RGBA compositing and letterbox resizing.

use image::imageops::{self, FilterType};
use image::{Rgba, RgbaImage};

use densegen_core::PixelRect;

/// `src` over `dst` for one pixel, straight (non-premultiplied) alpha.
pub fn over(src: Rgba<u8>, dst: Rgba<u8>) -> Rgba<u8> {
    let sa = f64::from(src[3]) / 255.0;
    let da = f64::from(dst[3]) / 255.0;
    let oa = sa + da * (1.0 - sa);
    if oa <= 0.0 {
        return Rgba([0, 0, 0, 0]);
    }
    let mut out = [0u8; 4];
    for k in 0..3 {
        let c = (f64::from(src[k]) * sa + f64::from(dst[k]) * da * (1.0 - sa)) / oa;
        out[k] = c.round().clamp(0.0, 255.0) as u8;
    }
    out[3] = (oa * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgba(out)
}

/// Composites `layer` onto `canvas` with its top-left corner at `rect`'s origin.
/// Pixels falling outside the canvas are dropped.
pub fn draw_over(canvas: &mut RgbaImage, layer: &RgbaImage, rect: &PixelRect) {
    let (cw, ch) = canvas.dimensions();
    for (x, y, p) in layer.enumerate_pixels() {
        let (cx, cy) = (rect.c0 as u32 + x, rect.r0 as u32 + y);
        if cx < cw && cy < ch && p[3] > 0 {
            let dst = *canvas.get_pixel(cx, cy);
            canvas.put_pixel(cx, cy, over(*p, dst));
        }
    }
}

/// Aspect-preserving fit of `img` into `width×height`, centered, padded with
/// transparent pixels. Same-size input is returned unchanged.
pub fn letterbox(img: &RgbaImage, width: u32, height: u32) -> RgbaImage {
    let (w, h) = img.dimensions();
    if (w, h) == (width, height) {
        return img.clone();
    }
    let mut out = RgbaImage::new(width, height);
    if w == 0 || h == 0 || width == 0 || height == 0 {
        return out;
    }
    let scale = (f64::from(width) / f64::from(w)).min(f64::from(height) / f64::from(h));
    let nw = ((f64::from(w) * scale).round() as u32).clamp(1, width);
    let nh = ((f64::from(h) * scale).round() as u32).clamp(1, height);
    let resized = if (nw, nh) == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, nw, nh, FilterType::Triangle)
    };
    imageops::replace(&mut out, &resized, i64::from((width - nw) / 2), i64::from((height - nh) / 2));
    out
}
