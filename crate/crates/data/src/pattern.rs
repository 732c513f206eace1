//! Machine-readable stand-in for rendered text.
//!
//! A text box is split into vertical blocks, one per byte, separated by
//! single magenta columns. Each block carries eight horizontal bands (most
//! significant bit on top), light for a set bit and dark for a clear one.
//! The leftover width on the right is filled with separator color.

use image::{Rgba, RgbaImage};

use densegen_core::PixelRect;

pub const BIT_ON: Rgba<u8> = Rgba([235, 235, 235, 255]);
pub const BIT_OFF: Rgba<u8> = Rgba([20, 20, 20, 255]);
pub const SEPARATOR: Rgba<u8> = Rgba([255, 0, 255, 255]);

const BANDS: usize = 8;

fn is_separator(p: &Rgba<u8>) -> bool {
    p[0] > 200 && p[1] < 60 && p[2] > 200
}

/// Bytes that fit in a box `width` pixels wide.
pub fn capacity(rect: &PixelRect) -> usize {
    if rect.height() < BANDS {
        0
    } else {
        rect.width().saturating_sub(1) / 2
    }
}

/// Paints `text` into `rect` (pixel coordinates: rows `r0..r1`, columns
/// `c0..c1`). Bytes beyond the capacity are dropped; returns how many were drawn.
pub fn render(img: &mut RgbaImage, rect: &PixelRect, text: &str) -> usize {
    let bytes: Vec<u8> = text.bytes().take(capacity(rect)).collect();
    for r in rect.r0..rect.r1 {
        for c in rect.c0..rect.c1 {
            img.put_pixel(c as u32, r as u32, SEPARATOR);
        }
    }
    let n = bytes.len();
    if n == 0 {
        return 0;
    }
    let block = (rect.width() - (n + 1)) / n;
    let h = rect.height();
    for (i, &byte) in bytes.iter().enumerate() {
        let c0 = rect.c0 + 1 + i * (block + 1);
        for band in 0..BANDS {
            let bit = byte >> (BANDS - 1 - band) & 1 == 1;
            let color = if bit { BIT_ON } else { BIT_OFF };
            for r in rect.r0 + band * h / BANDS..rect.r0 + (band + 1) * h / BANDS {
                for c in c0..c0 + block {
                    img.put_pixel(c as u32, r as u32, color);
                }
            }
        }
    }
    n
}

/// Reads back the bytes painted by [`render`]. Unreadable blocks decode as `?`.
pub fn decode(img: &RgbaImage, rect: &PixelRect) -> String {
    if rect.height() < BANDS || rect.width() == 0 {
        return String::new();
    }
    let mid_row = rect.r0 + rect.height() / 2;
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for c in rect.c0..rect.c1 {
        let sep = is_separator(img.get_pixel(c as u32, mid_row as u32));
        match (sep, start) {
            (false, None) => start = Some(c),
            (true, Some(s)) => {
                blocks.push((s, c));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        blocks.push((s, rect.c1));
    }
    let h = rect.height();
    let bytes: Vec<u8> = blocks
        .iter()
        .map(|&(c0, c1)| {
            let col = ((c0 + c1) / 2) as u32;
            (0..BANDS).fold(0u8, |acc, band| {
                let row = rect.r0 + (2 * band + 1) * h / (2 * BANDS);
                let p = img.get_pixel(col, row as u32);
                let lum = (u32::from(p[0]) + u32::from(p[1]) + u32::from(p[2])) / 3;
                acc << 1 | u8::from(lum > 127)
            })
        })
        .collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(r0: usize, r1: usize, c0: usize, c1: usize) -> PixelRect {
        PixelRect { r0, r1, c0, c1 }
    }

    #[test]
    fn roundtrips_ascii() {
        let mut img = RgbaImage::new(200, 64);
        for (text, r) in [("Hello", rect(0, 32, 0, 96)), ("dense layouts", rect(32, 64, 10, 200))] {
            assert_eq!(render(&mut img, &r, text), text.len());
            assert_eq!(decode(&img, &r), text);
        }
    }

    #[test]
    fn truncates_to_capacity() {
        let mut img = RgbaImage::new(9, 8);
        let r = rect(0, 8, 0, 9);
        assert_eq!(capacity(&r), 4);
        assert_eq!(render(&mut img, &r, "abcdefg"), 4);
        assert_eq!(decode(&img, &r), "abcd");
    }

    #[test]
    fn too_short_box_holds_nothing() {
        let mut img = RgbaImage::new(40, 7);
        let r = rect(0, 7, 0, 40);
        assert_eq!(render(&mut img, &r, "abc"), 0);
        assert_eq!(decode(&img, &r), "");
    }
}
