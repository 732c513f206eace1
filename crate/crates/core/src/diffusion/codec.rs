//! Latent ↔ pixel conversion standing in for a VAE.

pub use ::image::RgbaImage;

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::layout::LATENT_DOWNSCALE;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Keeps `encode_image` finite on pure black or white pixels.
const LOGIT_EPS: f64 = 1e-3;

fn to_byte(x: f64) -> u8 {
    (x * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Logistic of the first three channels, nearest-neighbour upscaled by
/// `LATENT_DOWNSCALE`, fully opaque.
pub fn decode<S: Scalar>(latent: &Tensor<S>) -> Result<RgbaImage> {
    decode_scaled(latent, LATENT_DOWNSCALE)
}

pub fn decode_scaled<S: Scalar>(latent: &Tensor<S>, factor: u32) -> Result<RgbaImage> {
    let (h, w, c) = latent.dims3()?;
    if c < 3 {
        return Err(Error::Configuration("decode needs at least 3 channels".into()));
    }
    if factor == 0 {
        return Err(Error::Configuration("upscale factor must be positive".into()));
    }
    let f = factor as usize;
    Ok(RgbaImage::from_fn((w * f) as u32, (h * f) as u32, |x, y| {
        let (r, col) = (y as usize / f, x as usize / f);
        let px = |k| to_byte(sigmoid(latent.at3(r, col, k)).to_f64_lossy());
        ::image::Rgba([px(0), px(1), px(2), 255])
    }))
}

/// Inverse of [`decode`] up to quantisation: block-mean each `factor×factor`
/// tile, clamp away from 0 and 1, and apply the logit. Extra channels are zero.
pub fn encode_image<S: Scalar>(img: &RgbaImage, factor: u32, channels: usize) -> Result<Tensor<S>> {
    if channels < 3 || factor == 0 {
        return Err(Error::Configuration("encode needs >= 3 channels and a positive factor".into()));
    }
    let (iw, ih) = img.dimensions();
    if iw % factor != 0 || ih % factor != 0 || iw == 0 || ih == 0 {
        return Err(Error::Geometry(format!(
            "image {iw}x{ih} is not a positive multiple of {factor}"
        )));
    }
    let (h, w) = ((ih / factor) as usize, (iw / factor) as usize);
    let area = (factor * factor) as f64;
    let mut t = Tensor::zeros(&[h, w, channels]);
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0f64; 3];
            for dy in 0..factor {
                for dx in 0..factor {
                    let p = img.get_pixel(c as u32 * factor + dx, r as u32 * factor + dy);
                    for k in 0..3 {
                        acc[k] += p[k] as f64 / 255.0;
                    }
                }
            }
            for (k, sum) in acc.iter().enumerate() {
                let v = (sum / area).clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
                t.set3(r, c, k, S::of((v / (1.0 - v)).ln()));
            }
        }
    }
    Ok(t)
}
