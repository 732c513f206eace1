//! Named colors used by the synthetic color-semantics data.
//!
//! Every channel is either `LOW` or `HIGH`, so the eight entries are the
//! corners of an inset RGB cube and nearest-color classification has a wide
//! margin.

use image::Rgba;

pub const LOW: u8 = 38;
pub const HIGH: u8 = 217;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NamedColor {
    pub name: &'static str,
    pub rgb: [u8; 3],
}

impl NamedColor {
    pub fn rgba(&self) -> Rgba<u8> {
        Rgba([self.rgb[0], self.rgb[1], self.rgb[2], 255])
    }
}

const fn ch(on: bool) -> u8 {
    if on {
        HIGH
    } else {
        LOW
    }
}

const fn c(name: &'static str, r: bool, g: bool, b: bool) -> NamedColor {
    NamedColor {
        name,
        rgb: [ch(r), ch(g), ch(b)],
    }
}

pub const PALETTE: [NamedColor; 8] = [
    c("black", false, false, false),
    c("red", true, false, false),
    c("green", false, true, false),
    c("yellow", true, true, false),
    c("blue", false, false, true),
    c("magenta", true, false, true),
    c("cyan", false, true, true),
    c("white", true, true, true),
];

pub fn by_name(name: &str) -> Option<usize> {
    PALETTE.iter().position(|c| c.name == name)
}

/// Palette index named by the first matching word of `prompt`.
pub fn color_in_prompt(prompt: &str) -> Option<usize> {
    prompt
        .split(|ch: char| !ch.is_alphanumeric())
        .find_map(|w| by_name(&w.to_lowercase()))
}

/// Index of the palette entry nearest to `rgb` in squared distance; ties go to the lower index.
pub fn classify(rgb: [u8; 3]) -> usize {
    let dist = |c: &NamedColor| -> u32 {
        (0..3)
            .map(|k| {
                let d = i32::from(c.rgb[k]) - i32::from(rgb[k]);
                (d * d) as u32
            })
            .sum()
    };
    (0..PALETTE.len()).min_by_key(|&i| dist(&PALETTE[i])).expect("non-empty palette")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_classifies_itself() {
        for (i, c) in PALETTE.iter().enumerate() {
            assert_eq!(classify(c.rgb), i);
            assert_eq!(by_name(c.name), Some(i));
        }
    }

    #[test]
    fn nearest_by_channel_threshold() {
        assert_eq!(classify([200, 40, 60]), by_name("red").unwrap());
        assert_eq!(classify([127, 128, 129]), by_name("cyan").unwrap());
        assert_eq!(classify([127, 127, 127]), by_name("black").unwrap());
    }

    #[test]
    fn finds_color_word() {
        assert_eq!(color_in_prompt("a Blue panel"), by_name("blue"));
        assert_eq!(color_in_prompt("plain"), None);
    }
}
