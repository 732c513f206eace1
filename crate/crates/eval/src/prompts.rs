//! Judge prompt texts for use with a real vision-language judge. Nothing in
//! this crate sends them; they are shipped so a remote judge can be set up
//! with the exact wording.

/// Whole-image aesthetics and prompt-following rubric for infographics.
pub const GLOBAL_INFOGRAPHIC: &str = include_str!("../prompts/global_infographic.txt");

/// The same rubric for slide decks, plus style consistency across pages.
pub const GLOBAL_SLIDES: &str = include_str!("../prompts/global_slides.txt");

/// Main-element versus other classification of template layers.
pub const MAIN_LAYER: &str = include_str!("../prompts/main_layer.txt");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompts_ask_for_json_scores() {
        for p in [GLOBAL_INFOGRAPHIC, GLOBAL_SLIDES] {
            assert!(p.contains("'Aesthetics'") && p.contains("'Prompt Following'"));
        }
        assert!(GLOBAL_SLIDES.contains("'Style Consistency'"));
        assert!(MAIN_LAYER.contains("\"Main element\""));
    }
}
