//! Spelling precision of recognized visual text against its reference.
//!
//! Alphabetic languages compare whole words; Chinese, Japanese and Korean
//! compare characters. Units are matched by a longest-common-subsequence
//! alignment, so an inserted or dropped unit costs only itself.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Fr,
    De,
    Es,
    It,
    Pt,
    Ru,
    Zh,
    Ja,
    Ko,
}

impl Language {
    pub const ALL: [Language; 10] = [
        Language::En,
        Language::Fr,
        Language::De,
        Language::Es,
        Language::It,
        Language::Pt,
        Language::Ru,
        Language::Zh,
        Language::Ja,
        Language::Ko,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Fr => "fr",
            Language::De => "de",
            Language::Es => "es",
            Language::It => "it",
            Language::Pt => "pt",
            Language::Ru => "ru",
            Language::Zh => "zh",
            Language::Ja => "ja",
            Language::Ko => "ko",
        }
    }

    pub fn is_character_based(self) -> bool {
        matches!(self, Language::Zh | Language::Ja | Language::Ko)
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Language::ALL
            .into_iter()
            .find(|l| l.code() == lower)
            .ok_or_else(|| Error::Config(format!("unsupported language {s:?}")))
    }
}

/// Comparison units: case-folded words with punctuation removed, or
/// non-space, non-punctuation characters for character-based languages.
pub fn units(text: &str, language: Language) -> Vec<String> {
    if language.is_character_based() {
        text.chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .map(String::from)
            .collect()
    } else {
        text.split_whitespace()
            .map(|w| w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
            .filter(|w| !w.is_empty())
            .collect()
    }
}

/// Length of the longest common subsequence, two-row dynamic program.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Matched units over reference units (at least one).
pub fn spelling_precision(reference: &str, hypothesis: &str, language: Language) -> f64 {
    let r = units(reference, language);
    let h = units(hypothesis, language);
    lcs_len(&r, &h) as f64 / r.len().max(1) as f64
}

/// As [`spelling_precision`] with the language given as a tag.
pub fn spelling_precision_tagged(reference: &str, hypothesis: &str, language: &str) -> Result<f64> {
    Ok(spelling_precision(reference, hypothesis, language.parse()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_one() {
        for l in Language::ALL {
            assert_eq!(spelling_precision("Grand Opening 2024", "Grand Opening 2024", l), 1.0);
        }
    }

    #[test]
    fn word_level_by_hand() {
        assert_eq!(spelling_precision("hello world", "hello word", Language::En), 0.5);
        // Case and punctuation do not count against the hypothesis.
        assert_eq!(spelling_precision("Hello, World!", "hello world", Language::En), 1.0);
        // One inserted word: LCS still finds both reference words.
        assert_eq!(spelling_precision("big sale", "big summer sale", Language::En), 1.0);
        // Order matters: only one of the two can align.
        assert_eq!(spelling_precision("sale big", "big sale", Language::En), 0.5);
    }

    #[test]
    fn character_level_by_hand() {
        assert_eq!(spelling_precision("数据分析", "数据分折", Language::Zh), 0.75);
        assert_eq!(spelling_precision("数据 分析", "数据分析", Language::Zh), 1.0);
        assert_eq!(spelling_precision("안녕하세요", "안녕", Language::Ko), 0.4);
    }

    #[test]
    fn disjoint_is_zero_and_empty_reference_is_safe() {
        assert_eq!(spelling_precision("alpha beta", "gamma", Language::De), 0.0);
        assert_eq!(spelling_precision("", "anything", Language::En), 0.0);
        assert_eq!(spelling_precision("", "", Language::En), 0.0);
    }

    #[test]
    fn unsupported_language_is_config_error() {
        assert!(matches!("xx".parse::<Language>(), Err(Error::Config(_))));
        assert!(matches!(spelling_precision_tagged("a", "a", "nl"), Err(Error::Config(_))));
        assert_eq!(spelling_precision_tagged("a", "a", "EN").unwrap(), 1.0);
    }
}
