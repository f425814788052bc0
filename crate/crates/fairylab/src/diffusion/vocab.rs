//! Closed conditioning vocabulary: style attribute words, motion names, and
//! background keywords, each mapped to a learned embedding row.

use crate::error::{Error, Result};

pub const COLOR_WORDS: [&str; 10] = [
    "red", "orange", "yellow", "green", "teal", "blue", "purple", "magenta", "brown", "gray",
];
pub const TEXTURE_WORDS: [&str; 3] = ["flat", "hatched", "dotted"];
pub const STROKE_WORDS: [&str; 3] = ["thin-stroke", "medium-stroke", "thick-stroke"];
pub const MOTION_WORDS: [&str; 4] = ["idle-bob", "walk-cycle", "wave", "spin"];
pub const BACKGROUND_WORDS: [&str; 6] = ["forest", "meadow", "night", "cave", "ocean", "village"];

/// Ordered keyword list with reverse lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        let mut words = Vec::new();
        for w in COLOR_WORDS
            .iter()
            .chain(TEXTURE_WORDS.iter())
            .chain(STROKE_WORDS.iter())
            .chain(MOTION_WORDS.iter())
            .chain(BACKGROUND_WORDS.iter())
        {
            words.push((*w).to_string());
        }
        Vocab { words }
    }
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.words
            .iter()
            .position(|w| w == word)
            .ok_or_else(|| Error::Validation(format!("unknown keyword: {word}")))
    }

    pub fn encode(&self, words: &[String]) -> Result<Vec<usize>> {
        words.iter().map(|w| self.id(w)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_closed_and_total() {
        let v = Vocab::default();
        assert_eq!(v.len(), 26);
        assert!(v.id("teal").is_ok());
        assert!(v.id("wave").is_ok());
        assert!(v.id("forest").is_ok());
        assert!(v.id("skyscraper").is_err());
    }
}
