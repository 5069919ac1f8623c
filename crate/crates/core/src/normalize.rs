//! Answer-text normalization used for exact-match scoring.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::types::Locale;

const TERMINAL_PUNCT: [char; 6] = ['.', '。', '!', '?', '！', '？'];

/// An answer string with its matching key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedAnswer {
    pub surface: String,
    pub normalized: String,
}

/// NFKC, trim, collapse whitespace, casefold, drop trailing sentence
/// punctuation; Chinese additionally loses every internal space.
pub fn normalize_answer(text: &str, locale: &Locale) -> NormalizedAnswer {
    NormalizedAnswer {
        surface: text.to_string(),
        normalized: normalize_str(text, locale.is_chinese()),
    }
}

pub(crate) fn normalize_str(text: &str, chinese: bool) -> String {
    // One pass is not always a fixpoint: removing spaces can let NFKC
    // compose a base with a following mark, and casefolding can yield text
    // that NFKC rewrites again. Iterate until stable.
    let mut current = pass(text, chinese);
    for _ in 0..8 {
        let next = pass(&current, chinese);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn pass(text: &str, chinese: bool) -> String {
    let nfkc: String = text.nfkc().collect();
    let collapsed = nfkc.split_whitespace().collect::<Vec<_>>().join(" ");
    let folded = caseless::default_case_fold_str(&collapsed);
    let mut out = folded.as_str();
    loop {
        let trimmed = out.trim_end().trim_end_matches(TERMINAL_PUNCT);
        if trimmed.len() == out.len() {
            break;
        }
        out = trimmed;
    }
    let out = out.trim();
    if chinese {
        out.chars().filter(|c| !c.is_whitespace()).collect()
    } else {
        out.to_string()
    }
}
