//! Text normalization applied to every paragraph before deduplication.
//!
//! The steps run in a fixed order: NFC, removal of control and invisible
//! format characters, quote/dash canonicalization from the shipped mapping
//! table, whitespace collapse and trimming. A final NFC pass recomposes
//! sequences that a removed zero-width character used to separate, which is
//! what makes the whole transformation idempotent.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::ingest::{DocumentMetadata, SourceKind};

/// Versioned mapping table (codepoint → replacement).
pub const CANONICAL_TABLE: &str = include_str!("../data/canonical_chars.tsv");

/// A cleaned paragraph, the unit of deduplication and corpus statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanParagraph {
    /// Global position in the collection (manifest order, then reading order).
    pub seq: u64,
    pub doc_id: String,
    pub paragraph_index: usize,
    pub text: String,
    pub word_count: usize,
    pub source_kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

/// Parses the mapping table format: `U+XXXX<TAB>U+YYYY[ U+ZZZZ...]<TAB>name`.
pub fn parse_mapping_table(text: &str) -> Result<HashMap<char, String>, String> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(src), Some(dst)) = (cols.next(), cols.next()) else {
            return Err(format!("line {}: expected source and replacement", i + 1));
        };
        let src = parse_codepoint(src).map_err(|e| format!("line {}: {e}", i + 1))?;
        let dst = dst
            .split_whitespace()
            .map(parse_codepoint)
            .collect::<Result<String, _>>()
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        if map.insert(src, dst).is_some() {
            return Err(format!("line {}: duplicate source U+{:04X}", i + 1, src as u32));
        }
    }
    Ok(map)
}

fn parse_codepoint(s: &str) -> Result<char, String> {
    let hex = s.trim().strip_prefix("U+").ok_or_else(|| format!("bad codepoint {s:?}"))?;
    u32::from_str_radix(hex, 16)
        .ok()
        .and_then(char::from_u32)
        .ok_or_else(|| format!("bad codepoint {s:?}"))
}

fn canonical_map() -> &'static HashMap<char, String> {
    static MAP: OnceLock<HashMap<char, String>> = OnceLock::new();
    MAP.get_or_init(|| parse_mapping_table(CANONICAL_TABLE).expect("shipped mapping table is valid"))
}

/// Invisible format characters that carry no text: zero-width spaces and
/// joiners, bidi controls, soft hyphen, BOM and interlinear annotation marks.
pub fn is_invisible_format(c: char) -> bool {
    matches!(
        c,
        '\u{00AD}'
            | '\u{061C}'
            | '\u{180E}'
            | '\u{200B}'..='\u{200F}'
            | '\u{202A}'..='\u{202E}'
            | '\u{2060}'..='\u{2064}'
            | '\u{2066}'..='\u{206F}'
            | '\u{FEFF}'
            | '\u{FFF9}'..='\u{FFFB}'
    )
}

/// Normalizes `raw` into cleaned text.
pub fn clean_text(raw: &str) -> String {
    let map = canonical_map();
    let mut mapped = String::with_capacity(raw.len());
    for c in raw.nfc() {
        if c.is_whitespace() {
            mapped.push(' ');
        } else if c.is_control() || is_invisible_format(c) {
            continue;
        } else if let Some(rep) = map.get(&c) {
            mapped.push_str(rep);
        } else {
            mapped.push(c);
        }
    }
    let mut collapsed = String::with_capacity(mapped.len());
    for word in mapped.split(' ').filter(|w| !w.is_empty()) {
        if !collapsed.is_empty() {
            collapsed.push(' ');
        }
        collapsed.push_str(word);
    }
    if unicode_normalization::is_nfc(&collapsed) {
        collapsed
    } else {
        collapsed.nfc().collect()
    }
}

pub fn clean_paragraph(raw: &str, seq: u64, paragraph_index: usize, meta: &DocumentMetadata) -> CleanParagraph {
    let text = clean_text(raw);
    let word_count = text.split(' ').filter(|w| !w.is_empty()).count();
    CleanParagraph {
        seq,
        doc_id: meta.doc_id.clone(),
        paragraph_index,
        text,
        word_count,
        source_kind: meta.source_kind,
        language: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_width_and_whitespace() {
        let meta = DocumentMetadata::new("d", SourceKind::Other);
        let p = clean_paragraph("a\u{200B}b  c\n", 0, 0, &meta);
        assert_eq!(p.text, "ab c");
        assert_eq!(p.word_count, 2);
    }

    #[test]
    fn clean_text_unchanged() {
        assert_eq!(clean_text("hello verden"), "hello verden");
    }

    #[test]
    fn nfc_composition() {
        assert_eq!(clean_text("a\u{030A}"), "\u{00E5}");
        // o + ring has no precomposed form and stays as two characters
        assert_eq!(clean_text("o\u{030A}"), "o\u{030A}");
        // a removed zero-width space must not leave a decomposed pair behind
        assert_eq!(clean_text("a\u{200B}\u{030A}"), "\u{00E5}");
    }

    #[test]
    fn quotes_and_dashes() {
        assert_eq!(clean_text("\u{201C}Hei\u{201D} \u{2010} sa hun\u{2026}"), "\"Hei\" - sa hun...");
        assert_eq!(clean_text("«Nei» \u{2013} \u{2014}"), "«Nei» \u{2013} \u{2014}");
    }

    #[test]
    fn controls_removed_and_tabs_collapse() {
        assert_eq!(clean_text("\t a\u{0007}b\r\n\u{00A0}c \u{0000}"), "ab c");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text(" \u{200B} "), "");
    }

    #[test]
    fn case_preserved() {
        assert_eq!(clean_text("Oslo OSLO oslo"), "Oslo OSLO oslo");
    }

    #[test]
    fn shipped_table_parses() {
        let map = parse_mapping_table(CANONICAL_TABLE).unwrap();
        assert_eq!(map.get(&'\u{2019}').map(String::as_str), Some("'"));
        // every replacement is itself stable under cleaning
        for rep in map.values() {
            assert_eq!(&clean_text(rep), rep);
        }
        assert!(parse_mapping_table("U+2018\tU+0027\nU+2018\tU+0022").is_err());
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC*|[\\s\\x00-\\x1f\u{200B}\u{00AD}a-zå\u{030A}\u{0301}\u{2018}-\u{201F}]*") {
            let once = clean_text(&s);
            prop_assert_eq!(clean_text(&once), once.clone());
            prop_assert!(unicode_normalization::is_nfc(&once));
            prop_assert!(!once.starts_with(' ') && !once.ends_with(' ') && !once.contains("  "));
            prop_assert!(once.chars().count() <= 3 * s.chars().count());
        }
    }
}
