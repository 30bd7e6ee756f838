use super::vocab::Vocabulary;

/// Words longer than this (in chars) map straight to UNK.
pub const MAX_WORD_CHARS: usize = 100;

/// Punctuation for pre-splitting: ASCII punctuation plus the Latin-1,
/// General Punctuation, CJK and fullwidth punctuation ranges.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
                | '\u{2010}'..='\u{2027}'
                | '\u{2030}'..='\u{205E}'
                | '\u{3001}'..='\u{3003}'
                | '\u{3008}'..='\u{3011}'
                | '\u{FF01}'..='\u{FF0F}'
                | '\u{FF1A}'..='\u{FF20}'
        )
}

/// Whitespace split, then every punctuation character becomes its own word.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    out.push(&chunk[start..i]);
                }
                out.push(&chunk[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < chunk.len() {
            out.push(&chunk[start..]);
        }
    }
    out
}

/// Greedy longest-prefix segmentation of one word; `None` when some
/// remainder has no matching piece.
pub fn segment_word(word: &str, vocab: &Vocabulary) -> Option<Vec<u32>> {
    if word.chars().count() > MAX_WORD_CHARS {
        return None;
    }
    let boundaries: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
    let mut pieces = Vec::new();
    let mut start_idx = 0;
    let mut candidate = String::with_capacity(word.len() + 2);
    while start_idx + 1 < boundaries.len() {
        let start = boundaries[start_idx];
        let mut found = None;
        for end_idx in (start_idx + 1..boundaries.len()).rev() {
            candidate.clear();
            if start > 0 {
                candidate.push_str("##");
            }
            candidate.push_str(&word[start..boundaries[end_idx]]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some((id, end_idx));
                break;
            }
        }
        let (id, end_idx) = found?;
        pieces.push(id);
        start_idx = end_idx;
    }
    Some(pieces)
}

/// WordPiece tokenization; a word with any unmatchable remainder becomes a
/// single UNK.
pub fn wordpiece_tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    let mut ids = Vec::new();
    for word in pre_tokenize(text) {
        match segment_word(word, vocab) {
            Some(pieces) => ids.extend(pieces),
            None => ids.push(vocab.unk),
        }
    }
    ids
}
