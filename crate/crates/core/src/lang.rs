//! Language composition estimate from marker-word frequencies.
//!
//! Each paragraph is scored against per-language lexicons of closed-class
//! words (pronouns, determiners, function words). The best-scoring language
//! wins if its score clears a floor; otherwise the document's metadata hint
//! is used, and failing that the paragraph is unknown. Composition is
//! aggregated by word count.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LEXICONS: &str = include_str!("../data/lexicons.tsv");
pub const DEFAULT_SCORE_FLOOR: f64 = 0.05;

/// Languages in tie-break order: when two languages score the same, the one
/// listed first wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Nb,
    Nn,
    En,
    Da,
    Sv,
    Se,
    Other,
}

impl Language {
    pub const ALL: [Language; 7] = [
        Language::Nb,
        Language::Nn,
        Language::En,
        Language::Da,
        Language::Sv,
        Language::Se,
        Language::Other,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Language::Nb => "nb",
            Language::Nn => "nn",
            Language::En => "en",
            Language::Da => "da",
            Language::Sv => "sv",
            Language::Se => "se",
            Language::Other => "other",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Language::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| format!("unknown language code {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("no lexicons supplied")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageLexicon {
    pub language: Language,
    pub markers: HashMap<String, f64>,
}

/// Parses `language<TAB>word<TAB>weight` lines into one lexicon per language,
/// ordered by [`Language`].
pub fn parse_lexicons(text: &str) -> Result<Vec<LanguageLexicon>, LexiconError> {
    let mut by_lang: BTreeMap<Language, HashMap<String, f64>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_err = |message: String| LexiconError::Line { line: i + 1, message };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [lang, word, weight] = cols[..] else {
            return Err(line_err(format!("expected 3 columns, found {}", cols.len())));
        };
        let language: Language = lang.parse().map_err(line_err)?;
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(line_err(format!("marker {word:?} must be a single nonempty word")));
        }
        if word.to_lowercase() != word {
            return Err(line_err(format!("marker {word:?} must be lowercase")));
        }
        let weight: f64 = weight
            .parse()
            .map_err(|_| line_err(format!("weight {weight:?} is not a number")))?;
        if !(weight.is_finite() && weight > 0.0) {
            return Err(line_err(format!("weight {weight} must be positive")));
        }
        by_lang.entry(language).or_default().insert(word.to_string(), weight);
    }
    Ok(by_lang
        .into_iter()
        .map(|(language, markers)| LanguageLexicon { language, markers })
        .collect())
}

pub fn default_lexicons() -> Vec<LanguageLexicon> {
    parse_lexicons(DEFAULT_LEXICONS).expect("shipped lexicons are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// `None` means unknown.
    pub language: Option<Language>,
    /// Score of the winning language (0.0 when nothing matched).
    pub score: f64,
}

/// Marker-word scorer built from a set of lexicons.
#[derive(Debug, Clone)]
pub struct LanguageClassifier {
    languages: Vec<Language>,
    index: HashMap<String, Vec<(usize, f64)>>,
    pub floor: f64,
}

impl LanguageClassifier {
    pub fn new(lexicons: &[LanguageLexicon], floor: f64) -> Result<Self, LexiconError> {
        if lexicons.is_empty() {
            return Err(LexiconError::Empty);
        }
        let mut languages: Vec<Language> = lexicons.iter().map(|l| l.language).collect();
        languages.sort();
        languages.dedup();
        let mut index: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
        for lex in lexicons {
            let slot = languages.binary_search(&lex.language).expect("language listed");
            for (word, &w) in &lex.markers {
                index.entry(word.clone()).or_default().push((slot, w));
            }
        }
        Ok(Self { languages, index, floor })
    }

    /// Per-language score: summed marker weights over lowercased tokens,
    /// divided by `word_count`.
    pub fn scores(&self, text: &str, word_count: usize) -> Vec<(Language, f64)> {
        let mut sums = vec![0.0; self.languages.len()];
        if word_count > 0 {
            for token in text.split_whitespace() {
                let token = token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
                if let Some(hits) = self.index.get(&token) {
                    for &(slot, w) in hits {
                        sums[slot] += w;
                    }
                }
            }
        }
        self.languages
            .iter()
            .zip(sums)
            .map(|(&l, s)| (l, if word_count > 0 { s / word_count as f64 } else { 0.0 }))
            .collect()
    }

    pub fn classify(&self, text: &str, word_count: usize, hint: Option<&str>) -> Classification {
        // languages are sorted by tie-break order, so a strict > keeps the first
        let mut best: Option<(Language, f64)> = None;
        for (lang, score) in self.scores(text, word_count) {
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((lang, score));
            }
        }
        let (lang, score) = best.unwrap_or((Language::Other, 0.0));
        if score > self.floor {
            return Classification {
                language: Some(lang),
                score,
            };
        }
        let language = hint.map(|h| h.parse().unwrap_or(Language::Other));
        Classification { language, score }
    }
}

/// Word totals per language; merging two counts is associative and
/// commutative, so partial counts from parallel workers can be combined.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompositionCounts {
    pub words: BTreeMap<Language, u64>,
    pub unknown_words: u64,
}

impl CompositionCounts {
    pub fn add(&mut self, language: Option<Language>, words: u64) {
        match language {
            Some(l) => *self.words.entry(l).or_default() += words,
            None => self.unknown_words += words,
        }
    }

    pub fn merge(&mut self, other: &CompositionCounts) {
        for (&l, &w) in &other.words {
            *self.words.entry(l).or_default() += w;
        }
        self.unknown_words += other.unknown_words;
    }

    pub fn total(&self) -> u64 {
        self.words.values().sum::<u64>() + self.unknown_words
    }

    pub fn report(&self) -> CompositionReport {
        let total = self.total();
        let frac = |w: u64| if total == 0 { 0.0 } else { w as f64 / total as f64 };
        CompositionReport {
            total_words: total,
            languages: self
                .words
                .iter()
                .map(|(&l, &w)| {
                    (
                        l,
                        LanguageShare {
                            words: w,
                            fraction: frac(w),
                        },
                    )
                })
                .collect(),
            unknown: LanguageShare {
                words: self.unknown_words,
                fraction: frac(self.unknown_words),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanguageShare {
    pub words: u64,
    pub fraction: f64,
}

/// Word-weighted language fractions. For a nonempty corpus the fractions
/// (languages plus unknown) sum to 1; an empty corpus reports all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub total_words: u64,
    pub languages: BTreeMap<Language, LanguageShare>,
    pub unknown: LanguageShare,
}

impl CompositionReport {
    pub fn fraction(&self, language: Language) -> f64 {
        self.languages.get(&language).map_or(0.0, |s| s.fraction)
    }
}

/// Aggregates already-classified paragraphs, given as `(language, word_count)`.
pub fn composition_report<I>(classified: I) -> CompositionReport
where
    I: IntoIterator<Item = (Option<Language>, u64)>,
{
    let mut counts = CompositionCounts::default();
    for (l, w) in classified {
        counts.add(l, w);
    }
    counts.report()
}
