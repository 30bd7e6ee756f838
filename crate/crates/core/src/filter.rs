//! Quality filtering of OCR documents.
//!
//! Pages and paragraphs are dropped when their mean word confidence falls
//! below a threshold; whole documents are rejected when they were digitized
//! inside the excluded period or when the text left after confidence
//! filtering is too short. All thresholds are inclusive lower bounds.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::ingest::{OcrDocument, OcrPage, OcrParagraph};

/// Closed date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateInterval {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_paragraph_confidence: f64,
    pub min_page_confidence: f64,
    pub min_doc_words: usize,
    pub min_avg_words_per_paragraph: f64,
    /// `None` disables the period exclusion.
    pub excluded_period: Option<DateInterval>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_paragraph_confidence: 0.8,
            min_page_confidence: 0.9,
            min_doc_words: 20,
            min_avg_words_per_paragraph: 6.0,
            excluded_period: Some(DateInterval {
                start: NaiveDate::from_ymd_opt(2006, 1, 1).expect("valid date"),
                end: NaiveDate::from_ymd_opt(2008, 12, 31).expect("valid date"),
            }),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("min_paragraph_confidence", self.min_paragraph_confidence),
            ("min_page_confidence", self.min_page_confidence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        if !(self.min_avg_words_per_paragraph >= 0.0) {
            return Err(format!(
                "min_avg_words_per_paragraph = {} must be >= 0",
                self.min_avg_words_per_paragraph
            ));
        }
        if let Some(p) = self.excluded_period {
            if p.start > p.end {
                return Err(format!("excluded period {} .. {} is empty", p.start, p.end));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionReason {
    PeriodExcluded,
    LowPageConfidence,
    LowParagraphConfidence,
    TooFewWords,
    LowAvgParagraphLength,
}

/// Audit record for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub doc_id: String,
    pub accepted: bool,
    /// Empty when `accepted`. For rejected documents this lists the
    /// word-count failures plus any confidence drops that contributed.
    pub rejection_reasons: Vec<RejectionReason>,
    pub retained_paragraph_count: usize,
    pub dropped_paragraph_count: usize,
    pub dropped_page_count: usize,
    pub retained_word_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetainedParagraph<'a> {
    /// Position of the paragraph in reading order across the whole document.
    pub index: usize,
    pub page_index: usize,
    pub paragraph: &'a OcrParagraph,
}

/// Mean word confidence; an empty paragraph scores 0.0.
pub fn paragraph_confidence(p: &OcrParagraph) -> f64 {
    mean(p.words.iter().map(|w| w.confidence))
}

/// Word-weighted mean confidence over the whole page; a page without words
/// scores 0.0.
pub fn page_confidence(pg: &OcrPage) -> f64 {
    mean(pg.paragraphs.iter().flat_map(|p| p.words.iter()).map(|w| w.confidence))
}

/// Slack for comparing floating-point means against thresholds, so a mean
/// that is mathematically equal to the threshold passes despite rounding.
pub const THRESHOLD_EPSILON: f64 = 1e-9;

fn meets(value: f64, threshold: f64) -> bool {
    value >= threshold - THRESHOLD_EPSILON
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn filter_document<'a>(
    doc: &'a OcrDocument,
    cfg: &FilterConfig,
) -> (Vec<RetainedParagraph<'a>>, FilterVerdict) {
    let total = doc.paragraph_count();
    let mut verdict = FilterVerdict {
        doc_id: doc.metadata.doc_id.clone(),
        accepted: false,
        rejection_reasons: Vec::new(),
        retained_paragraph_count: 0,
        dropped_paragraph_count: total,
        dropped_page_count: 0,
        retained_word_count: 0,
    };

    if !doc.is_born_digital {
        if let (Some(period), Some(date)) = (cfg.excluded_period, doc.metadata.digitization_date) {
            if period.contains(date) {
                verdict.rejection_reasons.push(RejectionReason::PeriodExcluded);
                verdict.dropped_page_count = doc.pages.len();
                return (Vec::new(), verdict);
            }
        }
    }

    let mut retained = Vec::new();
    let mut index = 0usize;
    let mut dropped_pages = 0usize;
    let mut dropped_paragraphs_by_confidence = false;
    for (page_index, page) in doc.pages.iter().enumerate() {
        let page_ok = doc.is_born_digital || meets(page_confidence(page), cfg.min_page_confidence);
        if !page_ok {
            dropped_pages += 1;
            index += page.paragraphs.len();
            continue;
        }
        for paragraph in &page.paragraphs {
            if doc.is_born_digital || meets(paragraph_confidence(paragraph), cfg.min_paragraph_confidence) {
                retained.push(RetainedParagraph {
                    index,
                    page_index,
                    paragraph,
                });
            } else {
                dropped_paragraphs_by_confidence = true;
            }
            index += 1;
        }
    }

    let words: usize = retained.iter().map(|r| r.paragraph.words.len()).sum();
    let paragraphs = retained.len();
    let mut reasons = Vec::new();
    if words < cfg.min_doc_words {
        reasons.push(RejectionReason::TooFewWords);
    }
    if paragraphs > 0 && !meets(words as f64 / paragraphs as f64, cfg.min_avg_words_per_paragraph) {
        reasons.push(RejectionReason::LowAvgParagraphLength);
    }
    verdict.dropped_page_count = dropped_pages;

    if !reasons.is_empty() {
        if dropped_pages > 0 {
            verdict.rejection_reasons.push(RejectionReason::LowPageConfidence);
        }
        if dropped_paragraphs_by_confidence {
            verdict.rejection_reasons.push(RejectionReason::LowParagraphConfidence);
        }
        verdict.rejection_reasons.extend(reasons);
        return (Vec::new(), verdict);
    }

    verdict.accepted = true;
    verdict.retained_paragraph_count = paragraphs;
    verdict.dropped_paragraph_count = total - paragraphs;
    verdict.retained_word_count = words;
    (retained, verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{DocumentMetadata, OcrWord, SourceKind};

    fn para(confs: &[f64]) -> OcrParagraph {
        OcrParagraph {
            words: confs
                .iter()
                .enumerate()
                .map(|(i, &c)| OcrWord {
                    text: format!("w{i}"),
                    confidence: c,
                })
                .collect(),
        }
    }

    fn doc(pages: Vec<Vec<OcrParagraph>>, date: Option<(i32, u32, u32)>) -> OcrDocument {
        let mut metadata = DocumentMetadata::new("doc", SourceKind::Book);
        metadata.digitization_date = date.map(|(y, m, d)| NaiveDate::from_ymd_opt(y, m, d).unwrap());
        OcrDocument {
            metadata,
            pages: pages.into_iter().map(|paragraphs| OcrPage { paragraphs }).collect(),
            is_born_digital: false,
        }
    }

    #[test]
    fn paragraph_confidence_examples() {
        assert!((paragraph_confidence(&para(&[0.9, 0.7, 0.8])) - 0.8).abs() < 1e-12);
        assert_eq!(paragraph_confidence(&para(&[1.0])), 1.0);
        assert_eq!(paragraph_confidence(&para(&[])), 0.0);
    }

    #[test]
    fn page_confidence_is_word_weighted() {
        let page = OcrPage {
            paragraphs: vec![para(&[1.0]), para(&[0.8, 0.8])],
        };
        assert!((page_confidence(&page) - 2.6 / 3.0).abs() < 1e-12);
        let flat = OcrPage {
            paragraphs: vec![para(&[0.9; 5])],
        };
        assert!((page_confidence(&flat) - 0.9).abs() < 1e-12);
        assert_eq!(page_confidence(&OcrPage::default()), 0.0);
    }

    #[test]
    fn period_exclusion() {
        let d = doc(vec![vec![para(&[1.0; 30])]], Some((2007, 6, 15)));
        let (kept, v) = filter_document(&d, &FilterConfig::default());
        assert!(kept.is_empty());
        assert!(!v.accepted);
        assert_eq!(v.rejection_reasons, vec![RejectionReason::PeriodExcluded]);

        let mut born = d.clone();
        born.is_born_digital = true;
        assert!(filter_document(&born, &FilterConfig::default()).1.accepted);
    }

    #[test]
    fn nineteen_words_rejected() {
        let d = doc(vec![vec![para(&[1.0; 10]), para(&[1.0; 9])]], Some((2015, 1, 1)));
        let (_, v) = filter_document(&d, &FilterConfig::default());
        assert_eq!(v.rejection_reasons, vec![RejectionReason::TooFewWords]);
    }

    #[test]
    fn inclusive_average_boundary() {
        let d = doc(vec![vec![para(&[1.0; 6]); 4]], Some((2015, 3, 1)));
        let (kept, v) = filter_document(&d, &FilterConfig::default());
        assert!(v.accepted, "{v:?}");
        assert_eq!(kept.len(), 4);
        assert!(v.rejection_reasons.is_empty());
    }

    #[test]
    fn confidence_thresholds_inclusive() {
        // page mean exactly 0.9 and paragraph means exactly 0.8 both pass
        let d = doc(
            vec![vec![para(&[0.8; 10]), para(&[1.0; 10])]],
            None,
        );
        let (kept, v) = filter_document(&d, &FilterConfig::default());
        assert!(v.accepted, "{v:?}");
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn low_pages_and_paragraphs_dropped() {
        let d = doc(
            vec![
                vec![para(&[0.5; 10])],
                vec![para(&[1.0; 25]), para(&[0.79, 0.79])],
            ],
            None,
        );
        let (kept, v) = filter_document(&d, &FilterConfig::default());
        assert!(v.accepted);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].index, 1);
        assert_eq!(kept[0].page_index, 1);
        assert_eq!(v.dropped_page_count, 1);
        assert_eq!(v.retained_paragraph_count + v.dropped_paragraph_count, 3);
    }

    #[test]
    fn rejection_lists_contributing_confidence_drops() {
        let d = doc(vec![vec![para(&[0.95; 12]), para(&[0.5; 12])]], None);
        let cfg = FilterConfig {
            min_page_confidence: 0.7,
            ..FilterConfig::default()
        };
        let (_, v) = filter_document(&d, &cfg);
        assert!(!v.accepted);
        assert_eq!(
            v.rejection_reasons,
            vec![RejectionReason::LowParagraphConfidence, RejectionReason::TooFewWords]
        );
    }

    #[test]
    fn raising_paragraph_threshold_can_rescue_a_low_average_document() {
        // 20 good words plus three one-word paragraphs averages 5.75 words,
        // dropping the short paragraphs leaves 20 words in one paragraph.
        let d = doc(
            vec![vec![para(&[0.95; 20]), para(&[0.85]), para(&[0.85]), para(&[0.85])]],
            None,
        );
        let cfg = FilterConfig {
            min_page_confidence: 0.0,
            ..FilterConfig::default()
        };
        assert!(!filter_document(&d, &cfg).1.accepted);
        let stricter = FilterConfig {
            min_paragraph_confidence: 0.9,
            ..cfg
        };
        assert!(filter_document(&d, &stricter).1.accepted);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        let bad = FilterConfig {
            min_page_confidence: 1.5,
            ..FilterConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
