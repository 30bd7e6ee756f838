//! Evaluation scores: entity-level F1 over IOB2 tag sequences and macro F1
//! over class labels.
//!
//! Chunk extraction follows seqeval's default (non-strict) mode: an `I-X`
//! that does not continue an `X` chunk opens a new one.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("sequence {sequence}, token {position}: invalid tag {tag:?}")]
    InvalidTag {
        sequence: usize,
        position: usize,
        tag: String,
    },
    #[error("sequence {index}: gold has {gold} tokens, prediction has {pred}")]
    SequenceLength { index: usize, gold: usize, pred: usize },
    #[error("gold has {gold} items, prediction has {pred}")]
    Alignment { gold: usize, pred: usize },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str) -> Option<Tag<'_>> {
    if tag == "O" {
        return Some(Tag::Outside);
    }
    let (prefix, ty) = tag.split_at_checked(2)?;
    if ty.is_empty() {
        return None;
    }
    match prefix {
        "B-" => Some(Tag::Begin(ty)),
        "I-" => Some(Tag::Inside(ty)),
        _ => None,
    }
}

/// Ordered IOB2 labels for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagSequence {
    pub tags: Vec<String>,
}

impl TagSequence {
    pub fn new<S: Into<String>>(tags: impl IntoIterator<Item = S>) -> Self {
        Self {
            tags: tags.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Chunk with an inclusive token span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    #[serde(rename = "type")]
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

pub fn extract_entities(seq: &TagSequence) -> Result<BTreeSet<Entity>, MetricsError> {
    extract_indexed(seq, 0)
}

fn extract_indexed(seq: &TagSequence, sequence: usize) -> Result<BTreeSet<Entity>, MetricsError> {
    let mut out = BTreeSet::new();
    let mut open: Option<(&str, usize)> = None;
    for (i, raw) in seq.tags.iter().enumerate() {
        let tag = parse_tag(raw).ok_or_else(|| MetricsError::InvalidTag {
            sequence,
            position: i,
            tag: raw.clone(),
        })?;
        let continues = matches!((tag, open), (Tag::Inside(t), Some((ot, _))) if t == ot);
        if continues {
            continue;
        }
        if let Some((kind, start)) = open.take() {
            out.insert(Entity {
                kind: kind.to_string(),
                start,
                end: i - 1,
            });
        }
        open = match tag {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some((t, i)),
        };
    }
    if let Some((kind, start)) = open {
        out.insert(Entity {
            kind: kind.to_string(),
            start,
            end: seq.tags.len() - 1,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pooled true-positive / predicted / gold chunk counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkCounts {
    pub true_positives: u64,
    pub predicted: u64,
    pub gold: u64,
}

impl ChunkCounts {
    pub fn merge(&mut self, other: &ChunkCounts) {
        self.true_positives += other.true_positives;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    pub fn scores(&self) -> PrecisionRecallF1 {
        prf(self.true_positives, self.predicted, self.gold)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn prf(tp: u64, predicted: u64, gold: u64) -> PrecisionRecallF1 {
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, gold);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PrecisionRecallF1 { precision, recall, f1 }
}

/// Chunk counts for aligned corpora, pooled over sequences.
pub fn chunk_counts(gold: &[TagSequence], pred: &[TagSequence]) -> Result<ChunkCounts, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::Alignment {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut counts = ChunkCounts::default();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(MetricsError::SequenceLength {
                index: i,
                gold: g.len(),
                pred: p.len(),
            });
        }
        let ge = extract_indexed(g, i)?;
        let pe = extract_indexed(p, i)?;
        counts.true_positives += ge.intersection(&pe).count() as u64;
        counts.gold += ge.len() as u64;
        counts.predicted += pe.len() as u64;
    }
    Ok(counts)
}

/// Entity-level micro precision, recall and F1 (0/0 counts as 0).
pub fn f1_micro(gold: &[TagSequence], pred: &[TagSequence]) -> Result<PrecisionRecallF1, MetricsError> {
    Ok(chunk_counts(gold, pred)?.scores())
}

/// Per-entity-type scores, keyed by type.
pub fn per_type_scores(
    gold: &[TagSequence],
    pred: &[TagSequence],
) -> Result<BTreeMap<String, PrecisionRecallF1>, MetricsError> {
    chunk_counts(gold, pred)?;
    let mut counts: BTreeMap<String, ChunkCounts> = BTreeMap::new();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let ge = extract_indexed(g, i)?;
        let pe = extract_indexed(p, i)?;
        for e in &ge {
            let c = counts.entry(e.kind.clone()).or_default();
            c.gold += 1;
            if pe.contains(e) {
                c.true_positives += 1;
            }
        }
        for e in &pe {
            counts.entry(e.kind.clone()).or_default().predicted += 1;
        }
    }
    Ok(counts.into_iter().map(|(k, c)| (k, c.scores())).collect())
}

/// Unweighted mean of per-class F1 over the union of gold and predicted labels.
pub fn f1_macro<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::Alignment {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let classes: BTreeSet<&str> = gold.iter().chain(pred).map(AsRef::as_ref).collect();
    if classes.is_empty() {
        return Ok(0.0);
    }
    let mut per_class: BTreeMap<&str, (u64, u64, u64)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        if g == p {
            per_class.entry(g).or_default().0 += 1;
        } else {
            per_class.entry(p).or_default().1 += 1;
            per_class.entry(g).or_default().2 += 1;
        }
    }
    let sum: f64 = classes
        .iter()
        .map(|c| {
            let (tp, fp, fnn) = per_class.get(c).copied().unwrap_or_default();
            let den = 2 * tp + fp + fnn;
            if den == 0 {
                0.0
            } else {
                2.0 * tp as f64 / den as f64
            }
        })
        .sum();
    Ok(sum / classes.len() as f64)
}

/// Reads CoNLL-style columns (token ... tag, tag in the last column); blank
/// lines separate sequences and `-DOCSTART-` lines are skipped.
pub fn read_conll<R: BufRead>(reader: R) -> Result<Vec<TagSequence>, MetricsError> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MetricsError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                out.push(TagSequence {
                    tags: std::mem::take(&mut current),
                });
            }
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            continue;
        }
        let mut cols = line.split_whitespace();
        let first = cols.next();
        let tag = cols.last().or(first).ok_or_else(|| MetricsError::Format {
            line: i + 1,
            message: "empty row".into(),
        })?;
        if parse_tag(tag).is_none() {
            return Err(MetricsError::Format {
                line: i + 1,
                message: format!("invalid tag {tag:?}"),
            });
        }
        current.push(tag.to_string());
    }
    if !current.is_empty() {
        out.push(TagSequence { tags: current });
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonSequence {
    Tags(Vec<String>),
    Object { tags: Vec<String> },
}

/// Reads one tag sequence per line, either a JSON array of tags or an object
/// with a `tags` array.
pub fn read_tag_jsonl<R: BufRead>(reader: R) -> Result<Vec<TagSequence>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MetricsError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: JsonSequence = serde_json::from_str(&line).map_err(|e| MetricsError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        let tags = match seq {
            JsonSequence::Tags(t) | JsonSequence::Object { tags: t } => t,
        };
        out.push(TagSequence { tags });
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonLabel {
    Plain(String),
    Object { label: String },
}

/// Reads class labels, one per line: a bare label, a JSON string, or an
/// object with a `label` field.
pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<String>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MetricsError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('"') || trimmed.starts_with('{') {
            let label: JsonLabel = serde_json::from_str(trimmed).map_err(|e| MetricsError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            out.push(match label {
                JsonLabel::Plain(s) | JsonLabel::Object { label: s } => s,
            });
        } else {
            out.push(trimmed.to_string());
        }
    }
    Ok(out)
}

/// JSON score report for sequence labelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerReport {
    pub sequences: usize,
    pub counts: ChunkCounts,
    pub micro: PrecisionRecallF1,
    pub per_type: BTreeMap<String, PrecisionRecallF1>,
}

pub fn ner_report(gold: &[TagSequence], pred: &[TagSequence]) -> Result<NerReport, MetricsError> {
    let counts = chunk_counts(gold, pred)?;
    Ok(NerReport {
        sequences: gold.len(),
        counts,
        micro: counts.scores(),
        per_type: per_type_scores(gold, pred)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub examples: usize,
    pub classes: usize,
    pub f1_macro: f64,
    pub accuracy: f64,
}

pub fn classification_report<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<ClassificationReport, MetricsError> {
    let f1 = f1_macro(gold, pred)?;
    let correct = gold.iter().zip(pred).filter(|(g, p)| g.as_ref() == p.as_ref()).count();
    let classes: HashSet<&str> = gold.iter().chain(pred).map(AsRef::as_ref).collect();
    Ok(ClassificationReport {
        examples: gold.len(),
        classes: classes.len(),
        f1_macro: f1,
        accuracy: ratio(correct as u64, gold.len() as u64),
    })
}
