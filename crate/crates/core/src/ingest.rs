//! Ingestion of digitized (METS/ALTO) and born-digital (plain text) sources
//! into one document model with per-word OCR confidences.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("invalid <{element}> at byte {offset}: {message}")]
    Validation {
        element: String,
        offset: u64,
        message: String,
    },
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("invalid UTF-8 at byte {offset}")]
    Encoding { offset: usize },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("duplicate doc_id {0:?} in collection")]
    DuplicateDocId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Source categories of the corpus composition table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Book,
    NewspaperScan,
    ParliamentDoc,
    WebCrawl,
    OnlineNewspaper,
    Periodical,
    Microfilm,
    Wikipedia,
    PublicReport,
    Legal,
    Other,
}

impl SourceKind {
    pub const ALL: [SourceKind; 11] = [
        SourceKind::Book,
        SourceKind::NewspaperScan,
        SourceKind::ParliamentDoc,
        SourceKind::WebCrawl,
        SourceKind::OnlineNewspaper,
        SourceKind::Periodical,
        SourceKind::Microfilm,
        SourceKind::Wikipedia,
        SourceKind::PublicReport,
        SourceKind::Legal,
        SourceKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Book => "book",
            SourceKind::NewspaperScan => "newspaper-scan",
            SourceKind::ParliamentDoc => "parliament-doc",
            SourceKind::WebCrawl => "web-crawl",
            SourceKind::OnlineNewspaper => "online-newspaper",
            SourceKind::Periodical => "periodical",
            SourceKind::Microfilm => "microfilm",
            SourceKind::Wikipedia => "wikipedia",
            SourceKind::PublicReport => "public-report",
            SourceKind::Legal => "legal",
            SourceKind::Other => "other",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown source kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrWord {
    pub text: String,
    pub confidence: f64,
}

impl OcrWord {
    /// Builds a word, rejecting empty or whitespace-bearing text and
    /// confidences outside `[0, 1]`.
    pub fn new(text: impl Into<String>, confidence: f64) -> std::result::Result<Self, String> {
        let text = text.into();
        if text.is_empty() {
            return Err("word text is empty".into());
        }
        if text.chars().any(char::is_whitespace) {
            return Err(format!("word text {text:?} contains whitespace"));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(format!("confidence {confidence} outside [0, 1]"));
        }
        Ok(Self { text, confidence })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OcrParagraph {
    pub words: Vec<OcrWord>,
}

impl OcrParagraph {
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&w.text);
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OcrPage {
    pub paragraphs: Vec<OcrParagraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentMetadata {
    pub doc_id: String,
    pub source_kind: SourceKind,
    pub digitization_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_hint: Option<String>,
}

impl DocumentMetadata {
    pub fn new(doc_id: impl Into<String>, source_kind: SourceKind) -> Self {
        Self {
            doc_id: doc_id.into(),
            source_kind,
            digitization_date: None,
            language_hint: None,
        }
    }

    pub fn with_date(mut self, date: NaiveDate) -> Self {
        self.digitization_date = Some(date);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrDocument {
    pub metadata: DocumentMetadata,
    pub pages: Vec<OcrPage>,
    pub is_born_digital: bool,
}

impl OcrDocument {
    pub fn paragraphs(&self) -> impl Iterator<Item = &OcrParagraph> {
        self.pages.iter().flat_map(|p| p.paragraphs.iter())
    }

    pub fn paragraph_count(&self) -> usize {
        self.pages.iter().map(|p| p.paragraphs.len()).sum()
    }

    pub fn word_count(&self) -> usize {
        self.paragraphs().map(|p| p.words.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AltoOptions {
    /// Reject word elements that carry no `WC` attribute instead of
    /// defaulting their confidence to 1.0.
    pub strict_confidence: bool,
}

/// ALTO schema generation, detected from the root namespace or `SCHEMAVERSION`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AltoVersion {
    V2,
    V3,
}

const ALTO_NS_PREFIX: &str = "http://www.loc.gov/standards/alto/ns-v";

fn detect_alto_version(root: &BytesStart<'_>, offset: u64) -> Result<AltoVersion> {
    let mut namespace = None;
    let mut schema_version = None;
    for attr in root.attributes() {
        let attr = attr.map_err(|e| IngestError::Xml {
            offset,
            message: e.to_string(),
        })?;
        let key = attr.key.as_ref();
        let value = attr_value(&attr, offset)?;
        if key == "xmlns" || key.starts_with("xmlns:") {
            if value.starts_with(ALTO_NS_PREFIX) {
                namespace = Some(value);
            }
        } else if attr.key.local_name().as_ref() == "SCHEMAVERSION" {
            schema_version = Some(value);
        }
    }
    if let Some(ns) = namespace {
        let rest = &ns[ALTO_NS_PREFIX.len()..];
        let major = rest.trim_end_matches('#');
        return match major {
            "2" => Ok(AltoVersion::V2),
            "3" => Ok(AltoVersion::V3),
            other => Err(IngestError::Unsupported(format!(
                "ALTO version {other} (supported: 2, 3)"
            ))),
        };
    }
    match schema_version.as_deref().and_then(|v| v.split('.').next()) {
        Some("2") => Ok(AltoVersion::V2),
        Some("3") => Ok(AltoVersion::V3),
        Some(other) => Err(IngestError::Unsupported(format!(
            "ALTO version {other} (supported: 2, 3)"
        ))),
        None => Err(IngestError::Unsupported(
            "ALTO root carries neither a versioned namespace nor SCHEMAVERSION".into(),
        )),
    }
}

fn attr_value(attr: &quick_xml::events::attributes::Attribute<'_>, offset: u64) -> Result<String> {
    attr.normalized_value(XmlVersion::Implicit1_0)
        .map(|v| v.into_owned())
        .map_err(|e| IngestError::Xml {
            offset,
            message: e.to_string(),
        })
}

#[derive(Debug, Default)]
struct StringAttrs {
    content: String,
    confidence: Option<String>,
    subs_type: Option<String>,
    subs_content: Option<String>,
}

fn read_string_attrs(e: &BytesStart<'_>, offset: u64) -> Result<StringAttrs> {
    let mut out = StringAttrs::default();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| IngestError::Xml {
            offset,
            message: err.to_string(),
        })?;
        match attr.key.local_name().as_ref() {
            "CONTENT" => out.content = attr_value(&attr, offset)?,
            "WC" => out.confidence = Some(attr_value(&attr, offset)?),
            "SUBS_TYPE" => out.subs_type = Some(attr_value(&attr, offset)?),
            "SUBS_CONTENT" => out.subs_content = Some(attr_value(&attr, offset)?),
            _ => {}
        }
    }
    Ok(out)
}

/// A word whose line ended in a hyphenation marker, waiting for its
/// continuation on the next line.
#[derive(Debug)]
struct PendingHyphen {
    text: String,
    confidence: f64,
    subs_content: Option<String>,
}

const HYPHENS: [char; 4] = ['-', '\u{00AD}', '\u{2010}', '¬'];

#[derive(Default)]
struct BlockBuilder {
    words: Vec<OcrWord>,
    pending: Option<PendingHyphen>,
}

impl BlockBuilder {
    fn flush_pending(&mut self) {
        if let Some(p) = self.pending.take() {
            self.push_split(&p.text, p.confidence);
        }
    }

    fn push_split(&mut self, text: &str, confidence: f64) {
        for piece in text.split_whitespace() {
            self.words.push(OcrWord {
                text: piece.to_string(),
                confidence,
            });
        }
    }

    /// A `HYP` element closed the line: the last word continues on the next.
    fn mark_hyphen(&mut self) {
        if self.pending.is_some() {
            return;
        }
        if let Some(last) = self.words.pop() {
            let text = last.text.trim_end_matches(HYPHENS).to_string();
            self.pending = Some(PendingHyphen {
                text,
                confidence: last.confidence,
                subs_content: None,
            });
        }
    }

    fn finish(mut self) -> OcrParagraph {
        self.flush_pending();
        OcrParagraph { words: self.words }
    }
}

/// Parses an ALTO v2/v3 file. `String` elements become words (layout
/// attributes are ignored), `TextBlock` elements become paragraphs and
/// `Page` elements become pages.
///
/// Words split across lines are joined when the source marks the split,
/// either with `SUBS_TYPE="HypPart1"`/`"HypPart2"` or with a `HYP` element
/// closing the line. The joined word takes `SUBS_CONTENT` when present,
/// otherwise the concatenated parts, and the mean of the parts' confidences.
pub fn parse_alto(xml: &[u8], metadata: DocumentMetadata, opts: AltoOptions) -> Result<OcrDocument> {
    let mut reader = Reader::from_reader(xml);
    reader.config_mut().check_end_names = true;
    let mut buf = Vec::new();
    let mut depth = 0usize;
    let mut saw_root = false;
    let mut pages: Vec<OcrPage> = Vec::new();
    let mut page: Option<OcrPage> = None;
    let mut block: Option<BlockBuilder> = None;

    loop {
        let offset = reader.buffer_position();
        let event = reader.read_event_into(&mut buf).map_err(|e| IngestError::Xml {
            offset: reader.error_position(),
            message: e.to_string(),
        })?;
        let (start, is_empty) = match &event {
            Event::Start(e) => (Some(e.clone()), false),
            Event::Empty(e) => (Some(e.clone()), true),
            _ => (None, false),
        };
        if let Some(e) = start {
            if !saw_root {
                if e.local_name().as_ref() != "alto" {
                    return Err(IngestError::Unsupported(format!(
                        "root element <{}> is not <alto>",
                        e.name().as_ref()
                    )));
                }
                detect_alto_version(&e, offset)?;
                saw_root = true;
            }
            match e.local_name().as_ref() {
                "Page" => {
                    if let Some(p) = page.take() {
                        pages.push(p);
                    }
                    page = Some(OcrPage::default());
                    if is_empty {
                        pages.push(page.take().unwrap_or_default());
                    }
                }
                "TextBlock" => {
                    block = Some(BlockBuilder::default());
                    if is_empty {
                        close_block(&mut block, &mut page);
                    }
                }
                "HYP" => {
                    if let Some(b) = block.as_mut() {
                        b.mark_hyphen();
                    }
                }
                "String" => {
                    let attrs = read_string_attrs(&e, offset)?;
                    let confidence = parse_confidence(attrs.confidence.as_deref(), opts, offset)?;
                    if let Some(b) = block.as_mut() {
                        push_alto_word(b, attrs, confidence);
                    }
                }
                _ => {}
            }
            if !is_empty {
                depth += 1;
            }
            buf.clear();
            continue;
        }
        match event {
            Event::End(e) => {
                depth = depth.saturating_sub(1);
                match e.local_name().as_ref() {
                    "TextBlock" => close_block(&mut block, &mut page),
                    "Page" => {
                        if let Some(p) = page.take() {
                            pages.push(p);
                        }
                    }
                    _ => {}
                }
            }
            Event::Eof => {
                if depth != 0 {
                    return Err(IngestError::Xml {
                        offset: reader.buffer_position(),
                        message: format!("unexpected end of input with {depth} unclosed element(s)"),
                    });
                }
                if !saw_root {
                    return Err(IngestError::Xml {
                        offset: reader.buffer_position(),
                        message: "no root element".into(),
                    });
                }
                break;
            }
            _ => {}
        }
        buf.clear();
    }
    if let Some(p) = page.take() {
        pages.push(p);
    }

    Ok(OcrDocument {
        metadata,
        pages,
        is_born_digital: false,
    })
}

fn close_block(block: &mut Option<BlockBuilder>, page: &mut Option<OcrPage>) {
    if let Some(b) = block.take() {
        let para = b.finish();
        // TextBlocks outside any Page still need a home
        page.get_or_insert_with(OcrPage::default).paragraphs.push(para);
    }
}

fn parse_confidence(raw: Option<&str>, opts: AltoOptions, offset: u64) -> Result<f64> {
    let Some(raw) = raw else {
        if opts.strict_confidence {
            return Err(IngestError::Validation {
                element: "String".into(),
                offset,
                message: "missing WC attribute (strict mode)".into(),
            });
        }
        return Ok(1.0);
    };
    let value: f64 = raw.trim().parse().map_err(|_| IngestError::Validation {
        element: "String".into(),
        offset,
        message: format!("WC={raw:?} is not a number"),
    })?;
    if !(0.0..=1.0).contains(&value) {
        return Err(IngestError::Validation {
            element: "String".into(),
            offset,
            message: format!("WC={raw} outside [0, 1]"),
        });
    }
    Ok(value)
}

fn push_alto_word(b: &mut BlockBuilder, attrs: StringAttrs, confidence: f64) {
    let subs = attrs.subs_type.as_deref();
    if let Some(pending) = b.pending.take() {
        // a line closed with a hyphenation marker: the next word continues it
        if subs == Some("HypPart2") || subs.is_none() {
            let text = pending
                .subs_content
                .filter(|s| !s.trim().is_empty() && !s.contains(char::is_whitespace))
                .unwrap_or_else(|| format!("{}{}", pending.text, attrs.content.trim()));
            b.push_split(&text, (pending.confidence + confidence) / 2.0);
            return;
        }
        b.pending = Some(pending);
        b.flush_pending();
    }
    if subs == Some("HypPart1") {
        let text = attrs.content.trim().trim_end_matches(HYPHENS).to_string();
        b.pending = Some(PendingHyphen {
            text,
            confidence,
            subs_content: attrs.subs_content,
        });
        return;
    }
    b.push_split(&attrs.content, confidence);
}

/// Splits born-digital text into paragraphs on blank lines and words on
/// whitespace. Every word carries confidence 1.0.
pub fn parse_plaintext(bytes: &[u8], metadata: DocumentMetadata) -> Result<OcrDocument> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::Encoding {
        offset: e.valid_up_to(),
    })?;
    let mut paragraphs = Vec::new();
    let mut current: Vec<OcrWord> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(OcrParagraph {
                    words: std::mem::take(&mut current),
                });
            }
            continue;
        }
        current.extend(line.split_whitespace().map(|w| OcrWord {
            text: w.to_string(),
            confidence: 1.0,
        }));
    }
    if !current.is_empty() {
        paragraphs.push(OcrParagraph { words: current });
    }
    let pages = if paragraphs.is_empty() {
        Vec::new()
    } else {
        vec![OcrPage { paragraphs }]
    };
    Ok(OcrDocument {
        metadata,
        pages,
        is_born_digital: true,
    })
}

/// Reads a METS package: every `FLocat` reference to an `.xml` file is parsed
/// as ALTO, in document order, and the resulting pages are concatenated.
/// Relative references resolve against the METS file's directory.
pub fn parse_mets_package(path: &Path, metadata: DocumentMetadata, opts: AltoOptions) -> Result<OcrDocument> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut pages = Vec::new();
    for href in mets_alto_refs(&bytes)? {
        let href = href.strip_prefix("file://").unwrap_or(&href);
        let alto_path = base.join(href);
        let alto = std::fs::read(&alto_path).map_err(|source| IngestError::Io {
            path: alto_path.clone(),
            source,
        })?;
        let doc = parse_alto(&alto, metadata.clone(), opts)?;
        pages.extend(doc.pages);
    }
    Ok(OcrDocument {
        metadata,
        pages,
        is_born_digital: false,
    })
}

/// Collects ALTO file references (`FLocat/@xlink:href` ending in `.xml`).
pub fn mets_alto_refs(xml: &[u8]) -> Result<Vec<String>> {
    let mut reader = Reader::from_reader(xml);
    let mut buf = Vec::new();
    let mut refs = Vec::new();
    loop {
        let offset = reader.buffer_position();
        match reader.read_event_into(&mut buf).map_err(|e| IngestError::Xml {
            offset: reader.error_position(),
            message: e.to_string(),
        })? {
            Event::Start(e) | Event::Empty(e) if e.local_name().as_ref() == "FLocat" => {
                for attr in e.attributes() {
                    let attr = attr.map_err(|err| IngestError::Xml {
                        offset,
                        message: err.to_string(),
                    })?;
                    if attr.key.local_name().as_ref() == "href" {
                        let v = attr_value(&attr, offset)?;
                        if v.to_ascii_lowercase().ends_with(".xml") {
                            refs.push(v);
                        }
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    Ok(refs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub metadata: DocumentMetadata,
    pub path: PathBuf,
}

/// Parses a tab-separated manifest: `doc_id, source_kind, digitization_date,
/// path` with an optional fifth `language_hint` column. Empty lines and lines
/// starting with `#` are skipped; `-` or an empty field means "no date".
/// Relative paths resolve against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 || cols.len() > 5 {
            return Err(IngestError::Manifest {
                line: lineno,
                message: format!("expected 4 or 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let doc_id = cols[0].trim().to_string();
        if doc_id.is_empty() {
            return Err(IngestError::Manifest {
                line: lineno,
                message: "empty doc_id".into(),
            });
        }
        let source_kind = cols[1]
            .trim()
            .parse()
            .map_err(|message| IngestError::Manifest { line: lineno, message })?;
        let date = match cols[2].trim() {
            "" | "-" => None,
            d => Some(NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|e| IngestError::Manifest {
                line: lineno,
                message: format!("bad date {d:?}: {e}"),
            })?),
        };
        let language_hint = cols
            .get(4)
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        if !seen.insert(doc_id.clone()) {
            return Err(IngestError::DuplicateDocId(doc_id));
        }
        let path = PathBuf::from(cols[3].trim());
        let path = if path.is_absolute() { path } else { base_dir.join(path) };
        entries.push(ManifestEntry {
            metadata: DocumentMetadata {
                doc_id,
                source_kind,
                digitization_date: date,
                language_hint,
            },
            path,
        });
    }
    Ok(entries)
}

/// Loads one manifest entry, dispatching on content: ALTO and METS XML by
/// their root element, anything else as UTF-8 plain text.
pub fn load_entry(entry: &ManifestEntry, opts: AltoOptions) -> Result<OcrDocument> {
    let bytes = std::fs::read(&entry.path).map_err(|source| IngestError::Io {
        path: entry.path.clone(),
        source,
    })?;
    match xml_root_name(&bytes).as_deref() {
        Some("alto") => parse_alto(&bytes, entry.metadata.clone(), opts),
        Some("mets") => parse_mets_package(&entry.path, entry.metadata.clone(), opts),
        Some(other) => Err(IngestError::Unsupported(format!(
            "{}: XML root <{other}> is neither ALTO nor METS",
            entry.path.display()
        ))),
        None => parse_plaintext(&bytes, entry.metadata.clone()),
    }
}

fn xml_root_name(bytes: &[u8]) -> Option<String> {
    let head = bytes.iter().position(|b| !b.is_ascii_whitespace())?;
    let bytes = bytes.get(head..)?;
    if !bytes.starts_with(b"<") {
        return None;
    }
    let mut reader = Reader::from_reader(bytes);
    let mut buf = Vec::new();
    loop {
        match reader.read_event_into(&mut buf) {
            Ok(Event::Start(e)) | Ok(Event::Empty(e)) => {
                return Some(e.local_name().as_ref().to_string())
            }
            Ok(Event::Eof) | Err(_) => return None,
            _ => {}
        }
        buf.clear();
    }
}
