//! Synthetic data generators and brute-force oracles shared by the
//! integration and acceptance tests. Confidences are kept as integer
//! thousandths so the oracles can use exact arithmetic.

#![allow(dead_code)]

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use corpusforge::config::PipelineConfig;
use corpusforge::ingest::SourceKind;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "ber", "dan", "gor", "hul"];

pub fn random_word(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// Vocabulary in which every generated word tokenizes without UNK.
pub fn toy_vocab_text() -> String {
    let mut lines: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"].iter().map(|s| s.to_string()).collect();
    for s in SYLLABLES {
        lines.push(s.to_string());
        lines.push(format!("##{s}"));
    }
    for w in ["kalo", "mine", "rusa", "tovi", ".", ","] {
        lines.push(w.to_string());
    }
    lines.join("\n") + "\n"
}

pub fn milli_str(t: u32) -> String {
    format!("{}.{:03}", t / 1000, t % 1000)
}

#[derive(Debug, Clone)]
pub struct SynthWord {
    pub text: String,
    pub milli: u32,
}

#[derive(Debug, Clone)]
pub struct SynthDoc {
    pub id: String,
    pub kind: SourceKind,
    pub date: Option<NaiveDate>,
    pub born_digital: bool,
    pub hint: Option<String>,
    /// pages → paragraphs → words
    pub pages: Vec<Vec<Vec<SynthWord>>>,
}

pub fn paragraph_text(words: &[SynthWord]) -> String {
    words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('"', "&quot;")
}

impl SynthDoc {
    pub fn to_alto(&self) -> String {
        let mut s = String::from(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<alto xmlns=\"http://www.loc.gov/standards/alto/ns-v3#\"><Layout>\n",
        );
        for (pi, page) in self.pages.iter().enumerate() {
            write!(s, "<Page ID=\"P{pi}\"><PrintSpace>").unwrap();
            for (bi, block) in page.iter().enumerate() {
                write!(s, "<TextBlock ID=\"B{pi}_{bi}\">").unwrap();
                for line in block.chunks(5) {
                    s.push_str("<TextLine>");
                    for (wi, w) in line.iter().enumerate() {
                        if wi > 0 {
                            s.push_str("<SP/>");
                        }
                        write!(s, "<String CONTENT=\"{}\" WC=\"{}\"/>", xml_escape(&w.text), milli_str(w.milli)).unwrap();
                    }
                    s.push_str("</TextLine>");
                }
                s.push_str("</TextBlock>");
            }
            s.push_str("</PrintSpace></Page>\n");
        }
        s.push_str("</Layout></alto>\n");
        s
    }

    pub fn to_plaintext(&self) -> String {
        let paras: Vec<String> = self.pages.iter().flatten().map(|p| paragraph_text(p)).collect();
        paras.join("\n\n") + "\n"
    }

    pub fn paragraphs(&self) -> impl Iterator<Item = &Vec<SynthWord>> {
        self.pages.iter().flatten()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntRules {
    pub paragraph_milli: u64,
    pub page_milli: u64,
    pub min_words: u64,
    pub min_avg: u64,
    pub excluded: Option<(NaiveDate, NaiveDate)>,
}

impl Default for IntRules {
    fn default() -> Self {
        Self {
            paragraph_milli: 800,
            page_milli: 900,
            min_words: 20,
            min_avg: 6,
            excluded: Some((ymd(2006, 1, 1), ymd(2008, 12, 31))),
        }
    }
}

pub fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Independent restatement of the filter rules in integer arithmetic.
/// Returns the retained paragraph texts, or `None` for a rejected document.
pub fn filter_oracle(doc: &SynthDoc, r: &IntRules) -> Option<Vec<String>> {
    if !doc.born_digital {
        if let (Some((a, b)), Some(d)) = (r.excluded, doc.date) {
            if a <= d && d <= b {
                return None;
            }
        }
    }
    let mut kept: Vec<&Vec<SynthWord>> = Vec::new();
    for page in &doc.pages {
        if !doc.born_digital {
            let n: u64 = page.iter().map(|p| p.len() as u64).sum();
            let sum: u64 = page.iter().flatten().map(|w| w.milli as u64).sum();
            if n == 0 || sum < r.page_milli * n {
                continue;
            }
        }
        for p in page {
            let n = p.len() as u64;
            let sum: u64 = p.iter().map(|w| w.milli as u64).sum();
            if doc.born_digital || (n > 0 && sum >= r.paragraph_milli * n) {
                kept.push(p);
            }
        }
    }
    let words: u64 = kept.iter().map(|p| p.len() as u64).sum();
    let paras = kept.len() as u64;
    if words < r.min_words || (paras > 0 && words < r.min_avg * paras) {
        return None;
    }
    Some(kept.iter().map(|p| paragraph_text(p)).collect())
}

/// Quadratic first-occurrence dedup: index i survives iff no j < i has the
/// same text.
pub fn dedup_oracle(texts: &[String]) -> Vec<usize> {
    (0..texts.len())
        .filter(|&i| (0..i).all(|j| texts[j] != texts[i]))
        .collect()
}

const DATES: [(i32, u32, u32); 6] = [(2005, 12, 31), (2006, 1, 1), (2007, 6, 15), (2008, 12, 31), (2009, 1, 1), (1998, 3, 2)];
const MILLI_LEVELS: [u32; 9] = [700, 780, 799, 800, 801, 850, 899, 900, 1000];
const OCR_KINDS: [SourceKind; 5] = [
    SourceKind::Book,
    SourceKind::NewspaperScan,
    SourceKind::ParliamentDoc,
    SourceKind::Periodical,
    SourceKind::PublicReport,
];
const DIGITAL_KINDS: [SourceKind; 3] = [SourceKind::WebCrawl, SourceKind::Wikipedia, SourceKind::OnlineNewspaper];

/// Paragraph word counts that land exactly on, or one off, the word-count
/// boundaries (20 words, 6.0 average).
const BOUNDARY_SHAPES: [&[usize]; 6] = [&[6, 6, 8], &[5, 5, 5, 5], &[6, 6, 6, 6], &[10, 10], &[19], &[4, 8, 6, 6]];

fn paragraph_milli(rng: &mut impl Rng, n: usize, level: u32) -> Vec<u32> {
    if level < 1000 && rng.gen_bool(0.3) && n >= 2 && n.is_multiple_of(2) {
        // mean exactly `level`, individual words spread around it
        let d = rng.gen_range(1..=(1000 - level).min(level).min(150));
        (0..n).map(|i| if i % 2 == 0 { level - d } else { level + d }).collect()
    } else {
        vec![level; n]
    }
}

/// A collection with planted confidences, dates, word counts and duplicate
/// paragraphs. `dup_rate` is the chance a paragraph copies an earlier one.
pub fn synth_collection(n_docs: usize, seed: u64, dup_rate: f64) -> Vec<SynthDoc> {
    let mut rng = rng(seed);
    let mut pool: Vec<Vec<String>> = Vec::new();
    let mut docs = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let born_digital = rng.gen_bool(0.15);
        let kind = if born_digital {
            *DIGITAL_KINDS.choose(&mut rng).unwrap()
        } else {
            *OCR_KINDS.choose(&mut rng).unwrap()
        };
        let date = if rng.gen_bool(0.1) {
            None
        } else if rng.gen_bool(0.5) {
            let (y, m, d) = *DATES.choose(&mut rng).unwrap();
            Some(ymd(y, m, d))
        } else {
            Some(ymd(rng.gen_range(1990..=2020), rng.gen_range(1..=12), rng.gen_range(1..=28)))
        };
        let shape: Vec<Vec<usize>> = if rng.gen_bool(0.25) {
            vec![BOUNDARY_SHAPES.choose(&mut rng).unwrap().to_vec()]
        } else {
            (0..rng.gen_range(1..=3))
                .map(|_| (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(1..=12)).collect())
                .collect()
        };
        let boundary_doc = shape.len() == 1 && BOUNDARY_SHAPES.iter().any(|s| *s == shape[0].as_slice());
        let pages = shape
            .iter()
            .map(|page| {
                let page_level = if boundary_doc {
                    *[900u32, 1000].choose(&mut rng).unwrap()
                } else {
                    *MILLI_LEVELS.choose(&mut rng).unwrap()
                };
                page.iter()
                    .map(|&n| {
                        let texts: Vec<String> = if !pool.is_empty() && rng.gen_bool(dup_rate) {
                            pool[rng.gen_range(0..pool.len())].clone()
                        } else {
                            (0..n).map(|_| random_word(&mut rng)).collect()
                        };
                        pool.push(texts.clone());
                        let level = if born_digital {
                            1000
                        } else if rng.gen_bool(0.7) {
                            page_level
                        } else {
                            *MILLI_LEVELS.choose(&mut rng).unwrap()
                        };
                        let millis = paragraph_milli(&mut rng, texts.len(), level);
                        texts
                            .into_iter()
                            .zip(millis)
                            .map(|(text, milli)| SynthWord {
                                text,
                                milli: if born_digital { 1000 } else { milli },
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let hint = match rng.gen_range(0..10) {
            0 => Some("nb".to_string()),
            1 => Some("nn".to_string()),
            _ => None,
        };
        docs.push(SynthDoc {
            id: format!("doc{i:05}"),
            kind,
            date,
            born_digital,
            hint,
            pages,
        });
    }
    docs
}

/// Writes documents (ALTO or plain text), a manifest and the toy vocabulary
/// under `dir`; returns a config pointing at `out`.
pub fn write_collection(dir: &Path, docs: &[SynthDoc], out: &Path) -> PipelineConfig {
    let src = dir.join("src");
    std::fs::create_dir_all(&src).unwrap();
    let mut manifest = String::from("# doc_id\tsource_kind\tdate\tpath\thint\n");
    for d in docs {
        let (name, body) = if d.born_digital {
            (format!("{}.txt", d.id), d.to_plaintext())
        } else {
            (format!("{}.alto.xml", d.id), d.to_alto())
        };
        std::fs::write(src.join(&name), body).unwrap();
        let date = d.date.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        let hint = d.hint.clone().unwrap_or_default();
        writeln!(manifest, "{}\t{}\t{}\tsrc/{}\t{}", d.id, d.kind.as_str(), date, name, hint).unwrap();
    }
    let manifest_path = dir.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest).unwrap();
    let vocab = dir.join("vocab.txt");
    std::fs::write(&vocab, toy_vocab_text()).unwrap();
    let mut cfg = PipelineConfig::new(manifest_path, out);
    cfg.vocab = Some(vocab);
    cfg.seed = 1234;
    cfg.shard_count = 4;
    cfg.scratch_dir = Some(dir.join("scratch"));
    cfg
}

/// Every file below `root` with its contents, sorted by relative path.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Random IOB2 sequence over `types` entity types, sometimes with a stray
/// I- tag to exercise lenient chunking.
pub fn random_bio(rng: &mut impl Rng, len: usize, types: &[&str]) -> Vec<String> {
    (0..len)
        .map(|_| match rng.gen_range(0..5) {
            0 | 1 => "O".to_string(),
            2 => format!("B-{}", types.choose(rng).unwrap()),
            _ => format!("I-{}", types.choose(rng).unwrap()),
        })
        .collect()
}

/// Brute-force chunk extraction: scans every (start, end) span and keeps the
/// ones that form a maximal chunk under lenient IOB2.
pub fn oracle_entities(tags: &[String]) -> HashSet<(String, usize, usize)> {
    let kind = |t: &str| t.get(2..).map(str::to_string);
    let starts_chunk = |i: usize| -> Option<String> {
        let t = &tags[i];
        if t.starts_with("B-") {
            return kind(t);
        }
        if t.starts_with("I-") {
            let k = kind(t).unwrap();
            let continues = i > 0 && tags[i - 1].len() > 2 && kind(&tags[i - 1]).as_deref() == Some(k.as_str());
            if !continues {
                return Some(k);
            }
        }
        None
    };
    let mut out = HashSet::new();
    for s in 0..tags.len() {
        let Some(k) = starts_chunk(s) else { continue };
        for e in s + 1..=tags.len() {
            let inner_ok = (s + 1..e).all(|j| tags[j] == format!("I-{k}"));
            let closed = e == tags.len() || tags[e] != format!("I-{k}");
            if inner_ok && closed {
                out.insert((k.clone(), s, e));
            }
        }
    }
    out
}
