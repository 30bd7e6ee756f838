//! Stage orchestration, checkpointing and corpus statistics.
//!
//! Output tree under `output_dir`:
//!
//! ```text
//! ingest/documents.jsonl        one OcrDocument per line, manifest order
//! filter/retained.jsonl         accepted documents with their kept paragraphs
//! filter/verdicts.jsonl         one FilterVerdict per document
//! clean/paragraphs.jsonl        CleanParagraph, global sequence numbers
//! dedup/paragraphs.jsonl        survivors, byte-identical lines
//! dedup/stats.json
//! lang/paragraphs.jsonl         survivors with `language` set
//! lang/composition.json
//! export/seq128/, export/seq512/
//! stats/corpus_stats.json, stats/table.txt, stats/table.csv
//! checkpoints/<stage>.json      fingerprint + output digests
//! ```
//!
//! A stage is skipped when its checkpoint fingerprint (settings plus the
//! digests of its inputs) matches and every recorded output still has the
//! recorded digest. Checkpoints carry no timestamps, so identical runs give
//! identical trees.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clean::{clean_paragraph, CleanParagraph, CANONICAL_TABLE};
use crate::config::{ConfigError, PipelineConfig};
use crate::dedup::{dedup_sharded, DedupError, DedupOptions, DedupStats, ShardedOptions, FINGERPRINT_VERSION};
use crate::export::{export_set, tokenize_documents, ExportOptions, ExportSummary, Vocabulary};
use crate::filter::{filter_document, FilterVerdict};
use crate::ingest::{load_entry, parse_manifest, AltoOptions, DocumentMetadata, ManifestEntry, OcrDocument};
use crate::lang::{
    default_lexicons, parse_lexicons, CompositionCounts, CompositionReport, Language, LanguageClassifier,
};
use crate::util::{read_json_lines, sha256_bytes, sha256_file, write_json_line, AtomicFile};

const BATCH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Filter,
    Clean,
    Dedup,
    Lang,
    Export,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Filter,
        Stage::Clean,
        Stage::Dedup,
        Stage::Lang,
        Stage::Export,
        Stage::Stats,
    ];

    pub fn all() -> Vec<Stage> {
        Self::ALL.to_vec()
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Filter => "filter",
            Stage::Clean => "clean",
            Stage::Dedup => "dedup",
            Stage::Lang => "lang",
            Stage::Export => "export",
            Stage::Stats => "stats",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed{}: {message}", .doc_id.as_ref().map(|d| format!(" on document {d}")).unwrap_or_default())]
    Stage {
        stage: Stage,
        doc_id: Option<String>,
        message: String,
    },
    #[error("stage {stage}: input {path} is missing; run the {needs} stage first")]
    MissingInput { stage: Stage, needs: Stage, path: PathBuf },
    #[error("stage {stage}: {path}: {source}")]
    Io {
        stage: Stage,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, PipelineError>;

fn stage_err(stage: Stage, doc_id: Option<&str>, message: impl ToString) -> PipelineError {
    PipelineError::Stage {
        stage,
        doc_id: doc_id.map(str::to_string),
        message: message.to_string(),
    }
}

/// Paths of every artifact below the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn documents(&self) -> PathBuf {
        self.root.join("ingest/documents.jsonl")
    }
    pub fn retained(&self) -> PathBuf {
        self.root.join("filter/retained.jsonl")
    }
    pub fn verdicts(&self) -> PathBuf {
        self.root.join("filter/verdicts.jsonl")
    }
    pub fn cleaned(&self) -> PathBuf {
        self.root.join("clean/paragraphs.jsonl")
    }
    pub fn deduped(&self) -> PathBuf {
        self.root.join("dedup/paragraphs.jsonl")
    }
    pub fn dedup_stats(&self) -> PathBuf {
        self.root.join("dedup/stats.json")
    }
    pub fn labelled(&self) -> PathBuf {
        self.root.join("lang/paragraphs.jsonl")
    }
    pub fn composition(&self) -> PathBuf {
        self.root.join("lang/composition.json")
    }
    pub fn export_dir(&self, seq_len: usize) -> PathBuf {
        self.root.join(format!("export/seq{seq_len}"))
    }
    pub fn export_summary(&self) -> PathBuf {
        self.root.join("export/summary.json")
    }
    pub fn stats_json(&self) -> PathBuf {
        self.root.join("stats/corpus_stats.json")
    }
    pub fn stats_text(&self) -> PathBuf {
        self.root.join("stats/table.txt")
    }
    pub fn stats_csv(&self) -> PathBuf {
        self.root.join("stats/table.csv")
    }
    pub fn checkpoint(&self, stage: Stage) -> PathBuf {
        self.root.join(format!("checkpoints/{stage}.json"))
    }

    fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }
}

/// A paragraph that survived filtering, before cleaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedText {
    pub paragraph_index: usize,
    pub page_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedDocument {
    pub metadata: DocumentMetadata,
    pub paragraphs: Vec<RetainedText>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: Stage,
    pub fingerprint: String,
    pub outputs: Vec<FileDigest>,
    pub summary: serde_json::Value,
}

/// Test hooks for exercising the resume path.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    #[doc(hidden)]
    pub interrupt_dedup_after_routing: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub stats: Option<CorpusStats>,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    run_pipeline_with(cfg, &RunOptions::default())
}

/// Runs the selected stages in their fixed order inside a thread pool of
/// `cfg.threads` workers (0 = one per core).
pub fn run_pipeline_with(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        let runner = Runner {
            cfg,
            layout: Layout::new(&cfg.output_dir),
            opts,
        };
        let mut report = RunReport::default();
        for stage in Stage::ALL {
            if !cfg.stages.contains(&stage) {
                continue;
            }
            if runner.run_stage(stage)? {
                report.executed.push(stage);
            } else {
                report.skipped.push(stage);
            }
        }
        if cfg.stages.contains(&Stage::Stats) {
            report.stats = Some(read_json(Stage::Stats, &runner.layout.stats_json())?);
        }
        Ok(report)
    })
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    layout: Layout,
    opts: &'a RunOptions,
}

impl Runner<'_> {
    /// Returns false when the stage was skipped as already complete.
    fn run_stage(&self, stage: Stage) -> Result<bool> {
        let fingerprint = self.fingerprint(stage)?;
        let cp_path = self.layout.checkpoint(stage);
        if let Ok(cp) = read_json::<Checkpoint>(stage, &cp_path) {
            if cp.fingerprint == fingerprint && self.outputs_intact(&cp) {
                return Ok(false);
            }
        }
        let _ = std::fs::remove_file(&cp_path);
        let (outputs, summary) = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Filter => self.filter()?,
            Stage::Clean => self.clean()?,
            Stage::Dedup => self.dedup()?,
            Stage::Lang => self.lang()?,
            Stage::Export => self.export()?,
            Stage::Stats => self.stats()?,
        };
        let outputs = outputs
            .iter()
            .map(|p| digest(stage, &self.layout, p))
            .collect::<Result<Vec<_>>>()?;
        let cp = Checkpoint {
            stage,
            fingerprint,
            outputs,
            summary,
        };
        write_json(stage, &cp_path, &cp)?;
        Ok(true)
    }

    fn outputs_intact(&self, cp: &Checkpoint) -> bool {
        cp.outputs.iter().all(|d| {
            let p = self.layout.root.join(&d.path);
            sha256_file(&p).map(|s| s == d.sha256).unwrap_or(false)
        })
    }

    /// Digest of everything that determines a stage's output: its settings
    /// and the recorded digests of the upstream stage outputs.
    fn fingerprint(&self, stage: Stage) -> Result<String> {
        let cfg = self.cfg;
        let manifest_digest = || -> Result<String> {
            sha256_file(&cfg.manifest).map_err(|source| PipelineError::Io {
                stage,
                path: cfg.manifest.clone(),
                source,
            })
        };
        let upstream = |s: Stage| -> Result<serde_json::Value> {
            let path = self.layout.checkpoint(s);
            if !path.is_file() {
                return Err(PipelineError::MissingInput {
                    stage,
                    needs: s,
                    path,
                });
            }
            let cp: Checkpoint = read_json(stage, &path)?;
            Ok(serde_json::to_value(cp.outputs).expect("serializable"))
        };
        let settings = match stage {
            Stage::Ingest => serde_json::json!({
                "manifest": manifest_digest()?,
                "ingest": cfg.ingest,
            }),
            Stage::Filter => serde_json::json!({
                "input": upstream(Stage::Ingest)?,
                "filter": cfg.filter,
            }),
            Stage::Clean => serde_json::json!({
                "input": upstream(Stage::Filter)?,
                "table": sha256_bytes(CANONICAL_TABLE.as_bytes()),
            }),
            Stage::Dedup => serde_json::json!({
                "input": upstream(Stage::Clean)?,
                "fingerprint": FINGERPRINT_VERSION,
                "dedup": cfg.dedup,
            }),
            Stage::Lang => {
                let mut lex = Vec::new();
                for l in &cfg.lexicons {
                    lex.push(sha256_file(l).map_err(|source| PipelineError::Io {
                        stage,
                        path: l.clone(),
                        source,
                    })?);
                }
                serde_json::json!({
                    "input": upstream(Stage::Dedup)?,
                    "manifest": manifest_digest()?,
                    "lexicons": lex,
                    "lang": cfg.lang,
                })
            }
            Stage::Export => {
                let vocab = cfg.vocab.as_ref().expect("validated");
                serde_json::json!({
                    "input": upstream(Stage::Lang)?,
                    "vocab": sha256_file(vocab).map_err(|source| PipelineError::Io {
                        stage,
                        path: vocab.clone(),
                        source,
                    })?,
                    "seed": cfg.seed,
                    "export": cfg.export,
                })
            }
            Stage::Stats => serde_json::json!({
                "input": upstream(Stage::Lang)?,
                "dedup": upstream(Stage::Dedup)?,
                "manifest": manifest_digest()?,
            }),
        };
        Ok(sha256_bytes(settings.to_string().as_bytes()))
    }

    fn manifest(&self, stage: Stage) -> Result<Vec<ManifestEntry>> {
        let path = &self.cfg.manifest;
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            stage,
            path: path.clone(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        parse_manifest(&text, base).map_err(|e| stage_err(stage, None, format!("{}: {e}", path.display())))
    }

    fn ingest(&self) -> Result<(Vec<PathBuf>, serde_json::Value)> {
        const S: Stage = Stage::Ingest;
        let entries = self.manifest(S)?;
        let out = self.layout.documents();
        let mut w = create(S, &out)?;
        let opts = AltoOptions {
            strict_confidence: self.cfg.ingest.strict_confidence,
        };
        let (mut docs, mut pages, mut words) = (0u64, 0u64, 0u64);
        for chunk in entries.chunks(256) {
            let loaded: Vec<_> = chunk.par_iter().map(|e| load_entry(e, opts)).collect();
            for (entry, doc) in chunk.iter().zip(loaded) {
                let doc = doc.map_err(|e| stage_err(S, Some(&entry.metadata.doc_id), e))?;
                docs += 1;
                pages += doc.pages.len() as u64;
                words += doc.word_count() as u64;
                write_json_line(&mut w, &doc).map_err(io(S, &out))?;
            }
        }
        w.commit().map_err(io(S, &out))?;
        Ok((
            vec![out],
            serde_json::json!({ "documents": docs, "pages": pages, "words": words }),
        ))
    }

    fn filter(&self) -> Result<(Vec<PathBuf>, serde_json::Value)> {
        const S: Stage = Stage::Filter;
        let input = self.layout.documents();
        let (retained_path, verdict_path) = (self.layout.retained(), self.layout.verdicts());
        let mut retained_w = create(S, &retained_path)?;
        let mut verdict_w = create(S, &verdict_path)?;
        let cfg = self.cfg.filter_config();
        let mut accepted = 0u64;
        let mut rejected = 0u64;
        let mut reasons: BTreeMap<String, u64> = BTreeMap::new();
        for_each_batch::<OcrDocument, _>(S, &input, |batch| {
            let results: Vec<(Option<RetainedDocument>, FilterVerdict)> = batch
                .par_iter()
                .map(|doc| {
                    let (kept, verdict) = filter_document(doc, &cfg);
                    let retained = verdict.accepted.then(|| RetainedDocument {
                        metadata: doc.metadata.clone(),
                        paragraphs: kept
                            .iter()
                            .map(|r| RetainedText {
                                paragraph_index: r.index,
                                page_index: r.page_index,
                                text: r.paragraph.text(),
                            })
                            .collect(),
                    });
                    (retained, verdict)
                })
                .collect();
            for (retained, verdict) in results {
                if let Some(r) = retained {
                    accepted += 1;
                    write_json_line(&mut retained_w, &r).map_err(io(S, &retained_path))?;
                } else {
                    rejected += 1;
                    for r in &verdict.rejection_reasons {
                        let key = serde_json::to_value(r).expect("serializable");
                        *reasons.entry(key.as_str().unwrap_or_default().to_string()).or_default() += 1;
                    }
                }
                write_json_line(&mut verdict_w, &verdict).map_err(io(S, &verdict_path))?;
            }
            Ok(())
        })?;
        retained_w.commit().map_err(io(S, &retained_path))?;
        verdict_w.commit().map_err(io(S, &verdict_path))?;
        Ok((
            vec![retained_path, verdict_path],
            serde_json::json!({ "accepted": accepted, "rejected": rejected, "rejection_reasons": reasons }),
        ))
    }

    fn clean(&self) -> Result<(Vec<PathBuf>, serde_json::Value)> {
        const S: Stage = Stage::Clean;
        let input = self.layout.retained();
        let out = self.layout.cleaned();
        let mut w = create(S, &out)?;
        let mut next_seq = 0u64;
        let (mut written, mut emptied) = (0u64, 0u64);
        for_each_batch::<RetainedDocument, _>(S, &input, |batch| {
            // sequence numbers count every retained paragraph in order
            let mut jobs = Vec::new();
            for doc in batch.iter() {
                for p in &doc.paragraphs {
                    jobs.push((next_seq, &doc.metadata, p));
                    next_seq += 1;
                }
            }
            let cleaned: Vec<CleanParagraph> = jobs
                .par_iter()
                .map(|(seq, meta, p)| clean_paragraph(&p.text, *seq, p.paragraph_index, meta))
                .collect();
            for c in cleaned {
                if c.text.is_empty() {
                    emptied += 1;
                    continue;
                }
                written += 1;
                write_json_line(&mut w, &c).map_err(io(S, &out))?;
            }
            Ok(())
        })?;
        w.commit().map_err(io(S, &out))?;
        Ok((
            vec![out],
            serde_json::json!({ "paragraphs": written, "dropped_empty": emptied }),
        ))
    }

    fn dedup(&self) -> Result<(Vec<PathBuf>, serde_json::Value)> {
        const S: Stage = Stage::Dedup;
        let input = self.layout.cleaned();
        require(S, Stage::Clean, &input)?;
        let out = self.layout.deduped();
        let work_dir = self.cfg.scratch_dir().join("dedup");
        let opts = ShardedOptions {
            work_dir: work_dir.clone(),
            output: out.clone(),
            dedup: DedupOptions {
                capacity: self.cfg.dedup.capacity,
                verify: self.cfg.dedup.verify_fingerprints,
            },
            abort_after_routing: self.opts.interrupt_dedup_after_routing,
        };
        let outcome = dedup_sharded(&[input], self.cfg.shard_count, &opts).map_err(|e| match e {
            DedupError::Interrupted => stage_err(S, None, "interrupted after routing; rerun to resume"),
            other => stage_err(S, None, other),
        })?;
        let _ = std::fs::remove_dir_all(&work_dir);
        let stats_path = self.layout.dedup_stats();
        write_json(S, &stats_path, &outcome.stats)?;
        Ok((vec![out, stats_path], serde_json::to_value(outcome.stats).expect("serializable")))
    }

    fn lang(&self) -> Result<(Vec<PathBuf>, serde_json::Value)> {
        const S: Stage = Stage::Lang;
        let hints: HashMap<String, String> = self
            .manifest(S)?
            .into_iter()
            .filter_map(|e| e.metadata.language_hint.map(|h| (e.metadata.doc_id, h)))
            .collect();
        let lexicons = if self.cfg.lexicons.is_empty() {
            default_lexicons()
        } else {
            let mut all = Vec::new();
            for path in &self.cfg.lexicons {
                let text = std::fs::read_to_string(path).map_err(io(S, path))?;
                all.extend(parse_lexicons(&text).map_err(|e| stage_err(S, None, format!("{}: {e}", path.display())))?);
            }
            all
        };
        let classifier =
            LanguageClassifier::new(&lexicons, self.cfg.lang.score_floor).map_err(|e| stage_err(S, None, e))?;
        let input = self.layout.deduped();
        let out = self.layout.labelled();
        let mut w = create(S, &out)?;
        let mut counts = CompositionCounts::default();
        for_each_batch::<CleanParagraph, _>(S, &input, |batch| {
            let labelled: Vec<(CleanParagraph, Option<Language>)> = batch
                .into_par_iter()
                .map(|mut p| {
                    let hint = hints.get(&p.doc_id).map(String::as_str);
                    let c = classifier.classify(&p.text, p.word_count, hint);
                    p.language = c.language.map(|l| l.code().to_string());
                    (p, c.language)
                })
                .collect();
            for (p, l) in labelled {
                counts.add(l, p.word_count as u64);
                write_json_line(&mut w, &p).map_err(io(S, &out))?;
            }
            Ok(())
        })?;
        w.commit().map_err(io(S, &out))?;
        let report = counts.report();
        let comp = self.layout.composition();
        write_json(S, &comp, &report)?;
        Ok((vec![out, comp], serde_json::to_value(&report).expect("serializable")))
    }

    fn export(&self) -> Result<(Vec<PathBuf>, serde_json::Value)> {
        const S: Stage = Stage::Export;
        let vocab_path = self.cfg.vocab.as_ref().expect("validated");
        let text = std::fs::read_to_string(vocab_path).map_err(io(S, vocab_path))?;
        let vocab = Vocabulary::parse(&text).map_err(|e| stage_err(S, None, format!("{}: {e}", vocab_path.display())))?;
        let input = self.layout.labelled();
        let mut paragraphs = Vec::new();
        for_each_batch::<CleanParagraph, _>(S, &input, |batch| {
            paragraphs.extend(batch);
            Ok(())
        })?;
        let docs = tokenize_documents(&paragraphs, &vocab);
        drop(paragraphs);
        let mut outputs = Vec::new();
        let mut summaries: Vec<ExportSummary> = Vec::new();
        for &seq_len in &self.cfg.export.seq_lens {
            let mut opts = ExportOptions::new(seq_len, self.cfg.export.mode, self.cfg.seed);
            opts.docs_per_shard = self.cfg.export.docs_per_shard;
            opts.debug_jsonl = self.cfg.export.debug_jsonl;
            let dir = self.layout.export_dir(seq_len);
            let summary = export_set(&docs, &vocab, &opts, &dir).map_err(|e| stage_err(S, None, e))?;
            outputs.push(dir.join(crate::export::RECORDS_FILE));
            outputs.push(dir.join(crate::export::SIDECAR_FILE));
            if opts.debug_jsonl {
                outputs.push(dir.join(crate::export::DEBUG_FILE));
            }
            summaries.push(summary);
        }
        let summary_path = self.layout.export_summary();
        write_json(S, &summary_path, &summaries)?;
        outputs.push(summary_path);
        Ok((outputs, serde_json::to_value(&summaries).expect("serializable")))
    }

    fn stats(&self) -> Result<(Vec<PathBuf>, serde_json::Value)> {
        const S: Stage = Stage::Stats;
        let dates: HashMap<String, NaiveDate> = self
            .manifest(S)?
            .into_iter()
            .filter_map(|e| e.metadata.digitization_date.map(|d| (e.metadata.doc_id, d)))
            .collect();
        let mut acc = StatsAccumulator::default();
        for_each_batch::<CleanParagraph, _>(S, &self.layout.labelled(), |batch| {
            for p in &batch {
                acc.add(p, dates.get(&p.doc_id).copied());
            }
            Ok(())
        })?;
        let mut stats = acc.finish();
        stats.dedup = read_json::<DedupStats>(S, &self.layout.dedup_stats()).ok();
        let (json, text, csv) = (self.layout.stats_json(), self.layout.stats_text(), self.layout.stats_csv());
        write_json(S, &json, &stats)?;
        write_text(S, &text, &report_table(&stats, TableFormat::Text))?;
        write_text(S, &csv, &report_table(&stats, TableFormat::Csv))?;
        let summary = serde_json::json!({ "total": stats.total });
        Ok((vec![json, text, csv], summary))
    }
}

fn io(stage: Stage, path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        stage,
        path: path.to_path_buf(),
        source,
    }
}

fn create(stage: Stage, path: &Path) -> Result<AtomicFile> {
    AtomicFile::create(path).map_err(io(stage, path))
}

fn require(stage: Stage, needs: Stage, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput {
            stage,
            needs,
            path: path.to_path_buf(),
        })
    }
}

fn upstream_of(path_stage: Stage) -> Stage {
    match path_stage {
        Stage::Filter => Stage::Ingest,
        Stage::Clean => Stage::Filter,
        Stage::Dedup => Stage::Clean,
        Stage::Lang => Stage::Dedup,
        Stage::Export | Stage::Stats => Stage::Lang,
        Stage::Ingest => Stage::Ingest,
    }
}

/// Streams a JSON-lines file in batches of [`BATCH`] records.
fn for_each_batch<T, F>(stage: Stage, path: &Path, mut f: F) -> Result<()>
where
    T: DeserializeOwned,
    F: FnMut(Vec<T>) -> Result<()>,
{
    require(stage, upstream_of(stage), path)?;
    let mut batch = Vec::with_capacity(BATCH);
    for item in read_json_lines::<T>(path).map_err(io(stage, path))? {
        let (_, rec) = item.map_err(io(stage, path))?;
        batch.push(rec);
        if batch.len() == BATCH {
            f(std::mem::replace(&mut batch, Vec::with_capacity(BATCH)))?;
        }
    }
    if !batch.is_empty() {
        f(batch)?;
    }
    Ok(())
}

fn read_json<T: DeserializeOwned>(stage: Stage, path: &Path) -> Result<T> {
    let f = File::open(path).map_err(io(stage, path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| io(stage, path)(e.into()))
}

fn write_json<T: Serialize>(stage: Stage, path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(stage, path, &text)
}

fn write_text(stage: Stage, path: &Path, text: &str) -> Result<()> {
    let mut w = create(stage, path)?;
    w.write_all(text.as_bytes()).map_err(io(stage, path))?;
    w.commit().map_err(io(stage, path))
}

fn digest(stage: Stage, layout: &Layout, path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::metadata(path).map_err(io(stage, path))?.len();
    Ok(FileDigest {
        path: layout.relative(path),
        bytes,
        sha256: sha256_file(path).map_err(io(stage, path))?,
    })
}

/// Counts for one source kind, or for the whole corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub source: String,
    pub first_year: Option<i32>,
    pub last_year: Option<i32>,
    pub documents: u64,
    pub paragraphs: u64,
    pub words: u64,
    /// UTF-8 bytes of cleaned paragraph text.
    pub bytes: u64,
}

impl SourceStats {
    fn named(source: &str) -> Self {
        Self {
            source: source.into(),
            ..Default::default()
        }
    }

    fn absorb(&mut self, o: &SourceStats) {
        self.documents += o.documents;
        self.paragraphs += o.paragraphs;
        self.words += o.words;
        self.bytes += o.bytes;
        self.first_year = min_opt(self.first_year, o.first_year);
        self.last_year = max_opt(self.last_year, o.last_year);
    }

    fn note_year(&mut self, year: i32) {
        self.first_year = min_opt(self.first_year, Some(year));
        self.last_year = max_opt(self.last_year, Some(year));
    }

    /// Words in millions, rounded half up.
    pub fn words_millions(&self) -> u64 {
        (self.words + 500_000) / 1_000_000
    }

    /// Decimal gigabytes (10^9 bytes).
    pub fn gigabytes(&self) -> f64 {
        self.bytes as f64 / 1e9
    }

    pub fn period(&self) -> String {
        match (self.first_year, self.last_year) {
            (Some(a), Some(b)) if a == b => a.to_string(),
            (Some(a), Some(b)) => format!("{a}-{b}"),
            _ => "-".into(),
        }
    }
}

fn min_opt(a: Option<i32>, b: Option<i32>) -> Option<i32> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    }
}

fn max_opt(a: Option<i32>, b: Option<i32>) -> Option<i32> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, y) => x.or(y),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// One row per source kind present, sorted by words descending.
    pub sources: Vec<SourceStats>,
    pub total: SourceStats,
    pub languages: CompositionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup: Option<DedupStats>,
}

pub const TOTAL_LABEL: &str = "Total (after deduplication)";

/// Streaming builder for [`CorpusStats`]. Paragraphs of one document must
/// arrive consecutively, which holds for every pipeline artifact.
#[derive(Debug, Default)]
pub struct StatsAccumulator {
    rows: BTreeMap<String, SourceStats>,
    last_doc: Option<String>,
    languages: CompositionCounts,
}

impl StatsAccumulator {
    pub fn add(&mut self, p: &CleanParagraph, date: Option<NaiveDate>) {
        let kind = p.source_kind.as_str();
        let row = self.rows.entry(kind.to_string()).or_insert_with(|| SourceStats::named(kind));
        if self.last_doc.as_deref() != Some(p.doc_id.as_str()) {
            row.documents += 1;
            if let Some(d) = date {
                row.note_year(d.year());
            }
            self.last_doc = Some(p.doc_id.clone());
        }
        row.paragraphs += 1;
        row.words += p.word_count as u64;
        row.bytes += p.text.len() as u64;
        let lang = p.language.as_deref().and_then(|c| c.parse::<Language>().ok());
        self.languages.add(lang, p.word_count as u64);
    }

    pub fn finish(self) -> CorpusStats {
        let mut sources: Vec<SourceStats> = self.rows.into_values().collect();
        sources.sort_by(|a, b| b.words.cmp(&a.words).then_with(|| a.source.cmp(&b.source)));
        let mut total = SourceStats::named(TOTAL_LABEL);
        for r in &sources {
            total.absorb(r);
        }
        CorpusStats {
            sources,
            total,
            languages: self.languages.report(),
            dedup: None,
        }
    }
}

/// Stats over already-loaded paragraphs, for callers outside the pipeline.
pub fn corpus_stats<'a>(
    paragraphs: impl IntoIterator<Item = &'a CleanParagraph>,
    dates: &HashMap<String, NaiveDate>,
) -> CorpusStats {
    let mut acc = StatsAccumulator::default();
    for p in paragraphs {
        acc.add(p, dates.get(&p.doc_id).copied());
    }
    acc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "text" | "txt" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(format!("unknown table format {other:?} (text | csv | json)")),
        }
    }
}

#[derive(Serialize)]
struct JsonRow<'a> {
    source: &'a str,
    period: String,
    words_millions: u64,
    gigabytes: f64,
    documents: u64,
    paragraphs: u64,
    words: u64,
    bytes: u64,
}

impl<'a> From<&'a SourceStats> for JsonRow<'a> {
    fn from(r: &'a SourceStats) -> Self {
        Self {
            source: &r.source,
            period: r.period(),
            words_millions: r.words_millions(),
            gigabytes: r.gigabytes(),
            documents: r.documents,
            paragraphs: r.paragraphs,
            words: r.words,
            bytes: r.bytes,
        }
    }
}

/// Renders the corpus composition table: one row per source, largest first,
/// then the total. Sizes are decimal gigabytes of UTF-8 cleaned text.
pub fn report_table(stats: &CorpusStats, format: TableFormat) -> String {
    let mut rows: Vec<&SourceStats> = stats.sources.iter().collect();
    rows.sort_by(|a, b| b.words.cmp(&a.words).then_with(|| a.source.cmp(&b.source)));
    match format {
        TableFormat::Text => {
            let width = rows
                .iter()
                .map(|r| r.source.len())
                .chain([stats.total.source.len(), "Source".len()])
                .max()
                .unwrap_or(6);
            let mut s = format!(
                "{:<width$}  {:>9}  {:>12}  {:>14}\n",
                "Source", "Period", "Words (M)", "GB (10^9 B)"
            );
            let line = |r: &SourceStats| {
                format!(
                    "{:<width$}  {:>9}  {:>12}  {:>14.3}\n",
                    r.source,
                    r.period(),
                    r.words_millions(),
                    r.gigabytes()
                )
            };
            for r in &rows {
                s.push_str(&line(r));
            }
            s.push_str(&line(&stats.total));
            if stats.languages.total_words > 0 {
                s.push_str("\nLanguage  Share\n");
                for (l, share) in &stats.languages.languages {
                    s.push_str(&format!("{:<8}  {:>5.1}%\n", l.code(), share.fraction * 100.0));
                }
                s.push_str(&format!("{:<8}  {:>5.1}%\n", "unknown", stats.languages.unknown.fraction * 100.0));
            }
            s
        }
        TableFormat::Csv => {
            let mut s = String::from("source,period,words_millions,gigabytes_decimal,documents,paragraphs,words,bytes\n");
            for r in rows.into_iter().chain([&stats.total]) {
                s.push_str(&format!(
                    "{},{},{},{:.6},{},{},{},{}\n",
                    csv_field(&r.source),
                    r.period(),
                    r.words_millions(),
                    r.gigabytes(),
                    r.documents,
                    r.paragraphs,
                    r.words,
                    r.bytes
                ));
            }
            s
        }
        TableFormat::Json => {
            let value = serde_json::json!({
                "gigabyte": "10^9 bytes of UTF-8 cleaned text",
                "rows": rows.into_iter().map(JsonRow::from).collect::<Vec<_>>(),
                "total": JsonRow::from(&stats.total),
                "languages": stats.languages,
            });
            let mut s = serde_json::to_string_pretty(&value).expect("serializable");
            s.push('\n');
            s
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads the labelled paragraphs of a finished run, e.g. for ad-hoc reports.
pub fn read_paragraphs(path: &Path) -> std::io::Result<Vec<CleanParagraph>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::from)?);
    }
    Ok(out)
}
