//! Pipeline configuration, read from a TOML file.
//!
//! ```toml
//! manifest = "manifest.tsv"      # required; tab-separated document list
//! output_dir = "out"             # required
//! vocab = "vocab.txt"            # required when the export stage runs
//! lexicons = ["extra.tsv"]       # optional; the shipped lexicons otherwise
//! seed = 42
//! shard_count = 16
//! threads = 0                    # 0 = all cores
//! stages = ["ingest", "filter", "clean", "dedup", "lang", "export", "stats"]
//!
//! [ingest]
//! strict_confidence = false
//!
//! [filter]
//! min_paragraph_confidence = 0.8
//! min_page_confidence = 0.9
//! min_doc_words = 20
//! min_avg_words_per_paragraph = 6.0
//! exclude_period = true
//! excluded_period_start = 2006-01-01
//! excluded_period_end = 2008-12-31
//!
//! [dedup]
//! verify_fingerprints = false
//! capacity = 100000000           # per shard; omitted = unbounded
//!
//! [lang]
//! score_floor = 0.05
//!
//! [export]
//! seq_lens = [128, 512]
//! mode = "pair-with-nsp"         # or "single-segment"
//! docs_per_shard = 256
//! debug_jsonl = false
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Scratch space for dedup defaults to `<output_dir>/scratch` and can be moved
//! with the `CORPUSFORGE_SCRATCH` environment variable.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::export::PackMode;
use crate::filter::{DateInterval, FilterConfig};
use crate::lang::DEFAULT_SCORE_FLOOR;
use crate::pipeline::Stage;

pub const SCRATCH_ENV: &str = "CORPUSFORGE_SCRATCH";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub strict_confidence: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub min_paragraph_confidence: f64,
    pub min_page_confidence: f64,
    pub min_doc_words: usize,
    pub min_avg_words_per_paragraph: f64,
    pub exclude_period: bool,
    pub excluded_period_start: NaiveDate,
    pub excluded_period_end: NaiveDate,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterConfig::default();
        let p = d.excluded_period.expect("default period");
        Self {
            min_paragraph_confidence: d.min_paragraph_confidence,
            min_page_confidence: d.min_page_confidence,
            min_doc_words: d.min_doc_words,
            min_avg_words_per_paragraph: d.min_avg_words_per_paragraph,
            exclude_period: true,
            excluded_period_start: p.start,
            excluded_period_end: p.end,
        }
    }
}

impl FilterSection {
    pub fn to_filter_config(&self) -> FilterConfig {
        FilterConfig {
            min_paragraph_confidence: self.min_paragraph_confidence,
            min_page_confidence: self.min_page_confidence,
            min_doc_words: self.min_doc_words,
            min_avg_words_per_paragraph: self.min_avg_words_per_paragraph,
            excluded_period: self.exclude_period.then_some(DateInterval {
                start: self.excluded_period_start,
                end: self.excluded_period_end,
            }),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSection {
    pub verify_fingerprints: bool,
    pub capacity: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangSection {
    pub score_floor: f64,
}

impl Default for LangSection {
    fn default() -> Self {
        Self { score_floor: DEFAULT_SCORE_FLOOR }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    pub seq_lens: Vec<usize>,
    pub mode: PackMode,
    pub docs_per_shard: usize,
    pub debug_jsonl: bool,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self {
            seq_lens: vec![128, 512],
            mode: PackMode::PairWithNsp,
            docs_per_shard: crate::export::DEFAULT_DOCS_PER_SHARD,
            debug_jsonl: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    #[serde(default)]
    pub lexicons: Vec<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shards")]
    pub shard_count: usize,
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "Stage::all")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub scratch_dir: Option<PathBuf>,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub dedup: DedupSection,
    #[serde(default)]
    pub lang: LangSection,
    #[serde(default)]
    pub export: ExportSection,
}

fn default_shards() -> usize {
    16
}

impl PipelineConfig {
    /// Defaults for everything but the two required paths.
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            output_dir: output_dir.into(),
            vocab: None,
            lexicons: Vec::new(),
            seed: 0,
            shard_count: default_shards(),
            threads: 0,
            stages: Stage::all(),
            scratch_dir: None,
            ingest: IngestSection::default(),
            filter: FilterSection::default(),
            dedup: DedupSection::default(),
            lang: LangSection::default(),
            export: ExportSection::default(),
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = origin.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.output_dir);
        self.vocab.iter_mut().for_each(fix);
        self.lexicons.iter_mut().for_each(fix);
        self.scratch_dir.iter_mut().for_each(fix);
    }

    /// Scratch directory: the environment variable wins over the config key,
    /// which wins over `<output_dir>/scratch`.
    pub fn scratch_dir(&self) -> PathBuf {
        if let Some(env) = std::env::var_os(SCRATCH_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(env);
        }
        self.scratch_dir.clone().unwrap_or_else(|| self.output_dir.join("scratch"))
    }

    pub fn filter_config(&self) -> FilterConfig {
        self.filter.to_filter_config()
    }

    /// Checks values and that every referenced input exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.filter_config().validate().map_err(ConfigError::Invalid)?;
        if self.shard_count == 0 {
            return invalid("shard_count must be >= 1".into());
        }
        if self.stages.is_empty() {
            return invalid("no stages selected".into());
        }
        if !(self.lang.score_floor >= 0.0) {
            return invalid(format!("lang.score_floor = {} must be >= 0", self.lang.score_floor));
        }
        for &n in &self.export.seq_lens {
            crate::export::pack::check_seq_len(n).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.export.docs_per_shard == 0 {
            return invalid("export.docs_per_shard must be >= 1".into());
        }
        if self.stages.contains(&Stage::Ingest) && !self.manifest.is_file() {
            return invalid(format!("manifest {} not found", self.manifest.display()));
        }
        if self.stages.contains(&Stage::Export) {
            match &self.vocab {
                None => return invalid("the export stage needs `vocab`".into()),
                Some(v) if !v.is_file() => return invalid(format!("vocabulary {} not found", v.display())),
                _ => {}
            }
        }
        for l in &self.lexicons {
            if !l.is_file() {
                return invalid(format!("lexicon file {} not found", l.display()));
            }
        }
        Ok(())
    }
}
