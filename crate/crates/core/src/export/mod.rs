//! Pre-training example export: WordPiece tokenization, packing into
//! fixed-length examples (128 and 512 tokens) and static MLM masking.
//!
//! Documents are cut into shards of a fixed number of documents. Each shard
//! gets its own ChaCha8 stream (global seed, stream = shard index), so output
//! is identical whatever the thread count.

pub mod format;
pub mod mask;
pub mod pack;
pub mod vocab;
pub mod wordpiece;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clean::CleanParagraph;
use crate::util::{sha256_file, write_json_line, AtomicFile};

pub use format::{decode_records, RecordWriter, Sidecar};
pub use mask::{apply_mlm_mask, apply_mlm_mask_with, MaskStats};
pub use pack::{pack_examples, PackMode, PackStats, TokenizedDoc, TrainingExample};
pub use vocab::Vocabulary;
pub use wordpiece::wordpiece_tokenize;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("sequence length {0} not supported (128 or 512)")]
    SeqLen(usize),
    #[error("record format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io { path: path.to_path_buf(), source }
}

pub const DEFAULT_DOCS_PER_SHARD: usize = 256;
pub const RECORDS_FILE: &str = "records.bin";
pub const SIDECAR_FILE: &str = "records.schema.json";
pub const DEBUG_FILE: &str = "records.debug.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportOptions {
    pub seq_len: usize,
    pub mode: PackMode,
    pub seed: u64,
    pub docs_per_shard: usize,
    pub debug_jsonl: bool,
}

impl ExportOptions {
    pub fn new(seq_len: usize, mode: PackMode, seed: u64) -> Self {
        Self { seq_len, mode, seed, docs_per_shard: DEFAULT_DOCS_PER_SHARD, debug_jsonl: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub seq_len: usize,
    pub mode: PackMode,
    pub seed: u64,
    pub shards: usize,
    pub pack: PackStats,
    pub mask: MaskStats,
    pub records: u64,
    pub records_sha256: String,
}

/// Groups consecutive paragraphs of the same document and tokenizes them.
/// Paragraph order inside a document is the input order.
pub fn tokenize_documents(paragraphs: &[CleanParagraph], vocab: &Vocabulary) -> Vec<TokenizedDoc> {
    let ids: Vec<Vec<u32>> = paragraphs.par_iter().map(|p| wordpiece_tokenize(&p.text, vocab)).collect();
    let mut docs: Vec<TokenizedDoc> = Vec::new();
    for (p, toks) in paragraphs.iter().zip(ids) {
        match docs.last_mut() {
            Some(d) if d.doc_id == p.doc_id => d.paragraphs.push(toks),
            _ => docs.push(TokenizedDoc { doc_id: p.doc_id.clone(), paragraphs: vec![toks] }),
        }
    }
    docs
}

pub fn shard_rng(seed: u64, shard: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard as u64);
    rng
}

fn build_shard(
    shard: usize,
    docs: &[TokenizedDoc],
    vocab: &Vocabulary,
    opts: &ExportOptions,
) -> Result<(Vec<TrainingExample>, PackStats, MaskStats), ExportError> {
    let mut rng = shard_rng(opts.seed, shard);
    let (mut examples, pack) = pack_examples(docs, opts.seq_len, opts.mode, vocab, &mut rng)?;
    let mut mask = MaskStats::default();
    for ex in &mut examples {
        mask.merge(&apply_mlm_mask_with(ex, vocab, &mut rng));
    }
    Ok((examples, pack, mask))
}

/// Packs and masks every document, shard by shard, in parallel.
pub fn build_examples(
    docs: &[TokenizedDoc],
    vocab: &Vocabulary,
    opts: &ExportOptions,
) -> Result<(Vec<TrainingExample>, PackStats, MaskStats), ExportError> {
    pack::check_seq_len(opts.seq_len)?;
    let per = opts.docs_per_shard.max(1);
    let shards: Vec<_> = docs
        .par_chunks(per)
        .enumerate()
        .map(|(i, chunk)| build_shard(i, chunk, vocab, opts))
        .collect::<Result<_, _>>()?;
    let mut all = Vec::new();
    let (mut pack, mut mask) = (PackStats::default(), MaskStats::default());
    for (ex, p, m) in shards {
        all.extend(ex);
        pack.merge(&p);
        mask.merge(&m);
    }
    Ok((all, pack, mask))
}

/// Writes one example set (records, sidecar, optional debug JSON lines) into
/// `out_dir`. Shards are processed in bounded groups so memory stays flat.
pub fn export_set(
    docs: &[TokenizedDoc],
    vocab: &Vocabulary,
    opts: &ExportOptions,
    out_dir: &Path,
) -> Result<ExportSummary, ExportError> {
    pack::check_seq_len(opts.seq_len)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let rec_path = out_dir.join(RECORDS_FILE);
    let dbg_path = out_dir.join(DEBUG_FILE);
    let mut records = RecordWriter::new(AtomicFile::create(&rec_path).map_err(io_err(&rec_path))?)
        .map_err(io_err(&rec_path))?;
    let mut debug = if opts.debug_jsonl {
        Some(AtomicFile::create(&dbg_path).map_err(io_err(&dbg_path))?)
    } else {
        None
    };

    let per = opts.docs_per_shard.max(1);
    let shard_docs: Vec<&[TokenizedDoc]> = docs.chunks(per).collect();
    let group = rayon::current_num_threads().max(1) * 4;
    let (mut pack, mut mask) = (PackStats::default(), MaskStats::default());
    for (g, batch) in shard_docs.chunks(group).enumerate() {
        let built: Vec<_> = batch
            .par_iter()
            .enumerate()
            .map(|(k, chunk)| build_shard(g * group + k, chunk, vocab, opts))
            .collect::<Result<_, _>>()?;
        for (examples, p, m) in built {
            pack.merge(&p);
            mask.merge(&m);
            for ex in &examples {
                records.write(ex).map_err(io_err(&rec_path))?;
                if let Some(d) = debug.as_mut() {
                    write_json_line(d, ex).map_err(io_err(&dbg_path))?;
                }
            }
        }
    }
    let count = records.count();
    records.into_inner().commit().map_err(io_err(&rec_path))?;
    if let Some(d) = debug {
        d.commit().map_err(io_err(&dbg_path))?;
    }
    let digest = sha256_file(&rec_path).map_err(io_err(&rec_path))?;

    let sidecar = Sidecar {
        format: format::FORMAT_NAME.into(),
        version: format::FORMAT_VERSION,
        byte_order: "little-endian".into(),
        magic_hex: hex::encode(format::MAGIC),
        fields: format::record_fields(),
        seq_len: opts.seq_len,
        record_count: count,
        mode: opts.mode,
        seed: opts.seed,
        vocab_size: vocab.len(),
        vocab_sha256: vocab.digest().to_string(),
        special_ids: format::SpecialIds {
            cls: vocab.cls,
            sep: vocab.sep,
            mask: vocab.mask,
            unk: vocab.unk,
            pad: vocab.pad,
        },
        masking: format::MaskingSpec::default(),
        records_sha256: digest.clone(),
    };
    let side_path = out_dir.join(SIDECAR_FILE);
    let mut f = AtomicFile::create(&side_path).map_err(io_err(&side_path))?;
    serde_json::to_writer_pretty(&mut f, &sidecar).map_err(|e| io_err(&side_path)(e.into()))?;
    f.write_all(b"\n").map_err(io_err(&side_path))?;
    f.commit().map_err(io_err(&side_path))?;

    Ok(ExportSummary {
        seq_len: opts.seq_len,
        mode: opts.mode,
        seed: opts.seed,
        shards: shard_docs.len(),
        pack,
        mask,
        records: count,
        records_sha256: digest,
    })
}
