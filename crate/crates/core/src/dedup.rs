//! Exact paragraph deduplication over the whole collection.
//!
//! Paragraphs are keyed by a 128-bit fingerprint of their cleaned text and
//! the first occurrence in collection order wins. [`dedup_stream`] keeps the
//! fingerprint set in memory; [`dedup_sharded`] partitions paragraphs across
//! on-disk shards by fingerprint so each shard can be resolved independently,
//! then merges the survivors back by global sequence number.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs::File;
use std::hash::{BuildHasherDefault, Hasher};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clean::CleanParagraph;
use crate::util::AtomicFile;

/// Identifies the fingerprint function; bump when it changes.
pub const FINGERPRINT_VERSION: &str = "xxh3-128/v1";

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("fingerprint store capacity of {capacity} entries exhausted; rerun in sharded mode with more shards")]
    CapacityExhausted { capacity: usize },
    #[error("shard {shard} ({path}): {source}")]
    Shard {
        shard: usize,
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: sequence number {seq} does not follow {previous}")]
    SequenceOrder {
        path: PathBuf,
        line: usize,
        seq: u64,
        previous: u64,
    },
    #[error("sequence number overflow")]
    SequenceOverflow,
    #[error("shard_count must be at least 1")]
    InvalidShardCount,
    #[error("interrupted after routing (test hook)")]
    Interrupted,
}

pub type Result<T> = std::result::Result<T, DedupError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fingerprint(pub u128);

impl Fingerprint {
    pub fn of(text: &str) -> Self {
        Fingerprint(xxhash_rust::xxh3::xxh3_128(text.as_bytes()))
    }

    pub fn shard(self, shard_count: usize) -> usize {
        // high bits, so shard choice is independent of the hash-table bucket bits
        ((self.0 >> 64) as u64 % shard_count as u64) as usize
    }
}

/// The fingerprint is already uniformly distributed; hashing it again is waste.
#[derive(Default)]
struct FingerprintHasher(u64);

impl Hasher for FingerprintHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = self.0.rotate_left(8) ^ u64::from(b);
        }
    }

    fn write_u128(&mut self, v: u128) {
        self.0 = v as u64;
    }
}

type FpBuild = BuildHasherDefault<FingerprintHasher>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupStats {
    pub input_paragraphs: u64,
    pub unique_paragraphs: u64,
    pub removed_paragraphs: u64,
    /// Fingerprint matches whose texts differed; only counted in verify mode.
    #[serde(default)]
    pub fingerprint_collisions: u64,
}

impl DedupStats {
    pub fn merge(&mut self, other: &DedupStats) {
        self.input_paragraphs += other.input_paragraphs;
        self.unique_paragraphs += other.unique_paragraphs;
        self.removed_paragraphs += other.removed_paragraphs;
        self.fingerprint_collisions += other.fingerprint_collisions;
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DedupOptions {
    /// Maximum number of distinct fingerprints held in one store.
    pub capacity: Option<usize>,
    /// Keep full texts and compare them on every fingerprint match.
    pub verify: bool,
}

/// Set of fingerprints seen so far, optionally with the texts behind them.
pub struct FingerprintStore {
    seen: HashSet<Fingerprint, FpBuild>,
    texts: HashMap<Fingerprint, Vec<String>, FpBuild>,
    opts: DedupOptions,
    entries: usize,
    collisions: u64,
}

impl FingerprintStore {
    pub fn new(opts: DedupOptions) -> Self {
        Self {
            seen: HashSet::default(),
            texts: HashMap::default(),
            opts,
            entries: 0,
            collisions: 0,
        }
    }

    /// Records `text`; returns `true` when it had not been seen before.
    pub fn insert(&mut self, text: &str) -> Result<bool> {
        self.insert_fingerprint(Fingerprint::of(text), text)
    }

    pub fn insert_fingerprint(&mut self, fp: Fingerprint, text: &str) -> Result<bool> {
        if self.opts.verify {
            if let Some(texts) = self.texts.get_mut(&fp) {
                if texts.iter().any(|t| t == text) {
                    return Ok(false);
                }
                self.collisions += 1;
                Self::reserve(&mut self.entries, self.opts.capacity)?;
                texts.push(text.to_string());
                return Ok(true);
            }
            Self::reserve(&mut self.entries, self.opts.capacity)?;
            self.texts.insert(fp, vec![text.to_string()]);
            return Ok(true);
        }
        if self.seen.contains(&fp) {
            return Ok(false);
        }
        Self::reserve(&mut self.entries, self.opts.capacity)?;
        self.seen.insert(fp);
        Ok(true)
    }

    fn reserve(entries: &mut usize, capacity: Option<usize>) -> Result<()> {
        if let Some(capacity) = capacity {
            if *entries >= capacity {
                return Err(DedupError::CapacityExhausted { capacity });
            }
        }
        *entries += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    pub fn collisions(&self) -> u64 {
        self.collisions
    }
}

/// Keeps the first occurrence of every text, preserving input order.
pub fn dedup_stream<I>(paragraphs: I, opts: DedupOptions) -> Result<(Vec<CleanParagraph>, DedupStats)>
where
    I: IntoIterator<Item = CleanParagraph>,
{
    let mut store = FingerprintStore::new(opts);
    let mut stats = DedupStats::default();
    let mut out = Vec::new();
    for p in paragraphs {
        stats.input_paragraphs += 1;
        if store.insert(&p.text)? {
            stats.unique_paragraphs += 1;
            out.push(p);
        } else {
            stats.removed_paragraphs += 1;
        }
    }
    stats.fingerprint_collisions = store.collisions();
    Ok((out, stats))
}

/// Successor of a sequence number, failing instead of wrapping.
pub fn next_seq(seq: u64) -> Result<u64> {
    seq.checked_add(1).ok_or(DedupError::SequenceOverflow)
}

#[derive(Debug, Clone)]
pub struct ShardedOptions {
    /// Scratch space for routed buckets and per-shard survivors.
    pub work_dir: PathBuf,
    /// Merged survivors, in global sequence order.
    pub output: PathBuf,
    pub dedup: DedupOptions,
    #[doc(hidden)]
    pub abort_after_routing: bool,
}

#[derive(Debug, Clone)]
pub struct ShardedOutcome {
    pub output: PathBuf,
    /// Per-shard survivor files, each in sequence order.
    pub shard_files: Vec<PathBuf>,
    pub stats: DedupStats,
}

#[derive(Deserialize)]
struct RoutingKey {
    seq: u64,
    text: String,
}

const ROUTE_BATCH: usize = 1 << 15;

/// Deduplicates JSON-lines paragraph files (one [`CleanParagraph`] per line)
/// as if they were one stream in the given order. Output lines are the input
/// lines, byte for byte.
pub fn dedup_sharded(inputs: &[PathBuf], shard_count: usize, opts: &ShardedOptions) -> Result<ShardedOutcome> {
    if shard_count == 0 {
        return Err(DedupError::InvalidShardCount);
    }
    let route_dir = opts.work_dir.join("route");
    let shard_dir = opts.work_dir.join("shards");
    for dir in [&route_dir, &shard_dir] {
        std::fs::create_dir_all(dir).map_err(|source| DedupError::Io {
            path: dir.clone(),
            source,
        })?;
    }

    let mut previous: Option<u64> = None;
    for (i, input) in inputs.iter().enumerate() {
        previous = route_file(input, i, shard_count, &route_dir, previous)?;
    }
    if opts.abort_after_routing {
        return Err(DedupError::Interrupted);
    }

    let shard_results: Vec<Result<(PathBuf, DedupStats)>> = (0..shard_count)
        .into_par_iter()
        .map(|shard| resolve_shard(shard, inputs.len(), &route_dir, &shard_dir, opts.dedup))
        .collect();
    let mut stats = DedupStats::default();
    let mut shard_files = Vec::with_capacity(shard_count);
    for r in shard_results {
        let (path, s) = r?;
        stats.merge(&s);
        shard_files.push(path);
    }

    merge_shards(&shard_files, &opts.output)?;
    let _ = std::fs::remove_dir_all(&route_dir);
    Ok(ShardedOutcome {
        output: opts.output.clone(),
        shard_files,
        stats,
    })
}

fn bucket_path(route_dir: &Path, input: usize, shard: usize) -> PathBuf {
    route_dir.join(format!("in{input:05}-s{shard:04}.jsonl"))
}

fn route_file(
    input: &Path,
    input_index: usize,
    shard_count: usize,
    route_dir: &Path,
    mut previous: Option<u64>,
) -> Result<Option<u64>> {
    let io_err = |source| DedupError::Io {
        path: input.to_path_buf(),
        source,
    };
    let reader = BufReader::with_capacity(1 << 20, File::open(input).map_err(io_err)?);
    let mut writers = (0..shard_count)
        .map(|s| {
            let path = bucket_path(route_dir, input_index, s);
            File::create(&path)
                .map(|f| BufWriter::with_capacity(1 << 16, f))
                .map_err(|source| DedupError::Shard { shard: s, path, source })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut lines = reader.lines().enumerate();
    let mut batch: Vec<(usize, String)> = Vec::with_capacity(ROUTE_BATCH);
    loop {
        batch.clear();
        for (i, line) in lines.by_ref() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            batch.push((i + 1, line));
            if batch.len() == ROUTE_BATCH {
                break;
            }
        }
        if batch.is_empty() {
            break;
        }
        let keyed: Vec<Result<(u64, usize)>> = batch
            .par_iter()
            .map(|(lineno, line)| {
                let key: RoutingKey = serde_json::from_str(line).map_err(|e| DedupError::Parse {
                    path: input.to_path_buf(),
                    line: *lineno,
                    message: e.to_string(),
                })?;
                Ok((key.seq, Fingerprint::of(&key.text).shard(shard_count)))
            })
            .collect();
        for ((lineno, line), key) in batch.iter().zip(keyed) {
            let (seq, shard) = key?;
            if let Some(prev) = previous {
                if seq <= prev {
                    return Err(DedupError::SequenceOrder {
                        path: input.to_path_buf(),
                        line: *lineno,
                        seq,
                        previous: prev,
                    });
                }
            }
            previous = Some(seq);
            let w = &mut writers[shard];
            w.write_all(line.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .map_err(|source| DedupError::Shard {
                    shard,
                    path: bucket_path(route_dir, input_index, shard),
                    source,
                })?;
        }
    }
    for (shard, mut w) in writers.into_iter().enumerate() {
        w.flush().map_err(|source| DedupError::Shard {
            shard,
            path: bucket_path(route_dir, input_index, shard),
            source,
        })?;
    }
    Ok(previous)
}

fn resolve_shard(
    shard: usize,
    input_count: usize,
    route_dir: &Path,
    shard_dir: &Path,
    opts: DedupOptions,
) -> Result<(PathBuf, DedupStats)> {
    let out_path = shard_dir.join(format!("shard-{shard:04}.jsonl"));
    let shard_err = |path: &Path, source| DedupError::Shard {
        shard,
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(&out_path).map_err(|e| shard_err(&out_path, e))?);
    let mut store = FingerprintStore::new(opts);
    let mut stats = DedupStats::default();
    // buckets are visited in input order and each is in sequence order, so
    // the first sighting of a fingerprint is its globally first occurrence
    for input in 0..input_count {
        let path = bucket_path(route_dir, input, shard);
        let reader = BufReader::new(File::open(&path).map_err(|e| shard_err(&path, e))?);
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| shard_err(&path, e))?;
            let key: RoutingKey = serde_json::from_str(&line).map_err(|e| DedupError::Parse {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            stats.input_paragraphs += 1;
            if store.insert(&key.text)? {
                stats.unique_paragraphs += 1;
                out.write_all(line.as_bytes())
                    .and_then(|_| out.write_all(b"\n"))
                    .map_err(|e| shard_err(&out_path, e))?;
            } else {
                stats.removed_paragraphs += 1;
            }
        }
    }
    out.flush().map_err(|e| shard_err(&out_path, e))?;
    stats.fingerprint_collisions = store.collisions();
    Ok((out_path, stats))
}

#[derive(Deserialize)]
struct SeqOnly {
    seq: u64,
}

fn merge_shards(shard_files: &[PathBuf], output: &Path) -> Result<()> {
    let mut readers = Vec::with_capacity(shard_files.len());
    let mut heap = BinaryHeap::new();
    let next_line = |shard: usize, lines: &mut io::Lines<BufReader<File>>| -> Result<Option<(u64, String)>> {
        match lines.next() {
            None => Ok(None),
            Some(line) => {
                let line = line.map_err(|source| DedupError::Shard {
                    shard,
                    path: shard_files[shard].clone(),
                    source,
                })?;
                let key: SeqOnly = serde_json::from_str(&line).map_err(|e| DedupError::Parse {
                    path: shard_files[shard].clone(),
                    line: 0,
                    message: e.to_string(),
                })?;
                Ok(Some((key.seq, line)))
            }
        }
    };
    let mut pending: Vec<Option<String>> = vec![None; shard_files.len()];
    for (shard, path) in shard_files.iter().enumerate() {
        let file = File::open(path).map_err(|source| DedupError::Shard {
            shard,
            path: path.clone(),
            source,
        })?;
        let mut lines = BufReader::new(file).lines();
        if let Some((seq, line)) = next_line(shard, &mut lines)? {
            heap.push(Reverse((seq, shard)));
            pending[shard] = Some(line);
        }
        readers.push(lines);
    }

    let out_err = |source| DedupError::Io {
        path: output.to_path_buf(),
        source,
    };
    let mut out = AtomicFile::create(output).map_err(out_err)?;
    while let Some(Reverse((_, shard))) = heap.pop() {
        let line = pending[shard].take().expect("heap entry has a pending line");
        out.write_all(line.as_bytes()).map_err(out_err)?;
        out.write_all(b"\n").map_err(out_err)?;
        if let Some((seq, line)) = next_line(shard, &mut readers[shard])? {
            heap.push(Reverse((seq, shard)));
            pending[shard] = Some(line);
        }
    }
    out.commit().map_err(out_err)
}
