mod common;

use std::path::{Path, PathBuf};

use proptest::prelude::*;
use rand::Rng;

use common::*;
use corpusforge::clean::CleanParagraph;
use corpusforge::dedup::{dedup_sharded, dedup_stream, DedupError, DedupOptions, ShardedOptions};
use corpusforge::ingest::SourceKind;

fn para(seq: u64, text: &str) -> CleanParagraph {
    CleanParagraph {
        seq,
        doc_id: format!("d{}", seq / 7),
        paragraph_index: (seq % 7) as usize,
        text: text.to_string(),
        word_count: text.split_whitespace().count(),
        source_kind: SourceKind::Book,
        language: None,
    }
}

fn paras(texts: &[String]) -> Vec<CleanParagraph> {
    texts.iter().enumerate().map(|(i, t)| para(i as u64, t)).collect()
}

/// Splits the stream over `files` JSON-lines inputs in order.
fn write_inputs(dir: &Path, ps: &[CleanParagraph], files: usize) -> Vec<PathBuf> {
    let per = ps.len().div_ceil(files).max(1);
    ps.chunks(per)
        .enumerate()
        .map(|(i, chunk)| {
            let path = dir.join(format!("input{i}.jsonl"));
            let body: String = chunk.iter().map(|p| serde_json::to_string(p).unwrap() + "\n").collect();
            std::fs::write(&path, body).unwrap();
            path
        })
        .collect()
}

fn sharded(dir: &Path, inputs: &[PathBuf], shards: usize, tag: &str) -> (Vec<u8>, u64) {
    let opts = ShardedOptions {
        work_dir: dir.join(format!("work-{tag}")),
        output: dir.join(format!("out-{tag}.jsonl")),
        dedup: DedupOptions::default(),
        abort_after_routing: false,
    };
    let outcome = dedup_sharded(inputs, shards, &opts).unwrap();
    (std::fs::read(&outcome.output).unwrap(), outcome.stats.removed_paragraphs)
}

fn jsonl(ps: &[CleanParagraph]) -> Vec<u8> {
    ps.iter().flat_map(|p| serde_json::to_vec(p).unwrap().into_iter().chain(*b"\n")).collect()
}

fn planted_texts(seed: u64, distinct: usize, dups: usize) -> Vec<String> {
    let mut rng = rng(seed);
    let mut texts: Vec<String> = (0..distinct)
        .map(|i| {
            let words: Vec<String> = (0..rng.gen_range(1..8)).map(|_| random_word(&mut rng)).collect();
            format!("{} {i}", words.join(" "))
        })
        .collect();
    for _ in 0..dups {
        let src = texts[rng.gen_range(0..texts.len())].clone();
        let at = rng.gen_range(0..=texts.len());
        texts.insert(at, src);
    }
    texts
}

#[test]
fn letters_example() {
    let texts: Vec<String> = ["A", "B", "A", "C", "B"].iter().map(|s| s.to_string()).collect();
    let (out, stats) = dedup_stream(paras(&texts), DedupOptions::default()).unwrap();
    assert_eq!(out.iter().map(|p| p.text.as_str()).collect::<Vec<_>>(), ["A", "B", "C"]);
    assert_eq!(stats.removed_paragraphs, 2);
    assert_eq!(stats.input_paragraphs, stats.unique_paragraphs + stats.removed_paragraphs);
}

#[test]
fn same_paragraph_in_two_documents() {
    let mut a = para(0, "Det var en gang");
    let mut b = para(1, "Det var en gang");
    a.doc_id = "first".into();
    b.doc_id = "second".into();
    let (out, _) = dedup_stream([a, b], DedupOptions::default()).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].doc_id, "first");
}

#[test]
fn shard_counts_agree_with_stream_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let texts = planted_texts(4, 3000, 400);
    let ps = paras(&texts);
    let survivors: Vec<CleanParagraph> = dedup_oracle(&texts).into_iter().map(|i| ps[i].clone()).collect();
    let expected = jsonl(&survivors);

    let (stream_out, _) = dedup_stream(ps.clone(), DedupOptions { verify: true, capacity: None }).unwrap();
    assert_eq!(jsonl(&stream_out), expected);

    let inputs = write_inputs(dir.path(), &ps, 3);
    for shards in [1, 4, 16] {
        let (bytes, removed) = sharded(dir.path(), &inputs, shards, &shards.to_string());
        assert_eq!(bytes, expected, "shard_count {shards}");
        assert_eq!(removed as usize, texts.len() - survivors.len());
    }
}

#[test]
fn no_duplicates_means_output_equals_input() {
    let dir = tempfile::tempdir().unwrap();
    let texts = planted_texts(5, 2000, 0);
    let ps = paras(&texts);
    let inputs = write_inputs(dir.path(), &ps, 2);
    let concatenated: Vec<u8> = inputs.iter().flat_map(|p| std::fs::read(p).unwrap()).collect();
    let (bytes, removed) = sharded(dir.path(), &inputs, 8, "nodup");
    assert_eq!(removed, 0);
    assert_eq!(bytes, concatenated);
}

#[test]
fn verify_mode_finds_no_collisions() {
    let texts = planted_texts(6, 20_000, 2000);
    let (_, stats) = dedup_stream(paras(&texts), DedupOptions { verify: true, capacity: None }).unwrap();
    assert_eq!(stats.fingerprint_collisions, 0);
    assert_eq!(stats.removed_paragraphs, 2000);
}

#[test]
fn capacity_exhaustion_is_an_error() {
    let texts = planted_texts(7, 100, 0);
    let err = dedup_stream(paras(&texts), DedupOptions { verify: false, capacity: Some(50) }).unwrap_err();
    assert!(matches!(err, DedupError::CapacityExhausted { capacity: 50 }));
    assert!(err.to_string().contains("sharded"));
    // duplicates of stored texts do not consume capacity
    let mut repeated = planted_texts(7, 50, 0);
    repeated.extend(repeated.clone());
    assert!(dedup_stream(paras(&repeated), DedupOptions { verify: false, capacity: Some(50) }).is_ok());
}

#[test]
fn rerun_after_interrupted_routing_matches_clean_run() {
    let dir = tempfile::tempdir().unwrap();
    let texts = planted_texts(8, 1500, 300);
    let inputs = write_inputs(dir.path(), &paras(&texts), 4);
    let (clean, _) = sharded(dir.path(), &inputs, 4, "clean");

    let mut opts = ShardedOptions {
        work_dir: dir.path().join("work-resume"),
        output: dir.path().join("out-resume.jsonl"),
        dedup: DedupOptions::default(),
        abort_after_routing: true,
    };
    assert!(matches!(dedup_sharded(&inputs, 4, &opts), Err(DedupError::Interrupted)));
    opts.abort_after_routing = false;
    let outcome = dedup_sharded(&inputs, 4, &opts).unwrap();
    assert_eq!(std::fs::read(outcome.output).unwrap(), clean);
}

#[test]
fn out_of_order_sequence_numbers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ps = vec![para(5, "a"), para(3, "b")];
    let inputs = write_inputs(dir.path(), &ps, 1);
    let opts = ShardedOptions {
        work_dir: dir.path().join("w"),
        output: dir.path().join("o.jsonl"),
        dedup: DedupOptions::default(),
        abort_after_routing: false,
    };
    let err = dedup_sharded(&inputs, 2, &opts).unwrap_err();
    assert!(matches!(err, DedupError::SequenceOrder { line: 2, seq: 3, previous: 5, .. }), "{err}");
    assert!(matches!(dedup_sharded(&inputs, 0, &opts), Err(DedupError::InvalidShardCount)));
}

proptest! {
    #[test]
    fn idempotent_and_complete(picks in prop::collection::vec(0usize..30, 0..200)) {
        let texts: Vec<String> = picks.iter().map(|i| format!("t{i}")).collect();
        let (once, _) = dedup_stream(paras(&texts), DedupOptions::default()).unwrap();
        let (twice, stats) = dedup_stream(once.clone(), DedupOptions::default()).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(stats.removed_paragraphs, 0);
        let mut distinct: Vec<&String> = texts.iter().collect();
        distinct.sort();
        distinct.dedup();
        prop_assert_eq!(once.len(), distinct.len());
    }
}
