mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use corpusforge::metrics::{
    extract_entities, f1_macro, f1_micro, per_type_scores, read_conll, read_labels, read_tag_jsonl, MetricsError,
    TagSequence,
};

fn seqs(raw: &[Vec<String>]) -> Vec<TagSequence> {
    raw.iter().map(|t| TagSequence::new(t.iter().cloned())).collect()
}

/// Micro F1 from the brute-force extractor, restricted to one type if given.
fn oracle_f1(gold: &[Vec<String>], pred: &[Vec<String>], only: Option<&str>) -> f64 {
    let (mut tp, mut ng, mut np) = (0usize, 0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        let keep = |s: HashSet<(String, usize, usize)>| -> HashSet<(String, usize, usize)> {
            s.into_iter().filter(|e| only.is_none_or(|t| e.0 == t)).collect()
        };
        let ge = keep(oracle_entities(g));
        let pe = keep(oracle_entities(p));
        tp += ge.intersection(&pe).count();
        ng += ge.len();
        np += pe.len();
    }
    let p = if np == 0 { 0.0 } else { tp as f64 / np as f64 };
    let r = if ng == 0 { 0.0 } else { tp as f64 / ng as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn corpus(seed: u64, n: usize) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut rng = rng(seed);
    let types = ["PER", "LOC", "ORG", "MISC"];
    let gold: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let len = rng.gen_range(1..30);
            random_bio(&mut rng, len, &types)
        })
        .collect();
    // predictions: perturb a few tags of each gold sequence
    let pred = gold
        .iter()
        .map(|g| {
            let mut p = g.clone();
            for _ in 0..rng.gen_range(0..4) {
                let i = rng.gen_range(0..p.len());
                p[i] = random_bio(&mut rng, 1, &types).remove(0);
            }
            p
        })
        .collect();
    (gold, pred)
}

#[test]
fn micro_and_per_type_match_oracle() {
    for seed in 0..20 {
        let (gold, pred) = corpus(seed, 100);
        let micro = f1_micro(&seqs(&gold), &seqs(&pred)).unwrap();
        assert!((micro.f1 - oracle_f1(&gold, &pred, None)).abs() < 1e-12);
        for (kind, scores) in per_type_scores(&seqs(&gold), &seqs(&pred)).unwrap() {
            assert!((scores.f1 - oracle_f1(&gold, &pred, Some(&kind))).abs() < 1e-12, "{kind}");
        }
    }
}

#[test]
fn entity_spans_are_inclusive() {
    let e = extract_entities(&TagSequence::new(["B-PER", "I-PER", "O"])).unwrap();
    let spans: Vec<_> = e.iter().map(|x| (x.kind.as_str(), x.start, x.end)).collect();
    assert_eq!(spans, [("PER", 0, 1)]);
    assert!(extract_entities(&TagSequence::new(["O", "O", "O"])).unwrap().is_empty());
}

#[test]
fn conll_and_jsonl_readers_agree() {
    let conll = "-DOCSTART- -X- O O\n\nOla NNP B-PER\nNordmann NNP I-PER\nbor VB O\ni IN O\nOslo NNP B-LOC\n\n\nDet PRP O\nregner VB O\n";
    let jsonl = "[\"B-PER\",\"I-PER\",\"O\",\"O\",\"B-LOC\"]\n{\"tags\":[\"O\",\"O\"]}\n";
    let a = read_conll(conll.as_bytes()).unwrap();
    let b = read_tag_jsonl(jsonl.as_bytes()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);

    let err = read_conll("Ola B-PER\nNordmann X-PER\n".as_bytes()).unwrap_err();
    assert!(matches!(err, MetricsError::Format { line: 2, .. }), "{err}");
    assert!(matches!(read_tag_jsonl("[1,2]\n".as_bytes()), Err(MetricsError::Format { line: 1, .. })));
}

#[test]
fn label_reader_formats() {
    let labels = read_labels("pos\n\"neg\"\n{\"label\": \"neutral\"}\n\n".as_bytes()).unwrap();
    assert_eq!(labels, ["pos", "neg", "neutral"]);
}

#[test]
fn macro_cases() {
    let m = f1_macro(&["A", "A", "B", "B"], &["A", "B", "B", "B"]).unwrap();
    assert!((m - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    // gold all one class, prediction spread over three: only one class can score
    let m = f1_macro(&["A", "A", "A"], &["A", "B", "C"]).unwrap();
    assert!((m - 0.5 / 3.0).abs() < 1e-12);
    assert_eq!(f1_macro(&["x", "y"], &["x", "y"]).unwrap(), 1.0);
    assert!(matches!(f1_macro(&["A"], &["A", "B"]), Err(MetricsError::Alignment { .. })));
}

#[test]
fn alignment_errors_name_the_sequence() {
    let gold = seqs(&[vec!["O".into()], vec!["O".into(), "O".into()]]);
    let pred = seqs(&[vec!["O".into()], vec!["O".into()]]);
    assert!(matches!(
        f1_micro(&gold, &pred),
        Err(MetricsError::SequenceLength { index: 1, gold: 2, pred: 1 })
    ));
    let bad = seqs(&[vec!["B-".into()]]);
    assert!(matches!(f1_micro(&bad, &bad), Err(MetricsError::InvalidTag { sequence: 0, position: 0, .. })));
}

proptest! {
    #[test]
    fn micro_ignores_sequence_order(seed in 0u64..10_000) {
        let (gold, pred) = corpus(seed, 30);
        let base = f1_micro(&seqs(&gold), &seqs(&pred)).unwrap();
        let mut order: Vec<usize> = (0..gold.len()).collect();
        order.shuffle(&mut rng(seed ^ 0xabc));
        let g: Vec<Vec<String>> = order.iter().map(|&i| gold[i].clone()).collect();
        let p: Vec<Vec<String>> = order.iter().map(|&i| pred[i].clone()).collect();
        let shuffled = f1_micro(&seqs(&g), &seqs(&p)).unwrap();
        prop_assert!((base.f1 - shuffled.f1).abs() < 1e-12);
    }

    #[test]
    fn macro_ignores_item_order(labels in prop::collection::vec((0u8..4, 0u8..4), 1..60), seed in 0u64..1000) {
        let gold: Vec<String> = labels.iter().map(|l| l.0.to_string()).collect();
        let pred: Vec<String> = labels.iter().map(|l| l.1.to_string()).collect();
        let base = f1_macro(&gold, &pred).unwrap();
        let mut order: Vec<usize> = (0..gold.len()).collect();
        order.shuffle(&mut rng(seed));
        let g: Vec<&String> = order.iter().map(|&i| &gold[i]).collect();
        let p: Vec<&String> = order.iter().map(|&i| &pred[i]).collect();
        prop_assert!((base - f1_macro(&g, &p).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }
}
