use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use super::ExportError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackMode {
    /// `[CLS] A [SEP] B [SEP]` with a next-sentence label.
    PairWithNsp,
    /// `[CLS] text [SEP]`, contiguous text from one document.
    SingleSegment,
}

impl std::str::FromStr for PackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pair-with-nsp" | "pair" | "nsp" => Ok(PackMode::PairWithNsp),
            "single-segment" | "single" => Ok(PackMode::SingleSegment),
            other => Err(format!("unknown pack mode {other:?} (pair-with-nsp | single-segment)")),
        }
    }
}

pub const SEQ_LENS: [usize; 2] = [128, 512];

/// Token ids of one document, paragraph by paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub doc_id: String,
    pub paragraphs: Vec<Vec<u32>>,
}

impl TokenizedDoc {
    pub fn token_count(&self) -> usize {
        self.paragraphs.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    pub masked_positions: Vec<u32>,
    pub masked_labels: Vec<u32>,
    /// 0 = B follows A, 1 = B is from another document; absent without a B.
    pub next_sentence_label: Option<u8>,
}

impl TrainingExample {
    fn assemble(a: &[u32], b: Option<&[u32]>, seq_len: usize, vocab: &Vocabulary) -> Self {
        let mut input_ids = Vec::with_capacity(seq_len);
        let mut segment_ids = Vec::with_capacity(seq_len);
        input_ids.push(vocab.cls);
        input_ids.extend_from_slice(a);
        input_ids.push(vocab.sep);
        segment_ids.resize(input_ids.len(), 0);
        if let Some(b) = b {
            input_ids.extend_from_slice(b);
            input_ids.push(vocab.sep);
            segment_ids.resize(input_ids.len(), 1);
        }
        debug_assert!(input_ids.len() <= seq_len);
        let used = input_ids.len();
        let mut attention_mask = vec![1u8; used];
        input_ids.resize(seq_len, vocab.pad);
        segment_ids.resize(seq_len, 0);
        attention_mask.resize(seq_len, 0);
        Self {
            input_ids,
            segment_ids,
            attention_mask,
            masked_positions: Vec::new(),
            masked_labels: Vec::new(),
            next_sentence_label: None,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.input_ids.len()
    }

    /// Number of non-PAD positions.
    pub fn used_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackStats {
    pub documents: u64,
    pub skipped_empty_documents: u64,
    pub examples: u64,
    pub random_next: u64,
    pub actual_next: u64,
    pub single_segment: u64,
}

impl PackStats {
    pub fn merge(&mut self, o: &PackStats) {
        self.documents += o.documents;
        self.skipped_empty_documents += o.skipped_empty_documents;
        self.examples += o.examples;
        self.random_next += o.random_next;
        self.actual_next += o.actual_next;
        self.single_segment += o.single_segment;
    }
}

pub fn check_seq_len(seq_len: usize) -> Result<(), ExportError> {
    if SEQ_LENS.contains(&seq_len) {
        Ok(())
    } else {
        Err(ExportError::SeqLen(seq_len))
    }
}

/// Packs tokenized documents into fixed-length, unmasked examples.
///
/// Pair mode follows the BERT recipe: paragraphs accumulate into a chunk of
/// up to `seq_len - 3` tokens, a random split point divides it into A and B,
/// and with probability 0.5 (always, for a one-paragraph chunk) B is replaced
/// by a contiguous run from a random other document. Unused paragraphs go
/// back into the stream. Over-long pairs are trimmed one token at a time from
/// the longer side, at a random end. Single-segment mode cuts each
/// document's token stream into windows of `seq_len - 2`.
pub fn pack_examples<R: Rng>(
    docs: &[TokenizedDoc],
    seq_len: usize,
    mode: PackMode,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<(Vec<TrainingExample>, PackStats), ExportError> {
    check_seq_len(seq_len)?;
    let mut stats = PackStats::default();
    let mut out = Vec::new();
    match mode {
        PackMode::SingleSegment => {
            let window = seq_len - 2;
            for doc in docs {
                stats.documents += 1;
                let stream: Vec<u32> = doc.paragraphs.iter().flatten().copied().collect();
                if stream.is_empty() {
                    stats.skipped_empty_documents += 1;
                    continue;
                }
                for piece in stream.chunks(window) {
                    out.push(TrainingExample::assemble(piece, None, seq_len, vocab));
                    stats.single_segment += 1;
                }
            }
        }
        PackMode::PairWithNsp => {
            let max_tokens = seq_len - 3;
            let segmented: Vec<Vec<&[u32]>> = docs.iter().map(|d| segments(d, max_tokens)).collect();
            let nonempty: Vec<usize> = (0..docs.len()).filter(|&i| !segmented[i].is_empty()).collect();
            for (di, segs) in segmented.iter().enumerate() {
                stats.documents += 1;
                if segs.is_empty() {
                    stats.skipped_empty_documents += 1;
                    continue;
                }
                pack_pair_doc(di, &segmented, &nonempty, max_tokens, seq_len, vocab, rng, &mut out, &mut stats);
            }
        }
    }
    stats.examples = out.len() as u64;
    Ok((out, stats))
}

/// Nonempty paragraphs, with any paragraph longer than `max_tokens` cut into
/// consecutive pieces.
fn segments(doc: &TokenizedDoc, max_tokens: usize) -> Vec<&[u32]> {
    doc.paragraphs
        .iter()
        .filter(|p| !p.is_empty())
        .flat_map(|p| p.chunks(max_tokens))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn pack_pair_doc<R: Rng>(
    di: usize,
    segmented: &[Vec<&[u32]>],
    nonempty: &[usize],
    max_tokens: usize,
    seq_len: usize,
    vocab: &Vocabulary,
    rng: &mut R,
    out: &mut Vec<TrainingExample>,
    stats: &mut PackStats,
) {
    let segs = &segmented[di];
    let mut chunk: Vec<&[u32]> = Vec::new();
    let mut chunk_len = 0usize;
    let mut i = 0usize;
    while i < segs.len() {
        chunk.push(segs[i]);
        chunk_len += segs[i].len();
        if i == segs.len() - 1 || chunk_len >= max_tokens {
            let a_end = if chunk.len() >= 2 { rng.gen_range(1..chunk.len()) } else { 1 };
            let mut a: Vec<u32> = chunk[..a_end].iter().flat_map(|s| s.iter().copied()).collect();
            let has_other = nonempty.len() > 1;
            let want_random = chunk.len() == 1 || rng.gen_bool(0.5);
            let (mut b, label) = if want_random && has_other {
                let target_b = max_tokens.saturating_sub(a.len()).max(1);
                let other = pick_other(di, nonempty, rng);
                let other_segs = &segmented[other];
                let start = rng.gen_range(0..other_segs.len());
                let mut b = Vec::new();
                for s in &other_segs[start..] {
                    b.extend_from_slice(s);
                    if b.len() >= target_b {
                        break;
                    }
                }
                // the paragraphs after A were not used; revisit them
                i -= chunk.len() - a_end;
                (Some(b), Some(1u8))
            } else if chunk.len() >= 2 {
                let b: Vec<u32> = chunk[a_end..].iter().flat_map(|s| s.iter().copied()).collect();
                (Some(b), Some(0u8))
            } else {
                (None, None)
            };
            match b.as_mut() {
                Some(b) => truncate_pair(&mut a, b, max_tokens, rng),
                None => a.truncate(seq_len - 2),
            }
            let mut ex = TrainingExample::assemble(&a, b.as_deref(), seq_len, vocab);
            ex.next_sentence_label = label;
            match label {
                Some(1) => stats.random_next += 1,
                Some(_) => stats.actual_next += 1,
                None => stats.single_segment += 1,
            }
            out.push(ex);
            chunk.clear();
            chunk_len = 0;
        }
        i += 1;
    }
}

fn pick_other<R: Rng>(current: usize, nonempty: &[usize], rng: &mut R) -> usize {
    let pos = nonempty.binary_search(&current).ok();
    let n = nonempty.len() - usize::from(pos.is_some());
    let mut k = rng.gen_range(0..n);
    if let Some(p) = pos {
        if k >= p {
            k += 1;
        }
    }
    nonempty[k]
}

fn truncate_pair<R: Rng>(a: &mut Vec<u32>, b: &mut Vec<u32>, max_tokens: usize, rng: &mut R) {
    while a.len() + b.len() > max_tokens {
        let longer = if a.len() > b.len() { &mut *a } else { &mut *b };
        if rng.gen_bool(0.5) {
            longer.remove(0);
        } else {
            longer.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        let mut toks: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"].iter().map(|s| s.to_string()).collect();
        toks.extend((0..200).map(|i| format!("t{i}")));
        Vocabulary::from_tokens(toks).unwrap()
    }

    fn doc(id: &str, lens: &[usize], base: u32) -> TokenizedDoc {
        let mut next = base;
        TokenizedDoc {
            doc_id: id.into(),
            paragraphs: lens
                .iter()
                .map(|&n| {
                    (0..n)
                        .map(|_| {
                            next += 1;
                            5 + (next % 200)
                        })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn single_segment_ten_tokens() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (ex, stats) = pack_examples(&[doc("d", &[10], 0)], 128, PackMode::SingleSegment, &v, &mut rng).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].used_len(), 12);
        assert_eq!(ex[0].input_ids[0], v.cls);
        assert_eq!(ex[0].input_ids[11], v.sep);
        assert_eq!(ex[0].input_ids[12], v.pad);
        assert_eq!(ex[0].next_sentence_label, None);
        assert_eq!(stats.examples, 1);
    }

    #[test]
    fn rejects_other_lengths() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            pack_examples(&[], 256, PackMode::SingleSegment, &v, &mut rng),
            Err(ExportError::SeqLen(256))
        ));
    }

    #[test]
    fn empty_documents_skipped_and_counted() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let docs = [doc("a", &[], 0), doc("b", &[0, 0], 0), doc("c", &[30, 40], 7)];
        for mode in [PackMode::SingleSegment, PackMode::PairWithNsp] {
            let (_, stats) = pack_examples(&docs, 128, mode, &v, &mut rng).unwrap();
            assert_eq!(stats.skipped_empty_documents, 2);
        }
    }

    #[test]
    fn pair_mode_layout() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let docs: Vec<_> = (0..20).map(|i| doc(&format!("d{i}"), &[40, 30, 50, 20, 60], i * 1000)).collect();
        let (ex, stats) = pack_examples(&docs, 128, PackMode::PairWithNsp, &v, &mut rng).unwrap();
        assert!(stats.random_next > 0 && stats.actual_next > 0);
        for e in &ex {
            assert_eq!(e.seq_len(), 128);
            let used = e.used_len();
            assert!(used <= 128);
            assert_eq!(e.input_ids[0], v.cls);
            assert_eq!(e.input_ids[used - 1], v.sep);
            let seps = e.input_ids[..used].iter().filter(|&&t| t == v.sep).count();
            assert_eq!(seps, if e.next_sentence_label.is_some() { 2 } else { 1 });
            assert!(e.input_ids[used..].iter().all(|&t| t == v.pad));
        }
    }

    #[test]
    fn lone_document_without_partner() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ex, _) = pack_examples(&[doc("only", &[200], 0)], 128, PackMode::PairWithNsp, &v, &mut rng).unwrap();
        assert!(!ex.is_empty());
        assert!(ex.iter().all(|e| e.next_sentence_label.is_none() || e.next_sentence_label == Some(0)));
    }

    #[test]
    fn pick_other_never_returns_current() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nonempty = [0, 2, 3, 7];
        for _ in 0..1000 {
            assert_ne!(pick_other(3, &nonempty, &mut rng), 3);
        }
    }
}
