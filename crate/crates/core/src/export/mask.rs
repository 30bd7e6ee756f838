use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pack::TrainingExample;
use super::vocab::Vocabulary;

pub const MASK_RATE: f64 = 0.15;
pub const MASK_TOKEN_SHARE: f64 = 0.8;
pub const RANDOM_TOKEN_SHARE: f64 = 0.1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskStats {
    pub selected: u64,
    pub to_mask_token: u64,
    pub to_random_token: u64,
    pub unchanged: u64,
}

impl MaskStats {
    pub fn merge(&mut self, o: &MaskStats) {
        self.selected += o.selected;
        self.to_mask_token += o.to_mask_token;
        self.to_random_token += o.to_random_token;
        self.unchanged += o.unchanged;
    }
}

/// `round(0.15 * maskable)`, halves rounding up, in integer arithmetic so
/// that 0.15 * 10 is exactly 1.5.
pub fn mask_count(maskable: usize) -> usize {
    (15 * maskable + 50) / 100
}

/// Masks one example in place with a generator seeded from `seed`.
pub fn apply_mlm_mask(example: &mut TrainingExample, vocab: &Vocabulary, seed: u64) -> MaskStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    apply_mlm_mask_with(example, vocab, &mut rng)
}

/// Selects `round(0.15 * n)` of the n non-special positions without
/// replacement; each becomes `[MASK]` (80%), a random ordinary token (10%) or
/// stays as is (10%). Labels keep the original ids, positions ascend.
pub fn apply_mlm_mask_with<R: Rng>(example: &mut TrainingExample, vocab: &Vocabulary, rng: &mut R) -> MaskStats {
    let eligible: Vec<usize> = example
        .input_ids
        .iter()
        .enumerate()
        .filter(|(_, &id)| !vocab.is_special(id))
        .map(|(i, _)| i)
        .collect();
    let n = mask_count(eligible.len());
    let mut chosen: Vec<usize> = sample(rng, eligible.len(), n).into_iter().map(|k| eligible[k]).collect();
    chosen.sort_unstable();

    let replaceable = vocab.replaceable_ids();
    let mut stats = MaskStats { selected: n as u64, ..Default::default() };
    example.masked_positions.clear();
    example.masked_labels.clear();
    for pos in chosen {
        let original = example.input_ids[pos];
        example.masked_positions.push(pos as u32);
        example.masked_labels.push(original);
        let roll: f64 = rng.gen();
        if roll < MASK_TOKEN_SHARE {
            example.input_ids[pos] = vocab.mask;
            stats.to_mask_token += 1;
        } else if roll < MASK_TOKEN_SHARE + RANDOM_TOKEN_SHARE {
            example.input_ids[pos] = replaceable[rng.gen_range(0..replaceable.len())];
            stats.to_random_token += 1;
        } else {
            stats.unchanged += 1;
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::export::pack::{pack_examples, PackMode, TokenizedDoc};

    fn vocab() -> Vocabulary {
        let mut toks: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"].iter().map(|s| s.to_string()).collect();
        toks.extend((0..50).map(|i| format!("w{i}")));
        Vocabulary::from_tokens(toks).unwrap()
    }

    fn example(v: &Vocabulary, n: usize) -> TrainingExample {
        let doc = TokenizedDoc { doc_id: "d".into(), paragraphs: vec![(0..n as u32).map(|i| 5 + i % 50).collect()] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        pack_examples(&[doc], 128, PackMode::SingleSegment, v, &mut rng).unwrap().0.remove(0)
    }

    #[test]
    fn count_and_labels() {
        let v = vocab();
        let original = example(&v, 100);
        let mut ex = original.clone();
        let stats = apply_mlm_mask(&mut ex, &v, 42);
        assert_eq!(ex.masked_positions.len(), 15);
        assert_eq!(stats.selected, 15);
        assert!(ex.masked_positions.windows(2).all(|w| w[0] < w[1]));
        for (&p, &l) in ex.masked_positions.iter().zip(&ex.masked_labels) {
            assert_eq!(original.input_ids[p as usize], l);
            assert!(!v.is_structural(l));
        }
        // untouched outside the selected positions
        for i in 0..ex.input_ids.len() {
            if !ex.masked_positions.contains(&(i as u32)) {
                assert_eq!(ex.input_ids[i], original.input_ids[i]);
            }
        }
    }

    #[test]
    fn same_seed_same_result() {
        let v = vocab();
        let mut a = example(&v, 90);
        let mut b = a.clone();
        apply_mlm_mask(&mut a, &v, 9);
        apply_mlm_mask(&mut b, &v, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn rounding() {
        assert_eq!(mask_count(10), 2);
        assert_eq!(mask_count(3), 0);
        assert_eq!(mask_count(4), 1);
        assert_eq!(mask_count(126), 19);
    }
}
