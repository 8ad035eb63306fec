//! Word-level canonical Huffman code over vocabulary ids.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::corpus::{EOS, UNK};
use crate::error::ClassicError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanCode {
    /// Codeword per token id, most significant bit first.
    codes: Vec<Vec<bool>>,
    /// Binary trie: `(child0, child1)`; leaves are `usize::MAX - 1 - id`.
    trie: Vec<(usize, usize)>,
}

const LEAF: usize = usize::MAX;

/// Outcome of decoding one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanDecoded {
    pub ids: Vec<usize>,
    /// False when the bits ran out before an EOS codeword.
    pub clean: bool,
}

impl HuffmanCode {
    /// Every id gets a codeword; frequencies are floored at 1. Ties in the
    /// merge order break on `(frequency, smallest id in the subtree)`.
    pub fn build(freqs: &[u64]) -> Result<Self, ClassicError> {
        if freqs.len() < 2 {
            return Err(ClassicError::TooFewSymbols);
        }
        let v = freqs.len();
        let mut heap: BinaryHeap<Reverse<(u64, usize, usize)>> =
            freqs.iter().enumerate().map(|(id, &f)| Reverse((f.max(1), id, id))).collect();
        // Node storage: leaves 0..v, internal nodes appended; parent links give depths.
        let mut parent = vec![usize::MAX; v];
        while heap.len() > 1 {
            let Reverse((fa, ka, na)) = heap.pop().unwrap();
            let Reverse((fb, kb, nb)) = heap.pop().unwrap();
            let node = parent.len();
            parent.push(usize::MAX);
            parent[na] = node;
            parent[nb] = node;
            heap.push(Reverse((fa + fb, ka.min(kb), node)));
        }
        let lengths: Vec<usize> = (0..v)
            .map(|id| {
                let (mut n, mut d) = (id, 0);
                while parent[n] != usize::MAX {
                    n = parent[n];
                    d += 1;
                }
                d
            })
            .collect();
        Ok(Self::canonical(&lengths))
    }

    fn canonical(lengths: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by_key(|&id| (lengths[id], id));
        let mut codes = vec![Vec::new(); lengths.len()];
        let mut code: u128 = 0;
        let mut prev_len = lengths[order[0]];
        for (i, &id) in order.iter().enumerate() {
            let len = lengths[id];
            if i > 0 {
                code = (code + 1) << (len - prev_len);
            }
            prev_len = len;
            codes[id] = (0..len).rev().map(|b| (code >> b) & 1 == 1).collect();
        }
        let mut trie = vec![(LEAF, LEAF)];
        for (id, c) in codes.iter().enumerate() {
            let mut node = 0;
            for (depth, &bit) in c.iter().enumerate() {
                let last = depth + 1 == c.len();
                let slot = if bit { trie[node].1 } else { trie[node].0 };
                let next = if last {
                    LEAF - 1 - id
                } else if slot == LEAF {
                    trie.push((LEAF, LEAF));
                    trie.len() - 1
                } else {
                    slot
                };
                if bit {
                    trie[node].1 = next;
                } else {
                    trie[node].0 = next;
                }
                node = next;
            }
        }
        Self { codes, trie }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codeword(&self, id: usize) -> &[bool] {
        &self.codes[id]
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.codes.iter().map(Vec::len).collect()
    }

    /// `Σ 2^-len`; exactly 1 for a complete code.
    pub fn kraft_sum(&self) -> f64 {
        self.codes.iter().map(|c| 0.5f64.powi(c.len() as i32)).sum()
    }

    /// Codewords of the tokens followed by the EOS codeword. Ids outside
    /// the code are sent as UNK.
    pub fn encode(&self, ids: &[usize]) -> Vec<bool> {
        let mut bits = Vec::new();
        for &id in ids {
            bits.extend_from_slice(&self.codes[if id < self.codes.len() { id } else { UNK }]);
        }
        bits.extend_from_slice(&self.codes[EOS]);
        bits
    }

    /// Reads codewords up to EOS. If the bits end inside a codeword or
    /// before EOS, a single UNK stands in for the unparsable remainder.
    pub fn decode(&self, bits: &[bool]) -> HuffmanDecoded {
        let mut ids = Vec::new();
        let mut node = 0;
        for &bit in bits {
            let next = if bit { self.trie[node].1 } else { self.trie[node].0 };
            if next > self.trie.len() {
                let id = LEAF - 1 - next;
                if id == EOS {
                    return HuffmanDecoded { ids, clean: true };
                }
                ids.push(id);
                node = 0;
            } else {
                node = next;
            }
        }
        ids.push(UNK);
        HuffmanDecoded { ids, clean: false }
    }

    /// Mean codeword length weighted by `freqs` (floored at 1 like `build`).
    pub fn mean_length(&self, freqs: &[u64]) -> f64 {
        let total: u64 = freqs.iter().map(|&f| f.max(1)).sum();
        self.codes.iter().zip(freqs).map(|(c, &f)| c.len() as f64 * f.max(1) as f64).sum::<f64>() / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng_stream;
    use rand::Rng;

    #[test]
    fn equal_frequencies_give_equal_lengths() {
        let c = HuffmanCode::build(&[5, 5, 5, 5]).unwrap();
        assert_eq!(c.lengths(), vec![2, 2, 2, 2]);
    }

    #[test]
    fn textbook_lengths() {
        let c = HuffmanCode::build(&[8, 4, 2, 1, 1]).unwrap();
        assert_eq!(c.lengths(), vec![1, 2, 3, 4, 4]);
        assert_eq!(c.kraft_sum(), 1.0);
    }

    #[test]
    fn too_few_symbols() {
        assert_eq!(HuffmanCode::build(&[3]), Err(ClassicError::TooFewSymbols));
    }

    #[test]
    fn prefix_free() {
        let c = HuffmanCode::build(&[9, 1, 0, 3, 3, 7, 2, 2, 40]).unwrap();
        for i in 0..c.len() {
            for j in 0..c.len() {
                if i != j {
                    assert!(!c.codeword(j).starts_with(c.codeword(i)));
                }
            }
        }
    }

    #[test]
    fn kraft_and_entropy_bound_random_tables() {
        let mut rng = rng_stream(31, 0);
        for _ in 0..20 {
            let freqs: Vec<u64> = (0..200).map(|_| rng.random_range(1..1000)).collect();
            let c = HuffmanCode::build(&freqs).unwrap();
            assert!((c.kraft_sum() - 1.0).abs() < 1e-12);
            let total: f64 = freqs.iter().sum::<u64>() as f64;
            let entropy: f64 = freqs.iter().map(|&f| f as f64 / total).map(|p| -p * p.log2()).sum();
            let mean = c.mean_length(&freqs);
            assert!(mean >= entropy - 1e-9 && mean < entropy + 1.0, "{mean} vs {entropy}");
        }
    }

    #[test]
    fn round_trip_and_empty_sentence() {
        let vocab = crate::corpus::Vocabulary::from_tokens(["the", "cat", "is", "on", "sofa"]);
        let ids = vocab.encode(&["the", "cat", "is", "on", "the", "sofa"]).ids;
        let mut freqs = vec![1u64; vocab.len()];
        for &i in &ids {
            freqs[i] += 3;
        }
        let c = HuffmanCode::build(&freqs).unwrap();
        assert_eq!(c.decode(&c.encode(&ids)), HuffmanDecoded { ids: ids.clone(), clean: true });
        assert_eq!(c.encode(&[]), c.codeword(EOS));
        assert_eq!(c.decode(&c.encode(&[])).ids, Vec::<usize>::new());
    }

    #[test]
    fn truncation_yields_unk_remainder() {
        let c = HuffmanCode::build(&[1, 1, 1, 1, 10, 20, 30]).unwrap();
        let bits = c.encode(&[5, 6, 4]);
        let d = c.decode(&bits[..bits.len() - 1]);
        assert!(!d.clean);
        assert_eq!(d.ids.last(), Some(&UNK));
    }

    #[test]
    fn early_bit_flip_desynchronizes() {
        let freqs: Vec<u64> = (0..40).map(|i| 1 + (i * 7 % 13) as u64).collect();
        let c = HuffmanCode::build(&freqs).unwrap();
        let ids: Vec<usize> = (4..24).collect();
        let mut bits = c.encode(&ids);
        bits[1] = !bits[1];
        let d = c.decode(&bits);
        let acc = crate::metrics::word_accuracy(&[d.ids], &[ids]);
        assert!(acc < 1.0);
    }
}
