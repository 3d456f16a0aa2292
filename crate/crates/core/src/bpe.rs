//! Byte-level BPE shared by utterance text and captions.
//!
//! The base alphabet is the set of bytes seen during training (optionally
//! widened to printable ASCII). Merges are learned greedily by pair
//! frequency; ties go to the numerically smallest pair.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, thiserror::Error)]
pub enum BpeError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("vocab size {requested} must exceed the {alphabet} base symbols")]
    VocabTooSmall { requested: usize, alphabet: usize },
    #[error("byte 0x{0:02x} is not in the tokenizer alphabet")]
    UnknownByte(u8),
    #[error("token id {0} is outside the tokenizer vocabulary")]
    UnknownId(u32),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BpeTrainer {
    /// Seed the alphabet with bytes 0x20..=0x7e so unseen ASCII text still encodes.
    pub printable_ascii: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpeModel {
    alphabet: Vec<u8>,
    merges: Vec<(u32, u32)>,
    vocab: Vec<Vec<u8>>,
    #[serde(skip)]
    byte_to_id: HashMap<u8, u32>,
    #[serde(skip)]
    merge_rank: HashMap<(u32, u32), (usize, u32)>,
}

/// Splits text into chunks of leading whitespace plus one run of non-whitespace.
fn pretokenize(text: &str) -> Vec<&str> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws {
            chunks.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        chunks.push(&text[start..]);
    }
    chunks
}

fn merge_pair(word: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    *word = out;
}

/// Learns a BPE model with at most `vocab_size` symbols.
pub fn train_bpe<S: AsRef<str>>(texts: &[S], vocab_size: usize) -> Result<BpeModel, BpeError> {
    BpeTrainer::default().train(texts, vocab_size)
}

impl BpeTrainer {
    pub fn train<S: AsRef<str>>(&self, texts: &[S], vocab_size: usize) -> Result<BpeModel, BpeError> {
        if texts.is_empty() || texts.iter().all(|t| t.as_ref().is_empty()) {
            return Err(BpeError::EmptyCorpus);
        }
        let normalized: Vec<String> = texts.iter().map(|t| t.as_ref().nfc().collect()).collect();
        let mut alphabet: Vec<u8> = normalized.iter().flat_map(|t| t.bytes()).collect();
        if self.printable_ascii {
            alphabet.extend(0x20u8..=0x7e);
        }
        alphabet.sort_unstable();
        alphabet.dedup();
        if vocab_size <= alphabet.len() {
            return Err(BpeError::VocabTooSmall { requested: vocab_size, alphabet: alphabet.len() });
        }

        let mut model = BpeModel {
            vocab: alphabet.iter().map(|&b| vec![b]).collect(),
            alphabet,
            merges: Vec::new(),
            byte_to_id: HashMap::new(),
            merge_rank: HashMap::new(),
        };
        model.rebuild_index();

        let mut chunk_freq: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &normalized {
            for c in pretokenize(t) {
                *chunk_freq.entry(c).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, usize)> = chunk_freq
            .into_iter()
            .map(|(c, f)| (c.bytes().map(|b| model.byte_to_id[&b]).collect(), f))
            .collect();

        while model.vocab.len() < vocab_size {
            let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
            for (w, f) in &words {
                for pair in w.windows(2) {
                    *counts.entry((pair[0], pair[1])).or_default() += f;
                }
            }
            let Some((&best, _)) = counts.iter().max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then(pb.cmp(pa))) else {
                break;
            };
            let new_id = model.vocab.len() as u32;
            let mut bytes = model.vocab[best.0 as usize].clone();
            bytes.extend_from_slice(&model.vocab[best.1 as usize]);
            model.vocab.push(bytes);
            model.merges.push(best);
            for (w, _) in &mut words {
                merge_pair(w, best, new_id);
            }
        }
        model.rebuild_index();
        Ok(model)
    }
}

impl BpeModel {
    fn rebuild_index(&mut self) {
        self.byte_to_id = self.alphabet.iter().enumerate().map(|(i, &b)| (b, i as u32)).collect();
        let base = self.alphabet.len() as u32;
        self.merge_rank = self.merges.iter().enumerate().map(|(r, &p)| (p, (r, base + r as u32))).collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(Vec::as_slice)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, BpeError> {
        let text: String = text.nfc().collect();
        let mut out = Vec::new();
        for chunk in pretokenize(&text) {
            let mut word = chunk
                .bytes()
                .map(|b| self.byte_to_id.get(&b).copied().ok_or(BpeError::UnknownByte(b)))
                .collect::<Result<Vec<_>, _>>()?;
            loop {
                let best = word
                    .windows(2)
                    .filter_map(|p| self.merge_rank.get(&(p[0], p[1])).map(|&(rank, id)| (rank, (p[0], p[1]), id)))
                    .min_by_key(|&(rank, _, _)| rank);
                match best {
                    Some((_, pair, id)) => merge_pair(&mut word, pair, id),
                    None => break,
                }
            }
            out.extend(word);
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, BpeError> {
        let mut bytes = Vec::new();
        for &id in ids {
            bytes.extend_from_slice(self.token_bytes(id).ok_or(BpeError::UnknownId(id))?);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bpe model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, BpeError> {
        let mut model: BpeModel = serde_json::from_str(s)?;
        model.rebuild_index();
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), BpeError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BpeError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn learns_the_obvious_merge_first() {
        let model = train_bpe(&["aa aa"], 260).unwrap();
        let a = model.byte_to_id[&b'a'];
        assert_eq!(model.merges()[0], (a, a));
        assert_eq!(model.encode("aa").unwrap().len(), 1);
        assert_eq!(model.decode(&model.encode("aa aa").unwrap()).unwrap(), "aa aa");
    }

    #[test]
    fn round_trips_and_is_deterministic() {
        let corpus = ["hello there", "hello world", "help the hero"];
        let a = train_bpe(&corpus, 40).unwrap();
        let b = train_bpe(&corpus, 40).unwrap();
        assert_eq!(a.merges(), b.merges());
        assert_eq!(a.decode(&a.encode("hello").unwrap()).unwrap(), "hello");
        for t in corpus {
            assert_eq!(a.decode(&a.encode(t).unwrap()).unwrap(), t);
        }
    }

    #[test]
    fn rejects_small_vocab_and_unknown_bytes() {
        assert!(matches!(train_bpe(&["abc"], 3), Err(BpeError::VocabTooSmall { .. })));
        assert!(matches!(train_bpe::<&str>(&[], 10), Err(BpeError::EmptyCorpus)));
        let m = train_bpe(&["abc"], 5).unwrap();
        assert!(matches!(m.encode("abz"), Err(BpeError::UnknownByte(b'z'))));
        let wide = BpeTrainer { printable_ascii: true }.train(&["abc"], 120).unwrap();
        assert_eq!(wide.decode(&wide.encode("Zebra!").unwrap()).unwrap(), "Zebra!");
    }

    #[test]
    fn json_round_trip_preserves_encoding() {
        let m = train_bpe(&["the speaker speaks with high pitch"], 60).unwrap();
        let back = BpeModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.encode("speaks").unwrap(), m.encode("speaks").unwrap());
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity_on_training_texts(texts in prop::collection::vec("[a-e ,.]{1,30}", 1..6), size in 10usize..80) {
            let model = match train_bpe(&texts, size) {
                Ok(m) => m,
                Err(BpeError::VocabTooSmall { .. }) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            for t in &texts {
                prop_assert_eq!(&model.decode(&model.encode(t).unwrap()).unwrap(), t);
            }
        }
    }
}
