//! Fixed sentence embeddings for captions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Maps a sentence to a fixed-dimension vector. Pretrained encoders plug in here.
pub trait SentenceEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Bag of subwords: each lowercase word and each character trigram of
/// `<word>` seeds a Gaussian vector; the sum is L2-normalized. The empty
/// string embeds to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 64, seed: 0xca97_10e5 }
    }
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn subwords(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let word: String = word.chars().filter(|c| c.is_alphanumeric()).collect();
        if word.is_empty() {
            continue;
        }
        let padded: Vec<char> = format!("<{word}>").chars().collect();
        for w in padded.windows(3) {
            out.push(w.iter().collect());
        }
        out.push(word);
    }
    out
}

impl SentenceEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for piece in subwords(text) {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(piece.as_bytes(), self.seed));
            for x in v.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *x += g;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::cosine;

    #[test]
    fn deterministic_unit_norm() {
        let e = HashEmbedder::default();
        let a = e.embed("A calm, warm voice.");
        assert_eq!(a, e.embed("A calm, warm voice."));
        assert!((a.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
        assert!(e.embed("").iter().all(|&x| x == 0.0));
        assert_eq!(e.embed("calm voice"), e.embed("CALM   voice!"));
    }

    #[test]
    fn disjoint_captions_are_dissimilar() {
        let e = HashEmbedder::default();
        let a = e.embed("furious shouting with trembling rage");
        let b = e.embed("quiet gentle murmur at slow pace");
        assert!(cosine(&a, &b) < 0.5);
        let c = e.embed("furious shouting with rage");
        assert!(cosine(&a, &c) > 0.7);
    }
}
