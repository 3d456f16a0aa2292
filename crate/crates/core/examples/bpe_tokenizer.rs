//! Trains a byte-level BPE on a few sentences and round-trips text through it.
//!
//! cargo run --example bpe_tokenizer -- [vocab_size]

use convsynth::bpe::train_bpe;

const TEXTS: &[&str] = &[
    "I really hate waiting in line.",
    "That sounds wonderful, thanks for telling me.",
    "I'm sorry you lost your keys again.",
    "Wow, that is unbelievable news!",
    "The speaker, a happy female, speaks with high pitch.",
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let bpe = train_bpe(TEXTS, vocab)?;
    println!("vocab {} ({} merges)", bpe.vocab_size(), bpe.merges().len());
    for text in ["That sounds unbelievable.", "I miss the keys"] {
        let ids = bpe.encode(text)?;
        let back = bpe.decode(&ids)?;
        println!("{text:?} -> {} ids {ids:?} -> {back:?}", ids.len());
        assert_eq!(back, text);
    }
    // The alphabet is the bytes seen in training, so unseen characters are rejected.
    println!("\"café\" -> {}", bpe.encode("café").unwrap_err());
    Ok(())
}
