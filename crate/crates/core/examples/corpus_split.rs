//! Loads a manifest, splits sessions by a seeded shuffle and lists the context
//! windows of one dialogue.
//!
//! cargo run --example corpus_split -- [manifest_dir]

use convsynth::corpus::{load_corpus, split_corpus, window_context, SplitSpec};
use convsynth::toy::{write_toy_corpus, ToySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let sessions = match std::env::args().nth(1) {
        Some(dir) => load_corpus(dir.as_ref())?,
        None => {
            write_toy_corpus(tmp.path(), &ToySpec { dialogues: 10, ..ToySpec::default() })?;
            load_corpus(tmp.path())?
        }
    };
    let split = split_corpus(&sessions, &SplitSpec { ratios: [0.8, 0.1, 0.1], seed: 0 })?;
    let ids = |v: &[convsynth::corpus::DialogueSession]| v.iter().map(|s| s.session_id.clone()).collect::<Vec<_>>();
    println!("train {:?}\nvalid {:?}\ntest  {:?}", ids(&split.train), ids(&split.valid), ids(&split.test));
    let s = &sessions[0];
    for w in window_context(s, 3) {
        println!("{} turn {}: {} history turns -> {:?}", w.session_id, w.target_index, w.history.len(), w.target.text);
    }
    Ok(())
}
