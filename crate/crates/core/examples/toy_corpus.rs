//! Writes the synthetic dialogue corpus used by the smoke runs.
//!
//! cargo run --example toy_corpus -- <dir> [dialogues] [turns]

use std::path::PathBuf;

use convsynth::corpus::corpus_stats;
use convsynth::harness::stats_table;
use convsynth::toy::{write_toy_corpus, ToySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "toy_corpus".into()));
    let dialogues = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8);
    let turns = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let sessions = write_toy_corpus(&dir, &ToySpec { dialogues, turns, ..ToySpec::default() })?;
    println!("wrote {} sessions to {}", sessions.len(), dir.display());
    print!("{}", stats_table(&corpus_stats(&sessions)));
    Ok(())
}
