//! Annotates a small toy corpus with the offline LLM client and prints the
//! measured style and captions.
//!
//! cargo run --example annotate_mock

use convsynth::emcap::{annotate_corpus, AnnotateOptions, MockLlm};
use convsynth::toy::{write_toy_corpus, ToySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let sessions = write_toy_corpus(dir.path(), &ToySpec { dialogues: 2, turns: 4, ..ToySpec::default() })?;
    let ann = annotate_corpus(&sessions, &MockLlm::new(), &AnnotateOptions::default())?;
    for r in &ann.records {
        println!("{} [{}] {:?}", r.utterance_id, r.emotion, r.text);
        println!("    style    {:?}", r.style.levels);
        println!("    basic    {}", r.basic_description);
        println!("    caption  {} (rule {}, verified {})", r.empathetic_caption, r.expansion_rule_id, r.verified);
    }
    println!("{} failures, verified fraction {:.2}", ann.failures.len(), ann.verified_fraction());
    Ok(())
}
