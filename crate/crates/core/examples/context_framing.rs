//! Frames a two-turn history and a target turn into one id sequence and shows
//! which positions the caption and speech losses see.
//!
//! cargo run --example context_framing

use convsynth::codec::{SemanticCodes, SpeakerVector};
use convsynth::context::{build_sequence, build_training_target, parse_sequence, TokenClass, TurnTokens, VocabSpec};

fn turn(seed: f64, text: Vec<u32>, codes: Vec<u32>, caption: Vec<u32>) -> TurnTokens {
    let spk = SpeakerVector::from_raw((0..192).map(|i| (i as f64 * seed).sin()).collect());
    TurnTokens { speaker: spk, text, codes: Some(SemanticCodes::new(codes)), caption: Some(caption) }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = VocabSpec::new(32, 16);
    let history = [turn(0.1, vec![1, 2, 3], vec![4, 4, 9], vec![7, 8]), turn(0.2, vec![5, 6], vec![0, 1], vec![10])];
    let target = TurnTokens { codes: None, caption: None, ..turn(0.1, vec![11, 12], vec![], vec![]) };
    let codes = SemanticCodes::new(vec![3, 3, 2, 15]);
    let seq = build_sequence(&history, &target, &vocab, Some(&codes), Some(&[20, 21, 22]))?;
    assert_eq!(parse_sequence(&seq.ids, &vocab)?, seq.layout);
    let tt = build_training_target(&seq)?;
    println!("{} ids, {} speaker slots", seq.len(), seq.speakers.len());
    for (p, &id) in tt.target.iter().enumerate() {
        let tag = match vocab.classify(id) {
            TokenClass::Text(t) => format!("text {t}"),
            TokenClass::Code(c) => format!("code {c}"),
            TokenClass::Special(s) => format!("{s:?}"),
            TokenClass::Invalid => "invalid".into(),
        };
        let mask = if tt.caption_mask[p] { "caption" } else if tt.speech_mask[p] { "speech" } else { "" };
        println!("{:3} -> {:12} {mask}", p + 1, tag);
    }
    println!("caption positions {}, speech positions {}", tt.caption_count(), tt.speech_count());
    Ok(())
}
