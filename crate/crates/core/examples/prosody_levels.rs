//! Measures pitch, energy and tempo of rendered speech and maps them to levels.
//!
//! cargo run --example prosody_levels

use convsynth::emcap::{classify_level, AttributeThresholds};
use convsynth::prosody::{extract_energy, extract_pitch, extract_tempo};
use convsynth::toy::render_utterance;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let th = AttributeThresholds::default();
    let text = "please tell me what happened";
    for (f0, amp, syl) in [(110.0, 0.02, 0.45), (165.0, 0.045, 0.3), (240.0, 0.2, 0.2)] {
        let wave = render_utterance(text, f0, amp, syl, 16_000, 0);
        let pitch = extract_pitch(&wave)?;
        let energy = extract_energy(&wave)?;
        let tempo = extract_tempo(None, "demo", wave.duration(), text)?;
        println!(
            "F0 {pitch:6.1} Hz ({}), RMS {energy:.4} ({}), {:.3} s/phone ({}{})",
            classify_level(pitch, th.pitch),
            classify_level(energy, th.energy),
            tempo.mpd,
            classify_level(tempo.mpd, th.tempo),
            if tempo.approximate { ", approximate" } else { "" },
        );
    }
    Ok(())
}
