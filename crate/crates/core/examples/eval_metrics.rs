//! Computes the objective metrics on a handful of synthetic pairs and captions.
//!
//! cargo run --example eval_metrics

use convsynth::embed::HashEmbedder;
use convsynth::metrics::{accuracy, caption_similarity, ddtw, distinct_n, dtw_distance, speaker_similarity_proxy};
use convsynth::toy::render_utterance;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("dtw([1,2,3], [1,2,2,3]) = {}", dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0])?);
    let text = "where did you put the letter";
    let reference = render_utterance(text, 150.0, 0.1, 0.3, 16_000, 0);
    let close = render_utterance(text, 155.0, 0.1, 0.3, 16_000, 1);
    let far = render_utterance(text, 230.0, 0.1, 0.3, 16_000, 2);
    let pairs = vec![(reference.clone(), close), (reference, far)];
    let (mean, per) = ddtw(&pairs)?;
    println!("DDTW mean {mean:.2} Hz, per pair {per:.2?}");
    println!("speaker similarity proxy {:.3}", speaker_similarity_proxy(&pairs)?);
    let captions: Vec<String> = [
        "A sad woman speaks slowly with low energy.",
        "The speaker, a happy male, speaks with high pitch.",
        "A sad woman speaks slowly with low energy.",
    ]
    .map(String::from)
    .to_vec();
    println!("Dis-1 {:.3}, Dis-2 {:.3}", distinct_n(&captions, 1)?, distinct_n(&captions, 2)?);
    let refs: Vec<String> = captions.iter().rev().cloned().collect();
    println!("caption SIM {:.3}", caption_similarity(&captions, &refs, &HashEmbedder::default())?);
    println!("emotion accuracy {:.3}", accuracy(&["sad", "happy", "angry"], &["sad", "happy", "sad"])?);
    Ok(())
}
