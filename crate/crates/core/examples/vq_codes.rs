//! Fits a k-means codebook on toy utterances and encodes one into 25 Hz codes.
//!
//! cargo run --example vq_codes -- [k]

use convsynth::codec::{compute_mel, decode_centroids, encode_semantic, train_codebook, MelConfig};
use convsynth::toy::render_utterance;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(16);
    let cfg = MelConfig::for_sample_rate(16_000);
    let lines = ["good morning to you", "I am so sorry", "that is wonderful", "leave me alone"];
    let mut mels = Vec::new();
    for (i, (text, f0)) in lines.iter().zip([110.0, 150.0, 210.0, 250.0]).enumerate() {
        mels.push(compute_mel(&render_utterance(text, f0, 0.3, 0.3, 16_000, i as u64), &cfg)?);
    }
    let (book, report) = train_codebook(&mels, k, 0)?;
    println!("codebook {} x {}: {report:?}", book.k(), book.dim());
    let codes = encode_semantic(&mels[2], &book)?;
    println!("{} mel frames -> {} codes: {:?}", mels[2].n_frames(), codes.len(), codes.codes);
    let coarse = decode_centroids(&codes, &book, &cfg)?;
    println!("centroid mel {:?}", coarse.frames.dim());
    Ok(())
}
