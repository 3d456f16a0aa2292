//! Computes an 80-bin log-mel of a harmonic tone and inverts it with Griffin-Lim.
//!
//! cargo run --example mel_roundtrip -- [out.wav]

use convsynth::audio::write_wav;
use convsynth::cfm::griffin_lim;
use convsynth::codec::{compute_mel, MelConfig};
use convsynth::metrics::voiced_contour;
use convsynth::toy::render_utterance;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "mel_roundtrip.wav".into());
    let wave = render_utterance("hello there how are you", 180.0, 0.3, 0.3, 16_000, 1);
    let cfg = MelConfig::for_sample_rate(wave.sample_rate);
    let mel = compute_mel(&wave, &cfg)?;
    println!("{:.2}s audio -> mel {:?} at {} frames/s", wave.duration(), mel.frames.dim(), mel.frame_rate);
    let rebuilt = griffin_lim(&mel, &cfg, 32, 0)?;
    let f0 = |w| voiced_contour(w).map(|c| c.iter().sum::<f64>() / c.len().max(1) as f64);
    println!("mean F0 original {:.1} Hz, rebuilt {:.1} Hz", f0(&wave)?, f0(&rebuilt)?);
    write_wav(out.as_ref(), &rebuilt)?;
    println!("wrote {out}");
    Ok(())
}
