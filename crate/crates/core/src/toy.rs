//! Synthetic dialogue corpus with harmonic "speech" whose pitch, energy and
//! rate follow speaker and emotion, for tests, examples and smoke runs.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, Waveform};
use crate::corpus::{write_corpus, CorpusError, DialogueSession, Emotion, Role, Utterance, MANIFEST_FILE};
use crate::prosody::vowel_groups;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpec {
    pub dialogues: usize,
    pub turns: usize,
    pub sample_rate: u32,
    /// Seconds per vowel group.
    pub syllable_s: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self { dialogues: 8, turns: 4, sample_rate: 16000, syllable_s: 0.3, seed: 0 }
    }
}

struct Voice {
    id: &'static str,
    f0: f64,
}

const VOICES: [Voice; 4] =
    [Voice { id: "ava", f0: 215.0 }, Voice { id: "ben", f0: 105.0 }, Voice { id: "cleo", f0: 245.0 }, Voice { id: "dan", f0: 92.0 }];

const NOUNS: [&str; 8] = ["train", "party", "report", "garden", "movie", "dinner", "test", "trip"];

fn sentence(e: Emotion, noun: &str) -> String {
    match e {
        Emotion::Angry => format!("I hate this {noun}"),
        Emotion::Contempt => format!("Whatever, that {noun} is pathetic"),
        Emotion::Disgusted => format!("That {noun} was gross"),
        Emotion::Fear => format!("I am scared about the {noun}"),
        Emotion::Happy => format!("The {noun} was great"),
        Emotion::Sad => format!("I am sorry about the {noun}"),
        Emotion::Neutral => format!("See you at the {noun}"),
        Emotion::Surprised => format!("Wow, the {noun} came early"),
    }
}

/// Pitch factor, amplitude and rate factor for an emotion.
fn delivery(e: Emotion) -> (f64, f64, f64) {
    match e {
        Emotion::Angry => (1.15, 0.22, 0.85),
        Emotion::Contempt => (0.95, 0.05, 1.1),
        Emotion::Disgusted => (0.9, 0.07, 1.0),
        Emotion::Fear => (1.2, 0.04, 0.8),
        Emotion::Happy => (1.1, 0.12, 0.9),
        Emotion::Sad => (0.85, 0.025, 1.4),
        Emotion::Neutral => (1.0, 0.045, 1.0),
        Emotion::Surprised => (1.3, 0.15, 0.85),
    }
}

/// Harmonic tone at `f0` with one amplitude bump per vowel group and a
/// formant-like spectral tilt that changes between syllables. `amplitude`
/// is roughly the RMS of the result.
pub fn render_utterance(text: &str, f0: f64, amplitude: f64, syllable_s: f64, sample_rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let syllables = vowel_groups(text).max(2);
    let n_syl = (syllable_s * sample_rate as f64) as usize;
    let tilts: Vec<f64> = (0..syllables).map(|_| rng.gen_range(0.3..1.0)).collect();
    let mut samples = Vec::with_capacity(n_syl * syllables);
    let mut phase = 0.0;
    for (k, &tilt) in tilts.iter().enumerate() {
        for i in 0..n_syl {
            let t = i as f64 / n_syl as f64;
            let f = f0 * (1.0 + 0.03 * (2.0 * PI * (k as f64 + t) / syllables as f64).sin());
            phase += 2.0 * PI * f / sample_rate as f64;
            let env = (PI * t).sin().powf(0.5) * 0.8 + 0.2;
            let mut s = 0.0;
            let mut norm = 0.0;
            for h in 1..=5 {
                let w = tilt.powi(h - 1);
                s += w * (h as f64 * phase).sin();
                norm += w * w;
            }
            samples.push(amplitude * env * s / norm.sqrt() * std::f64::consts::SQRT_2);
        }
    }
    Waveform::new(samples, sample_rate)
}

/// Builds the sessions and writes `manifest.jsonl` plus `audio/*.wav` under `dir`.
pub fn write_toy_corpus(dir: &Path, spec: &ToySpec) -> Result<Vec<DialogueSession>, CorpusError> {
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|source| CorpusError::Io { path: audio.display().to_string(), source })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sessions = Vec::with_capacity(spec.dialogues);
    for d in 0..spec.dialogues {
        let session_id = format!("toy{d:03}");
        let mut pair: Vec<usize> = (0..VOICES.len()).collect();
        pair.shuffle(&mut rng);
        let mut turns = Vec::with_capacity(spec.turns);
        for k in 0..spec.turns {
            let voice = &VOICES[pair[k % 2]];
            let emotion = *Emotion::ALL.choose(&mut rng).expect("non-empty");
            let noun = NOUNS.choose(&mut rng).expect("non-empty");
            let text = sentence(emotion, noun);
            let (pf, amp, rate) = delivery(emotion);
            let wave = render_utterance(&text, voice.f0 * pf, amp, spec.syllable_s * rate, spec.sample_rate, rng.gen());
            let path = audio.join(format!("{session_id}_{k}.wav"));
            write_wav(&path, &wave).map_err(|e| CorpusError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e.to_string()),
            })?;
            let role = if k % 2 == 0 { Role::User } else { Role::Agent };
            let mut u = Utterance::new(voice.id, role, text);
            u.audio_path = Some(path);
            u.emotion = Some(emotion);
            turns.push(u);
        }
        sessions.push(DialogueSession { session_id, turns });
    }
    write_corpus(&sessions, &dir.join(MANIFEST_FILE))?;
    Ok(sessions)
}
