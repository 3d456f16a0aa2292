use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mel::{compute_mel, MelConfig};
use super::CodecError;
use crate::audio::Waveform;

pub const SPEAKER_DIM: usize = 192;
const MIN_SECONDS: f64 = 0.5;
const PROJECTION_SEED: u64 = 0x5eed_0192;

/// Unit-norm speaker embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerVector(pub Vec<f64>);

impl SpeakerVector {
    /// Normalizes `v`; a zero vector stays zero.
    pub fn from_raw(v: Vec<f64>) -> Self {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            Self(v.into_iter().map(|x| x / norm).collect())
        } else {
            Self(v)
        }
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; SPEAKER_DIM])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &SpeakerVector) -> f64 {
        cosine(&self.0, &other.0)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Produces a speaker vector from audio. Pretrained voice-print models plug in here.
pub trait SpeakerEncoder {
    fn embed(&self, wave: &Waveform) -> Result<SpeakerVector, CodecError>;
}

/// Mean and standard deviation of log-mel frames, projected by a fixed seeded
/// Gaussian matrix to 192 dimensions.
#[derive(Debug, Clone)]
pub struct StatsPoolingEncoder {
    mel: MelConfig,
    projection: Array2<f64>,
}

impl StatsPoolingEncoder {
    pub fn new(mel: MelConfig) -> Self {
        let in_dim = 2 * mel.n_mels;
        let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
        let projection = Array2::from_shape_simple_fn((SPEAKER_DIM, in_dim), || normal.sample(&mut rng));
        Self { mel, projection }
    }
}

impl SpeakerEncoder for StatsPoolingEncoder {
    fn embed(&self, wave: &Waveform) -> Result<SpeakerVector, CodecError> {
        if wave.duration() < MIN_SECONDS {
            return Err(CodecError::Invalid(format!(
                "speaker embedding needs at least {MIN_SECONDS} s of audio, got {:.3} s",
                wave.duration()
            )));
        }
        let mel = compute_mel(wave, &self.mel)?;
        let mean = mel.frames.mean_axis(Axis(0)).expect("at least one frame");
        let std = mel.frames.std_axis(Axis(0), 0.0);
        let mut stats = Array1::zeros(2 * self.mel.n_mels);
        stats.slice_mut(ndarray::s![..self.mel.n_mels]).assign(&mean);
        stats.slice_mut(ndarray::s![self.mel.n_mels..]).assign(&std);
        Ok(SpeakerVector::from_raw(self.projection.dot(&stats).to_vec()))
    }
}

pub fn speaker_embedding(wave: &Waveform, mel: &MelConfig) -> Result<SpeakerVector, CodecError> {
    StatsPoolingEncoder::new(*mel).embed(wave)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let cfg = MelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Waveform::new((0..22050).map(|_| rng.gen_range(-0.5..0.5)).collect(), 22050);
        let a = speaker_embedding(&noise, &cfg).unwrap();
        let b = speaker_embedding(&noise, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), SPEAKER_DIM);
        assert!((a.0.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn different_tones_are_distinguishable() {
        let cfg = MelConfig::default();
        let a = speaker_embedding(&Waveform::sine(120.0, 0.3, 1.0, 22050), &cfg).unwrap();
        let b = speaker_embedding(&Waveform::sine(240.0, 0.3, 1.0, 22050), &cfg).unwrap();
        assert!(a.cosine(&b) < 1.0 - 1e-6);
    }

    #[test]
    fn short_audio_is_rejected() {
        assert!(speaker_embedding(&Waveform::sine(120.0, 0.3, 0.3, 22050), &MelConfig::default()).is_err());
    }
}
