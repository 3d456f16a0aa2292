//! Mono PCM waveform container and WAV I/O.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("{path}: {source}")]
    Wav { path: String, source: hound::Error },
    #[error("{0}: unsupported sample format")]
    Format(String),
}

/// Samples normalized to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn silence(seconds: f64, sample_rate: u32) -> Self {
        Self::new(vec![0.0; (seconds * sample_rate as f64).round() as usize], sample_rate)
    }

    pub fn sine(freq: f64, amplitude: f64, seconds: f64, sample_rate: u32) -> Self {
        let n = (seconds * sample_rate as f64).round() as usize;
        let sr = sample_rate as f64;
        let samples = (0..n).map(|i| amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin()).collect();
        Self::new(samples, sample_rate)
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.samples.iter().map(|s| s * k).collect(), self.sample_rate)
    }
}

fn wav_err(path: &Path, source: hound::Error) -> AudioError {
    AudioError::Wav { path: path.display().to_string(), source }
}

/// Reads a PCM or float WAV; multi-channel input is averaged to mono.
pub fn read_wav(path: &Path) -> Result<Waveform, AudioError> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let full_scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(AudioError::Format(path.display().to_string()));
            }
            reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
    };
    let samples = interleaved.chunks(channels).map(|c| c.iter().sum::<f64>() / channels as f64).collect();
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Duration in seconds from the header alone.
pub fn wav_duration(path: &Path) -> Result<f64, AudioError> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}

/// Writes 16-bit mono PCM, clipping to [-1, 1].
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
