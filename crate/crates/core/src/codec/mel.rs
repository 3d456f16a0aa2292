use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::CodecError;
use crate::audio::Waveform;

pub const N_MELS: usize = 80;

/// Log-mel front-end settings. Frames are centred at `i * sample_rate / frame_rate`
/// (fractional hops allowed) with zero padding at the edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub frame_rate: f64,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Floor applied to mel power before the natural log.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            win_length: 1024,
            frame_rate: 100.0,
            n_mels: N_MELS,
            f_min: 0.0,
            f_max: 11025.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        Self { sample_rate, f_max: sample_rate as f64 / 2.0, ..Self::default() }
    }

    pub fn floor_value(&self) -> f64 {
        self.log_floor.ln()
    }

    pub fn frame_count(&self, n_samples: usize) -> usize {
        ((n_samples as f64 * self.frame_rate / self.sample_rate as f64).ceil() as usize).max(1)
    }
}

/// Log-mel spectrogram, `[frames x n_mels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub frame_rate: f64,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.n_frames() == 0 {
            return Err(CodecError::Invalid("mel spectrogram has no frames".into()));
        }
        if self.n_mels() != N_MELS {
            return Err(CodecError::Invalid(format!("expected {N_MELS} mel bins, got {}", self.n_mels())));
        }
        if !self.frames.iter().all(|v| v.is_finite()) {
            return Err(CodecError::Invalid("mel spectrogram has non-finite entries".into()));
        }
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Centre frequencies of the triangular filters, Hz.
pub fn mel_center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    (1..=cfg.n_mels).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64)).collect()
}

/// Unnormalized triangular filterbank, `[n_mels x (n_fft/2 + 1)]`.
pub fn mel_filterbank(cfg: &MelConfig) -> Array2<f64> {
    let n_bins = cfg.n_fft / 2 + 1;
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    let edges: Vec<f64> =
        (0..cfg.n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64)).collect();
    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            let w = if f >= left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f <= right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w.max(0.0);
        }
    }
    fb
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Power spectrogram `[frames x (n_fft/2 + 1)]` on the mel frame grid.
pub fn power_spectrogram(wave: &Waveform, cfg: &MelConfig) -> Array2<f64> {
    let n_frames = cfg.frame_count(wave.samples.len());
    let n_bins = cfg.n_fft / 2 + 1;
    let window = hann(cfg.win_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut out = Array2::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let pad = (cfg.n_fft - cfg.win_length) / 2;
    for i in 0..n_frames {
        let center = (i as f64 * cfg.sample_rate as f64 / cfg.frame_rate).round() as i64;
        let start = center - (cfg.win_length / 2) as i64;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (j, w) in window.iter().enumerate() {
            let idx = start + j as i64;
            if idx >= 0 && (idx as usize) < wave.samples.len() {
                buf[pad + j] = Complex::new(wave.samples[idx as usize] * w, 0.0);
            }
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            out[[i, k]] = buf[k].norm_sqr();
        }
    }
    out
}

pub fn compute_mel(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram, CodecError> {
    if wave.is_empty() {
        return Err(CodecError::Invalid("empty waveform".into()));
    }
    if wave.sample_rate < 8000 {
        return Err(CodecError::Invalid(format!("sample rate {} below 8000 Hz", wave.sample_rate)));
    }
    if wave.sample_rate != cfg.sample_rate {
        return Err(CodecError::Invalid(format!(
            "waveform at {} Hz, mel config expects {} Hz",
            wave.sample_rate, cfg.sample_rate
        )));
    }
    let power = power_spectrogram(wave, cfg);
    let fb = mel_filterbank(cfg);
    let floor = cfg.log_floor;
    let frames = power.dot(&fb.t()).mapv(|p| p.max(floor).ln());
    Ok(MelSpectrogram { frames, frame_rate: cfg.frame_rate, sample_rate: cfg.sample_rate })
}
