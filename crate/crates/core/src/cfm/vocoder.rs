use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::CfmError;
use crate::audio::Waveform;
use crate::codec::{mel_filterbank, MelConfig, MelSpectrogram};

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Non-negative least-squares estimate of linear power from log-mel, by
/// multiplicative updates.
pub fn mel_to_power(mel: &MelSpectrogram, cfg: &MelConfig, iters: usize) -> Array2<f64> {
    let fb = mel_filterbank(cfg);
    let target = mel.frames.mapv(f64::exp);
    let col_sum = fb.sum_axis(ndarray::Axis(0)).mapv(|v| v.max(1e-8));
    let mut p = target.dot(&fb) / &col_sum;
    p.mapv_inplace(|v| v.max(1e-10));
    for _ in 0..iters {
        let approx = p.dot(&fb.t()).mapv(|v| v.max(1e-12));
        let num = target.dot(&fb);
        let den = approx.dot(&fb).mapv(|v| v.max(1e-12));
        p = p * (num / den);
    }
    p
}

/// Phase reconstruction by alternating projections on the mel frame grid.
/// Intended for listening checks only.
pub fn griffin_lim(mel: &MelSpectrogram, cfg: &MelConfig, iters: usize, seed: u64) -> Result<Waveform, CfmError> {
    if mel.n_frames() == 0 || mel.n_mels() != cfg.n_mels {
        return Err(CfmError::Shape(format!("mel {:?} for {} bins", mel.frames.shape(), cfg.n_mels)));
    }
    let mag = mel_to_power(mel, cfg, 30).mapv(f64::sqrt);
    let (n_frames, n_bins) = mag.dim();
    let n_fft = cfg.n_fft;
    let win = hann(cfg.win_length);
    let pad = (n_fft - cfg.win_length) / 2;
    let hop = cfg.sample_rate as f64 / cfg.frame_rate;
    let n_samples = (n_frames as f64 * hop).round() as usize;
    let starts: Vec<i64> =
        (0..n_frames).map(|i| (i as f64 * hop).round() as i64 - (cfg.win_length / 2) as i64).collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);

    let mut norm = vec![0.0; n_samples];
    for &s in &starts {
        for (j, w) in win.iter().enumerate() {
            let idx = s + j as i64;
            if idx >= 0 && (idx as usize) < n_samples {
                norm[idx as usize] += w * w;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase: Array2<f64> = Array2::from_shape_simple_fn((n_frames, n_bins), || rng.gen_range(-PI..PI));
    let mut signal = vec![0.0; n_samples];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for it in 0..=iters {
        signal.iter_mut().for_each(|v| *v = 0.0);
        for (i, &s) in starts.iter().enumerate() {
            for k in 0..n_bins {
                buf[k] = Complex::from_polar(mag[[i, k]], phase[[i, k]]);
            }
            for k in n_bins..n_fft {
                buf[k] = buf[n_fft - k].conj();
            }
            inv.process(&mut buf);
            for (j, w) in win.iter().enumerate() {
                let idx = s + j as i64;
                if idx >= 0 && (idx as usize) < n_samples {
                    signal[idx as usize] += w * buf[pad + j].re / n_fft as f64;
                }
            }
        }
        for (v, n) in signal.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *v /= n;
            }
        }
        if it == iters {
            break;
        }
        for (i, &s) in starts.iter().enumerate() {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (j, w) in win.iter().enumerate() {
                let idx = s + j as i64;
                if idx >= 0 && (idx as usize) < n_samples {
                    buf[pad + j] = Complex::new(signal[idx as usize] * w, 0.0);
                }
            }
            fwd.process(&mut buf);
            for k in 0..n_bins {
                phase[[i, k]] = buf[k].arg();
            }
        }
    }
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !peak.is_finite() {
        return Err(CfmError::NonFinite("phase reconstruction".into()));
    }
    if peak > 1.0 {
        signal.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(Waveform::new(signal, cfg.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::compute_mel;

    #[test]
    fn reconstruction_keeps_length_and_dominant_band() {
        let cfg = MelConfig::default();
        let wave = Waveform::sine(440.0, 0.3, 0.3, 22050);
        let mel = compute_mel(&wave, &cfg).unwrap();
        let out = griffin_lim(&mel, &cfg, 8, 0).unwrap();
        assert_eq!(out.samples.len(), (mel.n_frames() as f64 * 220.5).round() as usize);
        let back = compute_mel(&out, &cfg).unwrap();
        let mid = back.n_frames() / 2;
        let argmax = |m: &MelSpectrogram| {
            let row = m.frames.row(mid);
            row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0
        };
        assert!((argmax(&back) as i64 - argmax(&mel) as i64).abs() <= 1);
    }
}
