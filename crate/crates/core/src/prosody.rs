//! Utterance-level prosody: autocorrelation F0, frame RMS energy, and mean
//! phone duration from forced alignments.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;

#[derive(Debug, thiserror::Error)]
pub enum ProsodyError {
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("no alignment for utterance {0}")]
    UnknownUtterance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub frame_seconds: f64,
    pub hop_seconds: f64,
    /// Normalized autocorrelation a frame needs to count as voiced.
    pub voicing_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self { f_min: 60.0, f_max: 500.0, frame_seconds: 0.05, hop_seconds: 0.01, voicing_threshold: 0.5 }
    }
}

/// F0 per frame in Hz; `0.0` marks unvoiced frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchContour {
    pub f0: Vec<f64>,
    pub frame_rate: f64,
}

impl PitchContour {
    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0.iter().copied().filter(|&f| f > 0.0)
    }

    pub fn is_fully_unvoiced(&self) -> bool {
        self.voiced().next().is_none()
    }

    /// Fills unvoiced frames by linear interpolation between voiced neighbours,
    /// holding the first and last voiced values at the edges.
    pub fn interpolated(&self) -> Option<Vec<f64>> {
        let voiced: Vec<usize> = (0..self.f0.len()).filter(|&i| self.f0[i] > 0.0).collect();
        let (&first, &last) = (voiced.first()?, voiced.last()?);
        let mut out = self.f0.clone();
        for v in out.iter_mut().take(first) {
            *v = self.f0[first];
        }
        for v in out.iter_mut().skip(last + 1) {
            *v = self.f0[last];
        }
        for w in voiced.windows(2) {
            let (a, b) = (w[0], w[1]);
            for i in a + 1..b {
                let r = (i - a) as f64 / (b - a) as f64;
                out[i] = self.f0[a] + r * (self.f0[b] - self.f0[a]);
            }
        }
        Some(out)
    }
}

fn frame_f0(frame: &[f64], sr: f64, cfg: &PitchConfig) -> Option<f64> {
    let n = frame.len();
    let min_lag = (sr / cfg.f_max).floor().max(1.0) as usize;
    let max_lag = ((sr / cfg.f_min).ceil() as usize).min(n - 1);
    if max_lag <= min_lag + 1 {
        return None;
    }
    let energy: f64 = frame.iter().map(|x| x * x).sum();
    if energy < 1e-10 {
        return None;
    }
    let mean = frame.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();
    let r: Vec<f64> = (0..=max_lag + 1)
        .map(|lag| {
            if lag >= n {
                return 0.0;
            }
            let (a, b) = (&x[..n - lag], &x[lag..]);
            let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            let den = (a.iter().map(|v| v * v).sum::<f64>() * b.iter().map(|v| v * v).sum::<f64>()).sqrt();
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect();
    let peaks: Vec<usize> = (min_lag.max(1)..=max_lag).filter(|&l| r[l] > r[l - 1] && r[l] >= r[l + 1]).collect();
    let best = peaks.iter().map(|&l| r[l]).fold(f64::NEG_INFINITY, f64::max);
    if !(best > cfg.voicing_threshold) {
        return None;
    }
    let lag = *peaks.iter().find(|&&l| r[l] >= 0.9 * best)?;
    let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Some(sr / (lag as f64 + shift))
}

pub fn pitch_contour(wave: &Waveform, cfg: &PitchConfig) -> PitchContour {
    let sr = wave.sample_rate as f64;
    let frame = (cfg.frame_seconds * sr).round() as usize;
    let hop = (cfg.hop_seconds * sr).round().max(1.0) as usize;
    let mut f0 = Vec::new();
    if frame >= 2 && wave.samples.len() >= frame {
        let mut start = 0;
        while start + frame <= wave.samples.len() {
            f0.push(frame_f0(&wave.samples[start..start + frame], sr, cfg).unwrap_or(0.0));
            start += hop;
        }
    }
    PitchContour { f0, frame_rate: 1.0 / cfg.hop_seconds }
}

/// Mean F0 over voiced frames; `0.0` if no frame is voiced.
pub fn extract_pitch(wave: &Waveform) -> Result<f64, ProsodyError> {
    if wave.duration() < 0.1 {
        return Err(ProsodyError::Input(format!("pitch needs at least 0.1 s of audio, got {:.3} s", wave.duration())));
    }
    let contour = pitch_contour(wave, &PitchConfig::default());
    let voiced: Vec<f64> = contour.voiced().collect();
    Ok(if voiced.is_empty() { 0.0 } else { voiced.iter().sum::<f64>() / voiced.len() as f64 })
}

pub const ENERGY_FRAME: usize = 2048;
pub const ENERGY_HOP: usize = 512;

/// Mean RMS over uncentred frames of 2048 samples with hop 512. Audio shorter
/// than one frame is treated as one zero-padded frame.
pub fn extract_energy(wave: &Waveform) -> Result<f64, ProsodyError> {
    let x = &wave.samples;
    if x.is_empty() {
        return Err(ProsodyError::Input("empty waveform".into()));
    }
    let rms = |f: &[f64]| (f.iter().map(|v| v * v).sum::<f64>() / ENERGY_FRAME as f64).sqrt();
    if x.len() < ENERGY_FRAME {
        return Ok(rms(x));
    }
    let n_frames = 1 + (x.len() - ENERGY_FRAME) / ENERGY_HOP;
    let total: f64 = (0..n_frames).map(|i| rms(&x[i * ENERGY_HOP..i * ENERGY_HOP + ENERGY_FRAME])).sum();
    Ok(total / n_frames as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneInterval {
    pub phone: String,
    pub start: f64,
    pub end: f64,
}

/// Phone alignments keyed by utterance id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Alignments(pub BTreeMap<String, Vec<PhoneInterval>>);

const SILENCE: [&str; 4] = ["", "sil", "sp", "spn"];

fn parse_interval(path: &str, line: usize, cols: &[&str]) -> Result<PhoneInterval, ProsodyError> {
    let num = |s: &str| {
        s.trim().parse::<f64>().map_err(|e| ProsodyError::Parse { path: path.into(), line, message: format!("{s:?}: {e}") })
    };
    let (start, end) = (num(cols[1])?, num(cols[2])?);
    if !(end >= start) || start < 0.0 {
        return Err(ProsodyError::Parse { path: path.into(), line, message: format!("bad interval {start}..{end}") });
    }
    Ok(PhoneInterval { phone: cols[0].trim().to_string(), start, end })
}

impl Alignments {
    /// Reads either one TSV with `utt_id, phone, start, end` rows, or a
    /// directory of `<utt_id>.tsv` files with `phone, start, end` rows.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn load(path: &Path) -> Result<Self, ProsodyError> {
        let io = |e| ProsodyError::Io { path: path.display().to_string(), source: e };
        let mut map: BTreeMap<String, Vec<PhoneInterval>> = BTreeMap::new();
        if path.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(path).map_err(io)?.collect::<Result<_, _>>().map_err(io)?;
            entries.sort_by_key(|e| e.path());
            for entry in entries {
                let p = entry.path();
                if p.extension().and_then(|e| e.to_str()) != Some("tsv") {
                    continue;
                }
                let utt = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let text = std::fs::read_to_string(&p).map_err(|e| ProsodyError::Io { path: p.display().to_string(), source: e })?;
                let name = p.display().to_string();
                let phones = map.entry(utt).or_default();
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let cols: Vec<&str> = line.split('\t').collect();
                    if cols.len() != 3 {
                        return Err(ProsodyError::Parse { path: name, line: i + 1, message: "expected 3 tab-separated columns".into() });
                    }
                    phones.push(parse_interval(&name, i + 1, &cols)?);
                }
            }
        } else {
            let text = std::fs::read_to_string(path).map_err(io)?;
            let name = path.display().to_string();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 4 {
                    return Err(ProsodyError::Parse { path: name, line: i + 1, message: "expected 4 tab-separated columns".into() });
                }
                map.entry(cols[0].trim().to_string()).or_default().push(parse_interval(&name, i + 1, &cols[1..])?);
            }
        }
        Ok(Self(map))
    }

    /// Mean duration of non-silence phones for `utt_id`.
    pub fn tempo(&self, utt_id: &str) -> Result<f64, ProsodyError> {
        let phones = self.0.get(utt_id).ok_or_else(|| ProsodyError::UnknownUtterance(utt_id.to_string()))?;
        let durs: Vec<f64> = phones
            .iter()
            .filter(|p| !SILENCE.contains(&p.phone.to_lowercase().as_str()))
            .map(|p| p.end - p.start)
            .collect();
        if durs.is_empty() {
            return Err(ProsodyError::Input(format!("utterance {utt_id} has no non-silence phones")));
        }
        Ok(durs.iter().sum::<f64>() / durs.len() as f64)
    }
}

/// Number of maximal runs of vowel letters (a, e, i, o, u, y), at least 1.
pub fn vowel_groups(text: &str) -> usize {
    let mut count = 0;
    let mut in_group = false;
    for c in text.chars() {
        let v = matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
        if v && !in_group {
            count += 1;
        }
        in_group = v;
    }
    count.max(1)
}

/// Approximate mean unit duration when no alignment is available.
pub fn tempo_fallback(duration_s: f64, text: &str) -> f64 {
    duration_s / vowel_groups(text) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tempo {
    pub mpd: f64,
    pub approximate: bool,
}

/// Alignment-based tempo if the utterance is aligned, else the vowel-group fallback.
pub fn extract_tempo(alignments: Option<&Alignments>, utt_id: &str, duration_s: f64, text: &str) -> Result<Tempo, ProsodyError> {
    match alignments {
        Some(a) if a.0.contains_key(utt_id) => Ok(Tempo { mpd: a.tempo(utt_id)?, approximate: false }),
        _ => Ok(Tempo { mpd: tempo_fallback(duration_s, text), approximate: true }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sine_pitch() {
        for f in [110.0, 220.0, 150.0, 330.0] {
            let p = extract_pitch(&Waveform::sine(f, 0.5, 0.5, 22050)).unwrap();
            assert!((p - f).abs() < 3.0, "{f}: {p}");
        }
        let p = extract_pitch(&Waveform::sine(200.0, 0.5, 0.5, 16000)).unwrap();
        assert!((p - 200.0).abs() < 3.0);
    }

    #[test]
    fn noise_and_silence_are_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = Waveform::new((0..11025).map(|_| rng.gen_range(-0.5..0.5)).collect(), 22050);
        assert_eq!(extract_pitch(&noise).unwrap(), 0.0);
        assert_eq!(extract_pitch(&Waveform::silence(0.3, 22050)).unwrap(), 0.0);
        assert!(extract_pitch(&Waveform::silence(0.05, 22050)).is_err());
    }

    #[test]
    fn energy_values() {
        assert_eq!(extract_energy(&Waveform::silence(0.5, 22050)).unwrap(), 0.0);
        let square = Waveform::new((0..22050).map(|i| if (i / 50) % 2 == 0 { 1.0 } else { -1.0 }).collect(), 22050);
        assert!((extract_energy(&square).unwrap() - 1.0).abs() < 1e-12);
        let e = extract_energy(&Waveform::sine(220.0, 0.06, 1.0, 22050)).unwrap();
        assert!((e - 0.06 / 2f64.sqrt()).abs() < 5e-4, "{e}");
        assert!(extract_energy(&Waveform::new(vec![], 22050)).is_err());
    }

    #[test]
    fn tempo_from_alignments() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("align.tsv");
        std::fs::write(&file, "u_0\tsil\t0.0\t0.5\nu_0\tAH\t0.5\t0.6\nu_0\tB\t0.6\t0.8\nu_0\tK\t0.8\t1.1\nu_1\tA\t0\t0.4\n").unwrap();
        let a = Alignments::load(&file).unwrap();
        assert!((a.tempo("u_0").unwrap() - 0.2).abs() < 1e-12);
        assert!((a.tempo("u_1").unwrap() - 0.4).abs() < 1e-12);
        assert!(matches!(a.tempo("u_9"), Err(ProsodyError::UnknownUtterance(_))));

        let d = dir.path().join("per_utt");
        std::fs::create_dir(&d).unwrap();
        std::fs::write(d.join("s_3.tsv"), "A\t0.0\t0.1\nsp\t0.1\t0.9\nB\t0.9\t1.2\n").unwrap();
        let b = Alignments::load(&d).unwrap();
        assert!((b.tempo("s_3").unwrap() - 0.2).abs() < 1e-12);

        std::fs::write(&file, "u_0\tA\tx\t1\n").unwrap();
        assert!(matches!(Alignments::load(&file), Err(ProsodyError::Parse { line: 1, .. })));
    }

    #[test]
    fn tempo_fallback_counts_vowel_groups() {
        assert_eq!(vowel_groups("beautiful day"), 4);
        assert_eq!(vowel_groups("rhythm"), 1);
        assert!((tempo_fallback(1.2, "beautiful day") - 0.3).abs() < 1e-12);
        let t = extract_tempo(None, "x", 1.2, "beautiful day").unwrap();
        assert!(t.approximate);
    }

    #[test]
    fn interpolation_fills_gaps() {
        let c = PitchContour { f0: vec![0.0, 100.0, 0.0, 0.0, 130.0, 0.0], frame_rate: 100.0 };
        assert_eq!(c.interpolated().unwrap(), vec![100.0, 100.0, 110.0, 120.0, 130.0, 130.0]);
        assert!(PitchContour { f0: vec![0.0; 3], frame_rate: 100.0 }.interpolated().is_none());
    }
}
