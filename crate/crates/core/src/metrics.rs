//! Objective evaluation: pitch-contour DTW, caption diversity and similarity,
//! label accuracy and a speaker-embedding similarity proxy.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::codec::{speaker_embedding, MelConfig};
use crate::embed::SentenceEmbedder;
use crate::prosody::{pitch_contour, PitchConfig, PitchContour};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("empty contour")]
    EmptyContour,
    #[error("fully unvoiced contour")]
    Unvoiced,
    #[error("no usable pairs")]
    NoPairs,
    #[error("no {0}-grams in input")]
    NoNgrams(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Codec(#[from] crate::codec::CodecError),
}

/// Path-length-normalized DTW with |a_i - b_j| cost and steps down, right, diagonal.
/// Among minimal-cost paths, the shortest is used.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptyContour);
    }
    let (n, m) = (a.len(), b.len());
    let mut d = vec![(f64::INFINITY, 0usize); (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    d[0] = (0.0, 0);
    for i in 1..=n {
        for j in 1..=m {
            let best = [d[at(i - 1, j)], d[at(i, j - 1)], d[at(i - 1, j - 1)]]
                .into_iter()
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
                .expect("three candidates");
            d[at(i, j)] = (best.0 + (a[i - 1] - b[j - 1]).abs(), best.1 + 1);
        }
    }
    let (cost, len) = d[at(n, m)];
    Ok(cost / len as f64)
}

/// Contour with unvoiced frames interpolated between voiced neighbours.
pub fn voiced_contour(wave: &Waveform) -> Result<Vec<f64>, MetricError> {
    let c: PitchContour = pitch_contour(wave, &PitchConfig::default());
    if c.f0.is_empty() {
        return Err(MetricError::EmptyContour);
    }
    c.interpolated().ok_or(MetricError::Unvoiced)
}

/// Mean DTW distance between pitch contours; failing pairs are skipped.
pub fn ddtw(pairs: &[(Waveform, Waveform)]) -> Result<(f64, Vec<Option<f64>>), MetricError> {
    let per: Vec<Option<f64>> = pairs
        .iter()
        .enumerate()
        .map(|(i, (r, s))| {
            let d = voiced_contour(r).and_then(|a| voiced_contour(s).and_then(|b| dtw_distance(&a, &b)));
            d.map_err(|e| log::warn!("pair {i} skipped: {e}")).ok()
        })
        .collect();
    let ok: Vec<f64> = per.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(MetricError::NoPairs);
    }
    Ok((ok.iter().sum::<f64>() / ok.len() as f64, per))
}

/// Unique over total n-grams, pooled over lowercased whitespace tokens.
pub fn distinct_n(captions: &[String], n: usize) -> Result<f64, MetricError> {
    if n == 0 {
        return Err(MetricError::NoNgrams(n));
    }
    let mut total = 0usize;
    let mut unique = HashSet::new();
    for c in captions {
        let toks: Vec<String> = c.split_whitespace().map(str::to_lowercase).collect();
        for w in toks.windows(n) {
            total += 1;
            unique.insert(w.to_vec());
        }
    }
    if total == 0 {
        return Err(MetricError::NoNgrams(n));
    }
    Ok(unique.len() as f64 / total as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn caption_similarity(candidates: &[String], references: &[String], embedder: &dyn SentenceEmbedder) -> Result<f64, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Err(MetricError::Empty);
    }
    let s: f64 = candidates.iter().zip(references).map(|(c, r)| cosine(&embedder.embed(c), &embedder.embed(r))).sum();
    Ok(s / candidates.len() as f64)
}

pub fn accuracy<T: PartialEq>(judged: &[T], gold: &[T]) -> Result<f64, MetricError> {
    if judged.len() != gold.len() {
        return Err(MetricError::LengthMismatch(judged.len(), gold.len()));
    }
    if judged.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(judged.iter().zip(gold).filter(|(a, b)| a == b).count() as f64 / judged.len() as f64)
}

/// Mean speaker-embedding cosine over pairs. A proxy, not a trained verifier.
pub fn speaker_similarity_proxy(pairs: &[(Waveform, Waveform)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut s = 0.0;
    for (r, y) in pairs {
        let mel = MelConfig::for_sample_rate(r.sample_rate);
        s += speaker_embedding(r, &mel)?.cosine(&speaker_embedding(y, &mel)?);
    }
    Ok(s / pairs.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ddtw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dis1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dis2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim_proxy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    pub pairs: usize,
    pub skipped_pairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}
