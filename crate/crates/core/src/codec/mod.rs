//! Acoustic front-end: log-mel spectrograms, k-means semantic codes at 25 Hz,
//! and statistics-pooling speaker vectors.

mod mel;
mod speaker;
mod vq;

pub use mel::{compute_mel, mel_center_frequencies, mel_filterbank, power_spectrogram, MelConfig, MelSpectrogram, N_MELS};
pub use speaker::{cosine, speaker_embedding, SpeakerEncoder, SpeakerVector, StatsPoolingEncoder, SPEAKER_DIM};
pub use vq::{
    decode_centroids, downsample, encode_semantic, frames_per_code, kmeans, train_codebook, KMeansReport, SemanticCodes,
    VQCodebook, CODE_RATE,
};

use std::path::Path;

use ndarray::Array2;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Maps a mel spectrogram to discrete codes. Pretrained tokenizers plug in here.
pub trait SemanticTokenizer {
    fn encode(&self, mel: &MelSpectrogram) -> Result<SemanticCodes, CodecError>;
    fn vocab_size(&self) -> usize;
}

impl SemanticTokenizer for VQCodebook {
    fn encode(&self, mel: &MelSpectrogram) -> Result<SemanticCodes, CodecError> {
        encode_semantic(mel, self)
    }

    fn vocab_size(&self) -> usize {
        self.k()
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct MelSidecar {
    frames: usize,
    n_mels: usize,
    frame_rate: f64,
    sample_rate: u32,
}

/// Writes a mel matrix as little-endian float32 with a JSON sidecar at `<path>.json`.
pub fn save_mel(path: &Path, mel: &MelSpectrogram) -> Result<(), CodecError> {
    let mut bytes = Vec::with_capacity(mel.frames.len() * 4);
    for v in mel.frames.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    let side = MelSidecar { frames: mel.n_frames(), n_mels: mel.n_mels(), frame_rate: mel.frame_rate, sample_rate: mel.sample_rate };
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    std::fs::write(std::path::PathBuf::from(p), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn load_mel(path: &Path) -> Result<MelSpectrogram, CodecError> {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    let side: MelSidecar = serde_json::from_str(&std::fs::read_to_string(std::path::PathBuf::from(p))?)?;
    let bytes = std::fs::read(path)?;
    if bytes.len() != side.frames * side.n_mels * 4 {
        return Err(CodecError::Invalid(format!("{}: size does not match sidecar", path.display())));
    }
    let vals = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok(MelSpectrogram {
        frames: Array2::from_shape_vec((side.frames, side.n_mels), vals).expect("size checked"),
        frame_rate: side.frame_rate,
        sample_rate: side.sample_rate,
    })
}
