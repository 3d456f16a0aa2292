use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flow::{ConditionalField, LossNorm, VectorField};
use super::CfmError;
use crate::codec::{SemanticCodes, SpeakerVector, CODE_RATE, N_MELS, SPEAKER_DIM};
use crate::embed::{HashEmbedder, SentenceEmbedder};
use crate::nn::{sinusoidal_embedding, Mat, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CFMConfig {
    pub n_mels: usize,
    /// Hidden width of the field network.
    pub cond_width: usize,
    pub n_blocks: usize,
    pub code_vocab_size: usize,
    pub code_dim: usize,
    pub caption_dim: usize,
    pub speaker_dim: usize,
    pub time_dim: usize,
    pub frame_rate: f64,
    pub sample_rate: u32,
    pub sigma_min: f64,
    pub n_euler_steps: usize,
    pub loss: LossNorm,
    /// Upper bound on the fraction of frames kept as prompt during training.
    pub prompt_max_frac: f64,
    /// Mel values are modelled as `(mel - norm_mean) / norm_std`.
    pub norm_mean: f64,
    pub norm_std: f64,
    pub seed: u64,
}

impl CFMConfig {
    pub fn new(code_vocab_size: usize) -> Self {
        Self {
            n_mels: N_MELS,
            cond_width: 512,
            n_blocks: 2,
            code_vocab_size,
            code_dim: 32,
            caption_dim: HashEmbedder::default().dim,
            speaker_dim: SPEAKER_DIM,
            time_dim: 32,
            frame_rate: 100.0,
            sample_rate: 22050,
            sigma_min: 1e-4,
            n_euler_steps: 10,
            loss: LossNorm::SquaredL2,
            prompt_max_frac: 0.5,
            norm_mean: 0.0,
            norm_std: 1.0,
            seed: 0,
        }
    }

    pub fn frames_per_code(&self) -> usize {
        (self.frame_rate / CODE_RATE).round() as usize
    }

    pub fn validate(&self) -> Result<(), CfmError> {
        if !(0.0..1.0).contains(&self.sigma_min) {
            return Err(CfmError::Config(format!("sigma_min {} outside [0, 1)", self.sigma_min)));
        }
        if self.n_euler_steps == 0 {
            return Err(CfmError::Config("n_euler_steps must be at least 1".into()));
        }
        if self.n_mels == 0 || self.cond_width == 0 || self.code_vocab_size == 0 {
            return Err(CfmError::Config("n_mels, cond_width and code_vocab_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.prompt_max_frac) {
            return Err(CfmError::Config(format!("prompt_max_frac {} outside [0, 1]", self.prompt_max_frac)));
        }
        if !(self.norm_std > 0.0) || !self.norm_mean.is_finite() {
            return Err(CfmError::Config("normalization std must be positive".into()));
        }
        let fpc = self.frame_rate / CODE_RATE;
        if fpc < 1.0 || fpc.fract() != 0.0 {
            return Err(CfmError::Config(format!("frame rate {} is not a multiple of the code rate", self.frame_rate)));
        }
        Ok(())
    }

    pub fn normalize(&self, mel: &Mat) -> Mat {
        mel.mapv(|v| (v - self.norm_mean) / self.norm_std)
    }

    pub fn denormalize(&self, x: &Mat) -> Mat {
        x.mapv(|v| v * self.norm_std + self.norm_mean)
    }

    fn static_width(&self) -> usize {
        self.caption_dim + self.speaker_dim + self.n_mels + 1 + self.frames_per_code() + self.time_dim
    }
}

/// Per-item conditioning, all at the mel frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningBundle {
    pub speaker: SpeakerVector,
    pub caption_embedding: Vec<f64>,
    /// Code id per output frame.
    pub frame_codes: Vec<u32>,
    /// Normalized prompt mel with masked frames zeroed, `[frames x n_mels]`.
    pub prompt_mel_masked: Mat,
    /// `true` where the frame is masked (not part of the prompt).
    pub mask: Vec<bool>,
}

impl ConditioningBundle {
    /// Upsamples codes to the frame rate and keeps the first `prompt_frames`
    /// rows of the raw log-mel `prompt` (if any) as the visible prompt.
    pub fn new(
        cfg: &CFMConfig,
        codes: &SemanticCodes,
        caption_embedding: Vec<f64>,
        speaker: SpeakerVector,
        prompt: Option<&Mat>,
        prompt_frames: usize,
    ) -> Result<Self, CfmError> {
        if codes.codes.is_empty() {
            return Err(CfmError::Config("empty code sequence".into()));
        }
        if let Some(&bad) = codes.codes.iter().find(|&&c| c as usize >= cfg.code_vocab_size) {
            return Err(CfmError::Config(format!("code {bad} outside codebook of {}", cfg.code_vocab_size)));
        }
        if caption_embedding.len() != cfg.caption_dim || speaker.dim() != cfg.speaker_dim {
            return Err(CfmError::Shape(format!(
                "caption dim {} / speaker dim {}, expected {} / {}",
                caption_embedding.len(),
                speaker.dim(),
                cfg.caption_dim,
                cfg.speaker_dim
            )));
        }
        let fpc = cfg.frames_per_code();
        let frame_codes: Vec<u32> = codes.codes.iter().flat_map(|&c| std::iter::repeat(c).take(fpc)).collect();
        let n = frame_codes.len();
        let mut prompt_mel_masked = Mat::zeros((n, cfg.n_mels));
        let mut mask = vec![true; n];
        if let Some(p) = prompt {
            if p.ncols() != cfg.n_mels {
                return Err(CfmError::Shape(format!("prompt has {} bins, expected {}", p.ncols(), cfg.n_mels)));
            }
            for i in 0..prompt_frames.min(n).min(p.nrows()) {
                prompt_mel_masked.row_mut(i).assign(&p.row(i).mapv(|v| (v - cfg.norm_mean) / cfg.norm_std));
                mask[i] = false;
            }
        }
        Ok(Self { speaker, caption_embedding, frame_codes, prompt_mel_masked, mask })
    }

    pub fn n_frames(&self) -> usize {
        self.frame_codes.len()
    }
}

/// Embeds a caption with the default bag-of-subwords embedder.
pub fn embed_caption(caption: &str) -> Vec<f64> {
    HashEmbedder::default().embed(caption)
}

struct Block {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Residual MLP applied to each frame independently. Per-frame input is the
/// noisy mel, embeddings of the previous, current and next code, the caption
/// embedding, the speaker vector, the masked prompt frame and its flag, the
/// frame's phase within its code, and a sinusoidal time embedding.
pub struct FieldNet {
    pub config: CFMConfig,
    pub store: ParamStore,
    pub trained_steps: usize,
    code_emb: ParamId,
    w_in: ParamId,
    b_in: ParamId,
    blocks: Vec<Block>,
    w_out: ParamId,
    b_out: ParamId,
}

impl FieldNet {
    pub fn new(config: CFMConfig) -> Result<Self, CfmError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut s = ParamStore::default();
        let h = config.cond_width;
        let in_dim = config.n_mels + 3 * config.code_dim + config.static_width();
        let code_emb = s.add_normal("code_emb", (config.code_vocab_size, config.code_dim), 1.0, &mut rng);
        let w_in = s.add_normal("w_in", (in_dim, h), 1.0 / (in_dim as f64).sqrt(), &mut rng);
        let b_in = s.add_zeros("b_in", (1, h));
        let blocks = (0..config.n_blocks)
            .map(|b| Block {
                w1: s.add_normal(&format!("block{b}.w1"), (h, h), 1.0 / (h as f64).sqrt(), &mut rng),
                b1: s.add_zeros(&format!("block{b}.b1"), (1, h)),
                w2: s.add_normal(&format!("block{b}.w2"), (h, h), 0.1 / (h as f64).sqrt(), &mut rng),
                b2: s.add_zeros(&format!("block{b}.b2"), (1, h)),
            })
            .collect();
        let w_out = s.add_normal("w_out", (h, config.n_mels), 0.1 / (h as f64).sqrt(), &mut rng);
        let b_out = s.add_zeros("b_out", (1, config.n_mels));
        Ok(Self { config, store: s, trained_steps: 0, code_emb, w_in, b_in, blocks, w_out, b_out })
    }

    fn static_features(&self, cond: &ConditioningBundle, t: f64) -> Mat {
        let c = &self.config;
        let n = cond.n_frames();
        let fpc = c.frames_per_code();
        let temb = sinusoidal_embedding(t, c.time_dim, 1000.0);
        let mut m = Mat::zeros((n, c.static_width()));
        for i in 0..n {
            let mut row = m.row_mut(i);
            let mut k = 0;
            for &v in &cond.caption_embedding {
                row[k] = v;
                k += 1;
            }
            for &v in &cond.speaker.0 {
                row[k] = v;
                k += 1;
            }
            for &v in cond.prompt_mel_masked.row(i) {
                row[k] = v;
                k += 1;
            }
            row[k] = if cond.mask[i] { 1.0 } else { 0.0 };
            k += 1;
            row[k + i % fpc] = 1.0;
            k += fpc;
            for &v in &temb {
                row[k] = v;
                k += 1;
            }
        }
        m
    }
}

impl ConditionalField for FieldNet {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn predict(&self, tape: &mut Tape, x_t: &Mat, t: f64, cond: &ConditioningBundle) -> Result<Var, CfmError> {
        let n = cond.n_frames();
        if x_t.nrows() != n || x_t.ncols() != self.config.n_mels {
            return Err(CfmError::Shape(format!("state {:?} for {n} conditioned frames", x_t.shape())));
        }
        if cond.mask.len() != n || cond.prompt_mel_masked.nrows() != n {
            return Err(CfmError::Shape("conditioning lengths disagree".into()));
        }
        let codes: Vec<usize> = cond.frame_codes.iter().map(|&c| c as usize).collect();
        if codes.iter().any(|&c| c >= self.config.code_vocab_size) {
            return Err(CfmError::Config("frame code outside codebook".into()));
        }
        let fpc = self.config.frames_per_code();
        let prev: Vec<usize> = (0..n).map(|i| codes[i.saturating_sub(fpc)]).collect();
        let next: Vec<usize> = (0..n).map(|i| codes[(i + fpc).min(n - 1)]).collect();
        let table = tape.param(self.code_emb);
        let e_prev = tape.gather(table, prev);
        let e_cur = tape.gather(table, codes);
        let e_next = tape.gather(table, next);
        let x = tape.constant(x_t.clone());
        let stat = tape.constant(self.static_features(cond, t));
        let input = tape.concat_cols(&[x, e_prev, e_cur, e_next, stat]);
        let (w_in, b_in) = (tape.param(self.w_in), tape.param(self.b_in));
        let h = tape.matmul(input, w_in);
        let mut h = tape.add_row(h, b_in);
        for b in &self.blocks {
            let z = tape.layer_norm(h);
            let (w1, b1, w2, b2) = (tape.param(b.w1), tape.param(b.b1), tape.param(b.w2), tape.param(b.b2));
            let z = tape.matmul(z, w1);
            let z = tape.add_row(z, b1);
            let z = tape.silu(z);
            let z = tape.matmul(z, w2);
            let z = tape.add_row(z, b2);
            h = tape.add(h, z);
        }
        let z = tape.layer_norm(h);
        let (w_out, b_out) = (tape.param(self.w_out), tape.param(self.b_out));
        let out = tape.matmul(z, w_out);
        Ok(tape.add_row(out, b_out))
    }
}

/// A field network with its conditioning fixed, for ODE integration.
pub struct BoundField<'a> {
    pub net: &'a FieldNet,
    pub cond: &'a ConditioningBundle,
}

impl VectorField for BoundField<'_> {
    fn velocity(&self, x: &Mat, t: f64) -> Result<Mat, CfmError> {
        let mut tape = Tape::new(&self.net.store);
        let v = self.net.predict(&mut tape, x, t, self.cond)?;
        Ok(tape.value(v).clone())
    }
}
