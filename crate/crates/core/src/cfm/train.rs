use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::field::{BoundField, CFMConfig, ConditioningBundle, FieldNet};
use super::flow::{cfm_loss_with_draws, draw_flow, euler_integrate, standard_normal, CfmLossOutput};
use super::CfmError;
use crate::codec::{MelSpectrogram, SemanticCodes, SpeakerVector};
use crate::nn::{Adam, AdamConfig, Mat};

/// One utterance for flow-matching training.
#[derive(Debug, Clone, PartialEq)]
pub struct CfmExample {
    /// Raw log-mel, `[frames x n_mels]`.
    pub mel: Mat,
    pub codes: SemanticCodes,
    pub caption_embedding: Vec<f64>,
    pub speaker: SpeakerVector,
}

impl CfmExample {
    /// Normalized target at the upsampled code length; the mel is truncated or
    /// padded by repeating its last frame.
    pub fn target(&self, cfg: &CFMConfig) -> Result<Mat, CfmError> {
        if self.mel.nrows() == 0 || self.mel.ncols() != cfg.n_mels {
            return Err(CfmError::Shape(format!("mel {:?} with {} bins expected", self.mel.shape(), cfg.n_mels)));
        }
        let n = self.codes.len() * cfg.frames_per_code();
        let last = self.mel.nrows() - 1;
        let padded = Mat::from_shape_fn((n, cfg.n_mels), |(i, j)| self.mel[[i.min(last), j]]);
        Ok(cfg.normalize(&padded))
    }

    pub fn bundle(&self, cfg: &CFMConfig, prompt_frames: usize) -> Result<ConditioningBundle, CfmError> {
        ConditioningBundle::new(cfg, &self.codes, self.caption_embedding.clone(), self.speaker.clone(), Some(&self.mel), prompt_frames)
    }
}

/// Global mean and standard deviation of all mel entries.
pub fn fit_normalization(examples: &[CfmExample]) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for ex in examples {
        for &v in ex.mel.iter() {
            n += 1;
            sum += v;
            sq += v * v;
        }
    }
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = sum / n as f64;
    let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
    (mean, if std > 1e-8 { std } else { 1.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfmStepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0xcf3_0000 ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Loss and gradients for a batch with random prompt prefixes and flow draws.
pub fn batch_loss<R: Rng>(net: &FieldNet, batch: &[CfmExample], rng: &mut R) -> Result<CfmLossOutput, CfmError> {
    let cfg = &net.config;
    let mut conds = Vec::with_capacity(batch.len());
    let mut draws = Vec::with_capacity(batch.len());
    for ex in batch {
        let x1 = ex.target(cfg)?;
        let keep = rng.gen::<f64>() * cfg.prompt_max_frac;
        conds.push(ex.bundle(cfg, (keep * x1.nrows() as f64).floor() as usize)?);
        draws.push(draw_flow(&x1, cfg.sigma_min, rng));
    }
    let refs: Vec<&ConditioningBundle> = conds.iter().collect();
    cfm_loss_with_draws(net, &refs, &draws, cfg.loss)
}

pub struct CfmTrainer {
    pub net: FieldNet,
    pub optimizer: Adam,
    pub history: Vec<CfmStepRecord>,
}

impl CfmTrainer {
    pub fn new(net: FieldNet, adam: AdamConfig) -> Self {
        let optimizer = Adam::new(adam, &net.store);
        Self { net, optimizer, history: Vec::new() }
    }

    pub fn train_step(&mut self, batch: &[CfmExample]) -> Result<CfmStepRecord, CfmError> {
        if batch.is_empty() {
            return Err(CfmError::Config("empty batch".into()));
        }
        let step = self.optimizer.step;
        let mut rng = step_rng(self.net.config.seed, step);
        let out = batch_loss(&self.net, batch, &mut rng)?;
        if !out.grads.is_finite() {
            return Err(CfmError::NonFinite(format!("gradients at step {step}, loss {}", out.loss)));
        }
        let lr = self.optimizer.update(&mut self.net.store, &out.grads);
        self.net.trained_steps += 1;
        let rec = CfmStepRecord { step, loss: out.loss, lr };
        self.history.push(rec);
        Ok(rec)
    }
}

/// Integrates from seeded Gaussian noise under `cond`; returns the normalized state.
pub fn euler_solve(net: &FieldNet, cond: &ConditioningBundle, n_steps: usize, seed: u64) -> Result<Mat, CfmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = standard_normal(cond.n_frames(), net.config.n_mels, &mut rng);
    euler_integrate(&BoundField { net, cond }, x0, n_steps)
}

/// Generates a log-mel for `codes`. At most half of the output length is
/// taken from `prompt`; the rest is generated.
pub fn synthesize(
    net: &FieldNet,
    codes: &SemanticCodes,
    caption_embedding: Vec<f64>,
    speaker: SpeakerVector,
    prompt: Option<&MelSpectrogram>,
    seed: u64,
) -> Result<MelSpectrogram, CfmError> {
    if net.trained_steps == 0 {
        return Err(CfmError::Checkpoint("field network is untrained".into()));
    }
    let cfg = &net.config;
    let n = codes.len() * cfg.frames_per_code();
    let prompt_frames = prompt.map_or(0, |p| p.n_frames().min(n / 2));
    let cond = ConditioningBundle::new(cfg, codes, caption_embedding, speaker, prompt.map(|p| &p.frames), prompt_frames)?;
    let x = euler_solve(net, &cond, cfg.n_euler_steps, seed)?;
    Ok(MelSpectrogram { frames: cfg.denormalize(&x), frame_rate: cfg.frame_rate, sample_rate: cfg.sample_rate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfmCheckpointMeta {
    pub config: CFMConfig,
    pub trained_steps: usize,
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(ext);
    PathBuf::from(p)
}

pub fn save_cfm(path: &Path, net: &FieldNet, optimizer: Option<&Adam>) -> Result<(), CfmError> {
    net.store.write_blob(BufWriter::new(File::create(path)?))?;
    let meta = CfmCheckpointMeta { config: net.config.clone(), trained_steps: net.trained_steps };
    std::fs::write(sibling(path, ".json"), serde_json::to_string_pretty(&meta)?)?;
    if let Some(opt) = optimizer {
        opt.write_state(BufWriter::new(File::create(sibling(path, ".opt"))?))?;
    }
    Ok(())
}

pub fn load_cfm(path: &Path) -> Result<FieldNet, CfmError> {
    let text = std::fs::read_to_string(sibling(path, ".json"))
        .map_err(|e| CfmError::Checkpoint(format!("{}: {e}", sibling(path, ".json").display())))?;
    let meta: CfmCheckpointMeta = serde_json::from_str(&text)?;
    let mut net = FieldNet::new(meta.config)?;
    net.store
        .read_blob(BufReader::new(File::open(path)?))
        .map_err(|e| CfmError::Checkpoint(format!("{}: {e}", path.display())))?;
    net.trained_steps = meta.trained_steps;
    Ok(net)
}

pub fn load_cfm_optimizer(path: &Path, config: AdamConfig, net: &FieldNet) -> Result<Option<Adam>, CfmError> {
    let p = sibling(path, ".opt");
    if !p.exists() {
        return Ok(None);
    }
    let mut opt = Adam::new(config, &net.store);
    opt.read_state(BufReader::new(File::open(p)?))?;
    Ok(Some(opt))
}
