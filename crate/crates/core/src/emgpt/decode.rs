use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{EmGPT, ModelInput};
use super::EmgptError;
use crate::codec::SemanticCodes;
use crate::context::{TokenSequence, VocabSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub top_k: usize,
    pub win_size: usize,
    pub tau_r: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { top_k: 25, win_size: 10, tau_r: 0.1, temperature: 1.0, seed: 0 }
    }
}

impl SamplingConfig {
    pub fn greedy() -> Self {
        Self { top_k: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EmgptError> {
        if self.top_k == 0 || self.win_size == 0 {
            return Err(EmgptError::Config("top_k and win_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_r) {
            return Err(EmgptError::Config(format!("tau_r {} outside [0, 1]", self.tau_r)));
        }
        if !(self.temperature > 0.0) {
            return Err(EmgptError::Config(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Terminator,
    MaxLength,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub caption_ids: Vec<u32>,
    pub code_ids: SemanticCodes,
    pub caption_stop: StopReason,
    pub code_stop: StopReason,
}

/// Draws a token from the top-k of `logits`; entries at `-inf` are excluded.
/// If the draw already occurs more than `tau_r * win_size` times in the last
/// `win_size` entries of `recent`, one uniform redraw is made from the other
/// top-k candidates. `top_k` is clamped to the number of allowed entries.
pub fn sample_token<R: Rng>(logits: &[f64], recent: &[u32], cfg: &SamplingConfig, rng: &mut R) -> u32 {
    let mut order: Vec<usize> = (0..logits.len()).filter(|&i| logits[i] > f64::NEG_INFINITY).collect();
    assert!(!order.is_empty(), "sample_token: no allowed tokens");
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
    order.truncate(cfg.top_k.max(1));
    let drawn = if order.len() == 1 {
        order[0]
    } else {
        let max = logits[order[0]];
        let weights: Vec<f64> = order.iter().map(|&i| ((logits[i] - max) / cfg.temperature).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = order[order.len() - 1];
        for (&i, w) in order.iter().zip(&weights) {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        pick
    };
    let window = &recent[recent.len().saturating_sub(cfg.win_size)..];
    let count = window.iter().filter(|&&t| t as usize == drawn).count();
    if count as f64 > cfg.tau_r * cfg.win_size as f64 {
        let others: Vec<usize> = order.iter().copied().filter(|&i| i != drawn).collect();
        if let Some(&alt) = others.choose(rng) {
            return alt as u32;
        }
    }
    drawn as u32
}

fn masked(logits: &[f64], allowed: impl Fn(u32) -> bool) -> Vec<f64> {
    logits.iter().enumerate().map(|(i, &v)| if allowed(i as u32) { v } else { f64::NEG_INFINITY }).collect()
}

pub fn caption_phase_allows(vocab: &VocabSpec, id: u32) -> bool {
    id < vocab.bpe_vocab_size || id == vocab.spe
}

pub fn code_phase_allows(vocab: &VocabSpec, id: u32) -> bool {
    vocab.code_range().contains(&id) || id == vocab.end_of_codes
}

fn run_phase<R: Rng>(
    model: &EmGPT,
    prompt: &TokenSequence,
    cfg: &SamplingConfig,
    max_len: usize,
    terminator: u32,
    allowed: impl Fn(u32) -> bool,
    rng: &mut R,
) -> Result<(Vec<u32>, StopReason), EmgptError> {
    cfg.validate()?;
    let slots = prompt.layout.speaker_slots();
    let mut ids = prompt.ids.clone();
    let mut out = Vec::new();
    while out.len() < max_len {
        let input = ModelInput { ids: &ids, speaker_slots: &slots, speakers: &prompt.speakers };
        let logits = masked(&model.next_logits(&input)?, &allowed);
        let tok = sample_token(&logits, &out, cfg, rng);
        if tok == terminator {
            return Ok((out, StopReason::Terminator));
        }
        out.push(tok);
        ids.push(tok);
    }
    Ok((out, StopReason::MaxLength))
}

/// Samples caption ids after a prompt ending at the target `SPS`, stopping at
/// `SPE` (excluded) or `max_len`.
pub fn generate_caption<R: Rng>(
    model: &EmGPT,
    prompt: &TokenSequence,
    cfg: &SamplingConfig,
    max_len: usize,
    rng: &mut R,
) -> Result<(Vec<u32>, StopReason), EmgptError> {
    let v = *model.vocab();
    if prompt.ids.last() != Some(&v.sps) || prompt.layout.target.spe.is_some() {
        return Err(EmgptError::Input("caption prompt must end at the target SPS".into()));
    }
    run_phase(model, prompt, cfg, max_len, v.spe, |id| caption_phase_allows(&v, id), rng)
}

/// Samples speech codes after a prompt ending with the target caption's `SPE`.
pub fn generate_codes<R: Rng>(
    model: &EmGPT,
    prompt: &TokenSequence,
    cfg: &SamplingConfig,
    max_len: usize,
    rng: &mut R,
) -> Result<(SemanticCodes, StopReason), EmgptError> {
    let v = *model.vocab();
    if prompt.ids.last() != Some(&v.spe) || prompt.layout.target.spe != Some(prompt.ids.len() - 1) {
        return Err(EmgptError::Input("code prompt must end at the target SPE".into()));
    }
    let (ids, stop) = run_phase(model, prompt, cfg, max_len, v.end_of_codes, |id| code_phase_allows(&v, id), rng)?;
    Ok((SemanticCodes::new(ids.into_iter().map(|id| id - v.code_offset).collect()), stop))
}

/// Caption phase then code phase from a prompt ending at the target `SPS`.
/// With `skip_caption` the caption phase is bypassed and an empty caption is
/// framed directly.
pub fn generate_chain(
    model: &EmGPT,
    prompt: &TokenSequence,
    cfg: &SamplingConfig,
    caption_max: usize,
    code_max: usize,
    skip_caption: bool,
) -> Result<ChainOutput, EmgptError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (caption_ids, caption_stop) = if skip_caption {
        (Vec::new(), StopReason::Skipped)
    } else {
        generate_caption(model, prompt, cfg, caption_max, &mut rng)?
    };
    let with_caption = prompt.with_caption(&caption_ids, model.vocab()).map_err(|e| EmgptError::Input(e.to_string()))?;
    let (code_ids, code_stop) = generate_codes(model, &with_caption, cfg, code_max, &mut rng)?;
    Ok(ChainOutput { caption_ids, code_ids, caption_stop, code_stop })
}
