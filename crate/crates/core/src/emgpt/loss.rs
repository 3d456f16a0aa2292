use serde::{Deserialize, Serialize};

use super::EmgptError;
use crate::context::TrainingTarget;
use crate::nn::{Mat, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainLoss {
    pub caption: f64,
    pub speech: f64,
    pub total: f64,
}

fn counts(target: &TrainingTarget) -> Result<(usize, usize), EmgptError> {
    if target.caption_mask.len() != target.target.len() || target.speech_mask.len() != target.target.len() {
        return Err(EmgptError::Input("mask length differs from target length".into()));
    }
    if target.caption_mask.iter().zip(&target.speech_mask).any(|(a, b)| *a && *b) {
        return Err(EmgptError::Input("caption and speech masks overlap".into()));
    }
    let (c, s) = (target.caption_count(), target.speech_count());
    if c == 0 && s == 0 {
        return Err(EmgptError::EmptyMasks);
    }
    Ok((c, s))
}

fn log_softmax_at(row: ndarray::ArrayView1<f64>, t: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    row[t] - max - z.ln()
}

/// Mean cross-entropy over the caption positions and over the speech
/// positions; `total` is their sum. An empty mask contributes zero.
pub fn chain_loss(logits: &Mat, target: &TrainingTarget) -> Result<ChainLoss, EmgptError> {
    if logits.nrows() != target.target.len() {
        return Err(EmgptError::Input(format!("{} logit rows for {} targets", logits.nrows(), target.target.len())));
    }
    let (nc, ns) = counts(target)?;
    let (mut lc, mut ls) = (0.0, 0.0);
    for (i, &t) in target.target.iter().enumerate() {
        if target.caption_mask[i] {
            lc -= log_softmax_at(logits.row(i), t as usize);
        } else if target.speech_mask[i] {
            ls -= log_softmax_at(logits.row(i), t as usize);
        }
    }
    let caption = if nc > 0 { lc / nc as f64 } else { 0.0 };
    let speech = if ns > 0 { ls / ns as f64 } else { 0.0 };
    Ok(ChainLoss { caption, speech, total: caption + speech })
}

/// Differentiable `caption_weight * L_caption + L_speech`, plus the two
/// unweighted components.
pub(crate) fn chain_loss_on_tape(
    tape: &mut Tape,
    logits: Var,
    target: &TrainingTarget,
    caption_weight: f64,
) -> Result<(Var, ChainLoss), EmgptError> {
    let (nc, ns) = counts(target)?;
    let targets: Vec<usize> = target.target.iter().map(|&t| t as usize).collect();
    let wc: Vec<f64> = target.caption_mask.iter().map(|&m| if m { 1.0 / nc as f64 } else { 0.0 }).collect();
    let ws: Vec<f64> = target.speech_mask.iter().map(|&m| if m { 1.0 / ns as f64 } else { 0.0 }).collect();
    let lc = tape.cross_entropy(logits, targets.clone(), wc);
    let ls = tape.cross_entropy(logits, targets, ws);
    let parts = ChainLoss { caption: tape.scalar(lc), speech: tape.scalar(ls), total: tape.scalar(lc) + tape.scalar(ls) };
    let lc = tape.scale(lc, caption_weight);
    Ok((tape.add(lc, ls), parts))
}

/// Summed log-probability of the target tokens at caption and speech positions.
pub fn target_log_likelihood(logits: &Mat, target: &TrainingTarget) -> f64 {
    target
        .target
        .iter()
        .enumerate()
        .filter(|(i, _)| target.caption_mask[*i] || target.speech_mask[*i])
        .map(|(i, &t)| log_softmax_at(logits.row(i), t as usize))
        .sum()
}
