use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::{caption_phase_allows, code_phase_allows};
use super::loss::{chain_loss_on_tape, ChainLoss};
use super::model::{EmGPT, EmGPTConfig, ModelInput};
use super::EmgptError;
use crate::context::TrainingTarget;
use crate::nn::{Adam, AdamConfig, Grads, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_caption: f64,
    pub l_speech: f64,
    pub lr: f64,
}

/// Batch loss and gradients of `caption_weight * L_caption + L_speech`,
/// averaged over the batch. Dropout uses `rng` when given.
pub fn loss_and_grads(
    model: &EmGPT,
    batch: &[TrainingTarget],
    caption_weight: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(ChainLoss, f64, Grads), EmgptError> {
    if batch.is_empty() {
        return Err(EmgptError::Input("empty batch".into()));
    }
    let mut grads = Grads::zeros_like(&model.store);
    let (mut sum, mut objective) = (ChainLoss { caption: 0.0, speech: 0.0, total: 0.0 }, 0.0);
    let inv = 1.0 / batch.len() as f64;
    for t in batch {
        let mut tape = Tape::new(&model.store);
        let logits = model.forward(&mut tape, &ModelInput::from_target(t), rng.as_deref_mut())?;
        let (obj, parts) = chain_loss_on_tape(&mut tape, logits, t, caption_weight)?;
        objective += tape.scalar(obj) * inv;
        sum.caption += parts.caption * inv;
        sum.speech += parts.speech * inv;
        tape.backward_into(obj, inv, &mut grads);
    }
    sum.total = sum.caption + sum.speech;
    Ok((sum, objective, grads))
}

/// Exclusive owner of a model and its optimizer state during training.
pub struct Trainer {
    pub model: EmGPT,
    pub optimizer: Adam,
    pub caption_weight: f64,
    pub history: Vec<StepRecord>,
}

impl Trainer {
    pub fn new(model: EmGPT, adam: AdamConfig) -> Self {
        let optimizer = Adam::new(adam, &model.store);
        Self { model, optimizer, caption_weight: 1.0, history: Vec::new() }
    }

    pub fn step(&self) -> usize {
        self.optimizer.step
    }

    /// One gradient update on the batch. Dropout masks are drawn from a stream
    /// keyed by `(model seed, step)` so resumed runs replay identically.
    pub fn train_step(&mut self, batch: &[TrainingTarget]) -> Result<StepRecord, EmgptError> {
        let step = self.optimizer.step;
        let mut rng = ChaCha8Rng::seed_from_u64(self.model.config.seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (loss, objective, grads) = loss_and_grads(&self.model, batch, self.caption_weight, Some(&mut rng))?;
        if !objective.is_finite() || !grads.is_finite() {
            return Err(EmgptError::NonFinite {
                step,
                detail: format!("L_caption={} L_speech={} grad_norm={}", loss.caption, loss.speech, grads.global_norm()),
            });
        }
        let lr = self.optimizer.update(&mut self.model.store, &grads);
        let rec = StepRecord { step, l_caption: loss.caption, l_speech: loss.speech, lr };
        self.history.push(rec);
        Ok(rec)
    }
}

/// Fraction of masked positions whose phase-restricted argmax equals the target.
pub fn teacher_forcing_accuracy(model: &EmGPT, targets: &[TrainingTarget]) -> Result<f64, EmgptError> {
    let v = *model.vocab();
    let (mut hit, mut total) = (0usize, 0usize);
    for t in targets {
        let logits = model.logits(&ModelInput::from_target(t))?;
        for (i, &gold) in t.target.iter().enumerate() {
            let allowed: &dyn Fn(u32) -> bool = if t.caption_mask[i] {
                &|id| caption_phase_allows(&v, id)
            } else if t.speech_mask[i] {
                &|id| code_phase_allows(&v, id)
            } else {
                continue;
            };
            let row = logits.row(i);
            let best = (0..row.len() as u32)
                .filter(|&id| allowed(id))
                .fold(None, |b: Option<u32>, id| match b {
                    Some(b) if row[b as usize] >= row[id as usize] => Some(b),
                    _ => Some(id),
                })
                .expect("phase vocabulary is non-empty");
            hit += usize::from(best == gold);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

pub fn write_metrics_csv(path: &Path, records: &[StepRecord]) -> Result<(), EmgptError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "step,l_caption,l_speech,lr")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.step, r.l_caption, r.l_speech, r.lr)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: EmGPTConfig,
    pub vocab_hash: String,
    pub stage: String,
    pub step: usize,
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(ext);
    PathBuf::from(p)
}

/// Writes `<path>` (parameters), `<path>.json` (metadata) and `<path>.opt` (optimizer state).
pub fn save_checkpoint(path: &Path, model: &EmGPT, optimizer: Option<&Adam>, stage: &str) -> Result<(), EmgptError> {
    model.store.write_blob(BufWriter::new(File::create(path)?))?;
    let meta = CheckpointMeta {
        config: model.config.clone(),
        vocab_hash: model.vocab().hash(),
        stage: stage.to_string(),
        step: optimizer.map_or(0, |o| o.step),
    };
    std::fs::write(sibling(path, ".json"), serde_json::to_string_pretty(&meta)?)?;
    if let Some(opt) = optimizer {
        opt.write_state(BufWriter::new(File::create(sibling(path, ".opt"))?))?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(EmGPT, CheckpointMeta), EmgptError> {
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(sibling(path, ".json"))?)?;
    if meta.vocab_hash != meta.config.vocab.hash() {
        return Err(EmgptError::Checkpoint(format!("{}: vocabulary hash mismatch", path.display())));
    }
    let mut model = EmGPT::new(meta.config.clone())?;
    model.store.read_blob(BufReader::new(File::open(path)?))?;
    Ok((model, meta))
}

/// Restores optimizer moments saved next to a checkpoint, if present.
pub fn load_optimizer(path: &Path, config: AdamConfig, model: &EmGPT) -> Result<Option<Adam>, EmgptError> {
    let p = sibling(path, ".opt");
    if !p.exists() {
        return Ok(None);
    }
    let mut opt = Adam::new(config, &model.store);
    opt.read_state(BufReader::new(File::open(p)?))?;
    Ok(Some(opt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{SemanticCodes, SpeakerVector};
    use crate::context::{build_sequence, build_training_target, TurnTokens};
    use crate::emgpt::tests::tiny_model;

    fn batch(model: &EmGPT) -> Vec<TrainingTarget> {
        let v = *model.vocab();
        (0..2)
            .map(|k| {
                let turn = |c: bool| TurnTokens {
                    speaker: SpeakerVector(vec![0.1 * k as f64, 0.5, -0.5, 0.2]),
                    text: vec![1 + k, 2, 3],
                    codes: c.then(|| SemanticCodes::new(vec![4, k])),
                    caption: c.then(|| vec![6, 7 + k]),
                };
                let seq = build_sequence(&[turn(true)], &turn(false), &v, Some(&SemanticCodes::new(vec![k, 2, 5])), Some(&[9, 10 + k]))
                    .unwrap();
                build_training_target(&seq).unwrap()
            })
            .collect()
    }

    #[test]
    fn loss_decreases_on_a_fixed_batch() {
        let mut tr = Trainer::new(tiny_model(0.0, 5), AdamConfig { lr: 3e-3, warmup_steps: 5, ..Default::default() });
        let b = batch(&tr.model);
        let first = tr.train_step(&b).unwrap();
        let mut last = first;
        for _ in 0..49 {
            last = tr.train_step(&b).unwrap();
        }
        assert!(last.l_caption + last.l_speech < first.l_caption + first.l_speech);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut tr = Trainer::new(tiny_model(0.1, 5), AdamConfig { lr: 0.0, ..Default::default() });
        let before = tr.model.store.clone();
        let b = batch(&tr.model);
        tr.train_step(&b).unwrap();
        for id in before.ids() {
            assert_eq!(before.get(id), tr.model.store.get(id));
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut model = tiny_model(0.0, 9);
        let b = batch(&model);
        let (_, _, grads) = loss_and_grads(&model, &b, 0.7, None).unwrap();
        let n = model.store.numel();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..120 {
            let flat = (k * 7919) % n;
            let (id, (r, c)) = model.store.locate(flat);
            let orig = model.store.get(id)[[r, c]];
            model.store.get_mut(id)[[r, c]] = orig + eps;
            let plus = loss_and_grads(&model, &b, 0.7, None).unwrap().1;
            model.store.get_mut(id)[[r, c]] = orig - eps;
            let minus = loss_and_grads(&model, &b, 0.7, None).unwrap().1;
            model.store.get_mut(id)[[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.flat(flat);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let mut tr = Trainer::new(tiny_model(0.0, 2), AdamConfig::default());
        let b = batch(&tr.model);
        tr.train_step(&b).unwrap();
        save_checkpoint(&path, &tr.model, Some(&tr.optimizer), "stage1").unwrap();
        let (loaded, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.stage, "stage1");
        assert_eq!(meta.step, 1);
        let input = ModelInput::from_target(&b[0]);
        assert_eq!(loaded.logits(&input).unwrap(), tr.model.logits(&input).unwrap());
        let opt = load_optimizer(&path, AdamConfig::default(), &loaded).unwrap().unwrap();
        assert_eq!(opt.step, 1);
        write_metrics_csv(&dir.path().join("m.csv"), &tr.history).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert!(csv.starts_with("step,l_caption,l_speech,lr\n0,"));
    }
}
