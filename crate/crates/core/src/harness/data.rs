use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::RunConfig;
use super::{derive_seed, HarnessError};
use crate::audio::read_wav;
use crate::bpe::{BpeModel, BpeTrainer};
use crate::codec::{compute_mel, encode_semantic, speaker_embedding, train_codebook, MelConfig, MelSpectrogram, SemanticCodes, SpeakerVector, VQCodebook};
use crate::context::{build_sequence, build_training_target, TokenSequence, TrainingTarget, TurnTokens, VocabSpec};
use crate::corpus::{DialogueSession, Role};

pub const BPE_FILE: &str = "bpe.json";
pub const CODEBOOK_FILE: &str = "codebook.bin";

/// Tokenizer and codebook shared by every stage of a run.
pub struct Artifacts {
    pub bpe: BpeModel,
    pub codebook: VQCodebook,
    pub mel: MelConfig,
}

impl Artifacts {
    pub fn vocab(&self) -> VocabSpec {
        VocabSpec::new(self.bpe.vocab_size() as u32, self.codebook.k() as u32)
    }
}

fn data_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(e.to_string())
}

fn utterance_mel(path: &Path, mel: Option<&MelConfig>) -> Result<(MelSpectrogram, MelConfig, crate::audio::Waveform), HarnessError> {
    let wave = read_wav(path).map_err(data_err)?;
    let cfg = mel.copied().unwrap_or_else(|| MelConfig::for_sample_rate(wave.sample_rate));
    if cfg.sample_rate != wave.sample_rate {
        return Err(HarnessError::Data(format!("{}: sample rate {} differs from {}", path.display(), wave.sample_rate, cfg.sample_rate)));
    }
    Ok((compute_mel(&wave, &cfg).map_err(data_err)?, cfg, wave))
}

fn audio_path<'a>(s: &'a DialogueSession, turn: usize) -> Result<&'a Path, HarnessError> {
    s.turns[turn].audio_path.as_deref().ok_or_else(|| HarnessError::Data(format!("{}: no audio", s.utterance_id(turn))))
}

/// Loads the run's tokenizer and codebook from `workdir`, fitting them on
/// `train` the first time.
pub fn load_or_fit_artifacts(workdir: &Path, train: &[DialogueSession], cfg: &RunConfig) -> Result<Artifacts, HarnessError> {
    let (bpe_path, cb_path) = (workdir.join(BPE_FILE), workdir.join(CODEBOOK_FILE));
    if bpe_path.exists() && cb_path.exists() {
        let bpe = BpeModel::load(&bpe_path).map_err(data_err)?;
        let (codebook, mel) = VQCodebook::load(&cb_path).map_err(data_err)?;
        let mel = mel.ok_or_else(|| HarnessError::Data(format!("{} lacks a mel config", cb_path.display())))?;
        return Ok(Artifacts { bpe, codebook, mel });
    }
    let mut texts = Vec::new();
    for u in train.iter().flat_map(|s| &s.turns) {
        texts.push(u.text.clone());
        if let Some(c) = &u.caption {
            texts.push(c.clone());
        }
    }
    if texts.is_empty() {
        return Err(HarnessError::Data("training split is empty".into()));
    }
    let bpe = BpeTrainer { printable_ascii: true }.train(&texts, cfg.data.bpe_vocab).map_err(data_err)?;
    let mut mels = Vec::new();
    let mut mel_cfg = None;
    for s in train {
        for k in 0..s.turns.len() {
            let (m, c, _) = utterance_mel(audio_path(s, k)?, mel_cfg.as_ref())?;
            mel_cfg = Some(c);
            mels.push(m);
        }
    }
    let mel = mel_cfg.ok_or_else(|| HarnessError::Data("no audio in training split".into()))?;
    let (codebook, report) = train_codebook(&mels, cfg.data.code_vocab, cfg.data.codebook_seed).map_err(data_err)?;
    log::info!("codebook: k={} {report:?}", codebook.k());
    std::fs::create_dir_all(workdir).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    bpe.save(&bpe_path).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    codebook.save(&cb_path, Some(&mel)).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    Ok(Artifacts { bpe, codebook, mel })
}

#[derive(Debug, Clone)]
pub struct UtteranceFeatures {
    pub text: Vec<u32>,
    pub caption: Option<Vec<u32>>,
    pub codes: SemanticCodes,
    pub mel: MelSpectrogram,
}

/// Encoded text, captions, codes and mels for every utterance, plus one mean
/// speaker vector per speaker id.
pub struct Features {
    pub utterances: BTreeMap<String, UtteranceFeatures>,
    pub speakers: BTreeMap<String, SpeakerVector>,
}

impl Features {
    pub fn get(&self, s: &DialogueSession, turn: usize) -> Result<&UtteranceFeatures, HarnessError> {
        let id = s.utterance_id(turn);
        self.utterances.get(&id).ok_or_else(|| HarnessError::Data(format!("{id}: not featurized")))
    }

    pub fn speaker(&self, id: &str) -> Result<&SpeakerVector, HarnessError> {
        self.speakers.get(id).ok_or_else(|| HarnessError::Data(format!("speaker {id}: no audio")))
    }
}

pub fn featurize(sessions: &[DialogueSession], art: &Artifacts) -> Result<Features, HarnessError> {
    let mut utterances = BTreeMap::new();
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for s in sessions {
        for (k, u) in s.turns.iter().enumerate() {
            let (mel, _, wave) = utterance_mel(audio_path(s, k)?, Some(&art.mel))?;
            let codes = encode_semantic(&mel, &art.codebook).map_err(data_err)?;
            if codes.is_empty() {
                return Err(HarnessError::Data(format!("{}: too short for one code", s.utterance_id(k))));
            }
            let spk = speaker_embedding(&wave, &art.mel).map_err(|e| HarnessError::Data(format!("{}: {e}", s.utterance_id(k))))?;
            let e = sums.entry(u.speaker_id.clone()).or_insert_with(|| (vec![0.0; spk.dim()], 0));
            e.0.iter_mut().zip(&spk.0).for_each(|(a, b)| *a += b);
            e.1 += 1;
            let text = art.bpe.encode(&u.text).map_err(data_err)?;
            let caption = u.caption.as_deref().map(|c| art.bpe.encode(c)).transpose().map_err(data_err)?;
            utterances.insert(s.utterance_id(k), UtteranceFeatures { text, caption, codes, mel });
        }
    }
    let speakers = sums.into_iter().map(|(k, (v, _))| (k, SpeakerVector::from_raw(v))).collect();
    Ok(Features { utterances, speakers })
}

/// Where a training example came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExampleMeta {
    pub session_id: String,
    pub target_index: usize,
    pub history_turns: usize,
}

fn caption_of<'a>(f: &'a UtteranceFeatures, id: &str, cfg: &RunConfig) -> Result<&'a [u32], HarnessError> {
    if cfg.train.no_captions {
        return Ok(&[]);
    }
    f.caption.as_deref().ok_or_else(|| HarnessError::Data(format!("{id}: no caption; run annotate first")))
}

/// Turn tokens for a context turn (with codes and caption).
pub fn history_turn(s: &DialogueSession, k: usize, feats: &Features, cfg: &RunConfig) -> Result<TurnTokens, HarnessError> {
    let f = feats.get(s, k)?;
    Ok(TurnTokens {
        speaker: feats.speaker(&s.turns[k].speaker_id)?.clone(),
        text: f.text.clone(),
        codes: Some(f.codes.clone()),
        caption: Some(caption_of(f, &s.utterance_id(k), cfg)?.to_vec()),
    })
}

/// Turn tokens for the turn being predicted.
pub fn target_turn(s: &DialogueSession, k: usize, feats: &Features) -> Result<TurnTokens, HarnessError> {
    let f = feats.get(s, k)?;
    Ok(TurnTokens { speaker: feats.speaker(&s.turns[k].speaker_id)?.clone(), text: f.text.clone(), codes: None, caption: None })
}

/// Full training sequence for turn `k` with the `n` preceding turns as context.
pub fn training_sequence(
    s: &DialogueSession,
    k: usize,
    n: usize,
    feats: &Features,
    vocab: &VocabSpec,
    cfg: &RunConfig,
) -> Result<TokenSequence, HarnessError> {
    let history = (k.saturating_sub(n)..k).map(|j| history_turn(s, j, feats, cfg)).collect::<Result<Vec<_>, _>>()?;
    let f = feats.get(s, k)?;
    let caption = caption_of(f, &s.utterance_id(k), cfg)?;
    build_sequence(&history, &target_turn(s, k, feats)?, vocab, Some(&f.codes), Some(caption)).map_err(data_err)
}

/// Stage 1: every utterance on its own, with no dialogue context.
pub fn stage1_targets(
    sessions: &[DialogueSession],
    feats: &Features,
    vocab: &VocabSpec,
    cfg: &RunConfig,
) -> Result<Vec<(ExampleMeta, TrainingTarget)>, HarnessError> {
    let mut out = Vec::new();
    for s in sessions {
        for k in 0..s.turns.len() {
            let seq = training_sequence(s, k, 0, feats, vocab, cfg)?;
            if seq.len() > cfg.model.max_seq_len {
                log::warn!("{}: {} tokens exceed max_seq_len; skipped", s.utterance_id(k), seq.len());
                continue;
            }
            out.push((ExampleMeta { session_id: s.session_id.clone(), target_index: k, history_turns: 0 }, build_training_target(&seq).map_err(data_err)?));
        }
    }
    Ok(out)
}

/// Stage 2: one example per agent turn with `N ~ U{1..n_turns}` preceding
/// turns, reduced until the sequence fits. `no_context` forces `N = 0`.
pub fn stage2_targets(
    sessions: &[DialogueSession],
    feats: &Features,
    vocab: &VocabSpec,
    cfg: &RunConfig,
) -> Result<Vec<(ExampleMeta, TrainingTarget)>, HarnessError> {
    let mut out = Vec::new();
    for s in sessions {
        for k in (0..s.turns.len()).filter(|&k| s.turns[k].role == Role::Agent) {
            let mut n = if cfg.train.no_context {
                0
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[&cfg.train.seed.to_string(), &s.session_id, &k.to_string()]));
                rng.gen_range(1..=cfg.data.n_turns).min(k)
            };
            loop {
                let seq = training_sequence(s, k, n, feats, vocab, cfg)?;
                if seq.len() <= cfg.model.max_seq_len {
                    out.push((
                        ExampleMeta { session_id: s.session_id.clone(), target_index: k, history_turns: n },
                        build_training_target(&seq).map_err(data_err)?,
                    ));
                    break;
                }
                if n == 0 {
                    log::warn!("{}: {} tokens exceed max_seq_len; skipped", s.utterance_id(k), seq.len());
                    break;
                }
                n -= 1;
            }
        }
    }
    Ok(out)
}
