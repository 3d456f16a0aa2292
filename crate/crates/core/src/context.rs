//! Unified context tokenization.
//!
//! A sequence is laid out as
//!
//! ```text
//! BOS
//!   (SPK codes.. text.. SPS caption.. SPE)      one per history turn
//!   SPK text.. SPS                               target turn
//!   [caption.. SPE [codes.. END_OF_CODES EOS]]   training continuation
//! ```
//!
//! Text and captions share the BPE id range `[0, bpe)`; the special tokens
//! follow, then the speech codes. Each `SPK` slot carries a speaker vector
//! that the model projects into its embedding space.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bpe::BpeModel;
use crate::codec::{SemanticCodes, SpeakerVector};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ContextError {
    #[error("history turn {turn} is missing its {what}")]
    MissingHistory { turn: usize, what: &'static str },
    #[error("token {id} is out of range for {what}")]
    OutOfRange { id: u32, what: &'static str },
    #[error("sequence lacks target {0}")]
    MissingTarget(&'static str),
    #[error("malformed sequence at position {pos}: {message}")]
    Malformed { pos: usize, message: String },
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
    #[error("caption decoding: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    Bos,
    Eos,
    Sps,
    Spe,
    EndOfCodes,
    SpeakerSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Text(u32),
    Special(Special),
    Code(u32),
    Invalid,
}

/// Layout of the unified id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub bpe_vocab_size: u32,
    pub code_vocab_size: u32,
    pub bos: u32,
    pub eos: u32,
    pub sps: u32,
    pub spe: u32,
    pub end_of_codes: u32,
    pub speaker_slot: u32,
    pub code_offset: u32,
}

impl VocabSpec {
    pub fn new(bpe_vocab_size: u32, code_vocab_size: u32) -> Self {
        let s = bpe_vocab_size;
        Self {
            bpe_vocab_size,
            code_vocab_size,
            bos: s,
            eos: s + 1,
            sps: s + 2,
            spe: s + 3,
            end_of_codes: s + 4,
            speaker_slot: s + 5,
            code_offset: s + 6,
        }
    }

    pub fn size(&self) -> usize {
        (self.code_offset + self.code_vocab_size) as usize
    }

    fn specials(&self) -> [u32; 6] {
        [self.bos, self.eos, self.sps, self.spe, self.end_of_codes, self.speaker_slot]
    }

    pub fn validate(&self) -> Result<(), ContextError> {
        let sp = self.specials();
        for (i, a) in sp.iter().enumerate() {
            if sp[i + 1..].contains(a) {
                return Err(ContextError::Vocab(format!("special id {a} used twice")));
            }
            if *a < self.bpe_vocab_size || *a >= self.code_offset {
                return Err(ContextError::Vocab(format!("special id {a} outside the special range")));
            }
        }
        if self.code_offset < self.bpe_vocab_size {
            return Err(ContextError::Vocab("code range overlaps text range".into()));
        }
        Ok(())
    }

    pub fn classify(&self, id: u32) -> TokenClass {
        if id < self.bpe_vocab_size {
            return TokenClass::Text(id);
        }
        if id >= self.code_offset {
            return if id - self.code_offset < self.code_vocab_size { TokenClass::Code(id - self.code_offset) } else { TokenClass::Invalid };
        }
        let special = match id {
            x if x == self.bos => Special::Bos,
            x if x == self.eos => Special::Eos,
            x if x == self.sps => Special::Sps,
            x if x == self.spe => Special::Spe,
            x if x == self.end_of_codes => Special::EndOfCodes,
            x if x == self.speaker_slot => Special::SpeakerSlot,
            _ => return TokenClass::Invalid,
        };
        TokenClass::Special(special)
    }

    pub fn code_id(&self, code: u32) -> u32 {
        self.code_offset + code
    }

    pub fn text_range(&self) -> Range<u32> {
        0..self.bpe_vocab_size
    }

    pub fn code_range(&self) -> Range<u32> {
        self.code_offset..self.code_offset + self.code_vocab_size
    }

    /// Short stable fingerprint recorded next to checkpoints.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("vocab serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// Tokenized pieces of one turn. History turns need codes and caption.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnTokens {
    pub speaker: SpeakerVector,
    pub text: Vec<u32>,
    pub codes: Option<SemanticCodes>,
    pub caption: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistorySpans {
    pub speaker: usize,
    pub codes: Range<usize>,
    pub text: Range<usize>,
    pub sps: usize,
    pub caption: Range<usize>,
    pub spe: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSpans {
    pub speaker: usize,
    pub text: Range<usize>,
    pub sps: usize,
    pub caption: Option<Range<usize>>,
    pub spe: Option<usize>,
    pub codes: Option<Range<usize>>,
    pub end_of_codes: Option<usize>,
    pub eos: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentLayout {
    pub history: Vec<HistorySpans>,
    pub target: TargetSpans,
}

impl SegmentLayout {
    pub fn speaker_slots(&self) -> Vec<usize> {
        self.history.iter().map(|h| h.speaker).chain(std::iter::once(self.target.speaker)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub layout: SegmentLayout,
    /// One vector per speaker slot, in slot order.
    pub speakers: Vec<SpeakerVector>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Extends an inference prompt ending at the target `SPS` with a caption and its `SPE`.
    pub fn with_caption(&self, caption: &[u32], vocab: &VocabSpec) -> Result<TokenSequence, ContextError> {
        if self.layout.target.spe.is_some() {
            return Err(ContextError::Malformed { pos: self.ids.len(), message: "caption already present".into() });
        }
        let mut out = self.clone();
        push_text(&mut out.ids, caption, vocab, "caption")?;
        let start = self.ids.len();
        out.layout.target.caption = Some(start..start + caption.len());
        out.layout.target.spe = Some(out.ids.len());
        out.ids.push(vocab.spe);
        Ok(out)
    }
}

fn push_text(ids: &mut Vec<u32>, text: &[u32], vocab: &VocabSpec, what: &'static str) -> Result<(), ContextError> {
    for &t in text {
        if t >= vocab.bpe_vocab_size {
            return Err(ContextError::OutOfRange { id: t, what });
        }
        ids.push(t);
    }
    Ok(())
}

fn push_codes(ids: &mut Vec<u32>, codes: &SemanticCodes, vocab: &VocabSpec) -> Result<(), ContextError> {
    for &c in &codes.codes {
        if c >= vocab.code_vocab_size {
            return Err(ContextError::OutOfRange { id: c, what: "speech codes" });
        }
        ids.push(vocab.code_id(c));
    }
    Ok(())
}

/// Frames history and target into one sequence. The continuation after the
/// target `SPS` is present only when supplied: a caption alone yields a
/// code-generation prompt; caption plus codes yields a full training sequence.
pub fn build_sequence(
    history: &[TurnTokens],
    target: &TurnTokens,
    vocab: &VocabSpec,
    target_codes: Option<&SemanticCodes>,
    target_caption: Option<&[u32]>,
) -> Result<TokenSequence, ContextError> {
    if target_codes.is_some() && target_caption.is_none() {
        return Err(ContextError::MissingTarget("caption (codes require a caption span, possibly empty)"));
    }
    let mut ids = vec![vocab.bos];
    let mut layout_hist = Vec::with_capacity(history.len());
    let mut speakers = Vec::with_capacity(history.len() + 1);
    for (n, turn) in history.iter().enumerate() {
        let codes = turn.codes.as_ref().ok_or(ContextError::MissingHistory { turn: n, what: "semantic codes" })?;
        let caption = turn.caption.as_ref().ok_or(ContextError::MissingHistory { turn: n, what: "caption" })?;
        let speaker = ids.len();
        ids.push(vocab.speaker_slot);
        speakers.push(turn.speaker.clone());
        let c0 = ids.len();
        push_codes(&mut ids, codes, vocab)?;
        let t0 = ids.len();
        push_text(&mut ids, &turn.text, vocab, "text")?;
        let sps = ids.len();
        ids.push(vocab.sps);
        let d0 = ids.len();
        push_text(&mut ids, caption, vocab, "caption")?;
        let spe = ids.len();
        ids.push(vocab.spe);
        layout_hist.push(HistorySpans { speaker, codes: c0..t0, text: t0..sps, sps, caption: d0..spe, spe });
    }

    let speaker = ids.len();
    ids.push(vocab.speaker_slot);
    speakers.push(target.speaker.clone());
    let t0 = ids.len();
    push_text(&mut ids, &target.text, vocab, "text")?;
    let sps = ids.len();
    ids.push(vocab.sps);
    let mut tgt = TargetSpans { speaker, text: t0..sps, sps, caption: None, spe: None, codes: None, end_of_codes: None, eos: None };
    if let Some(caption) = target_caption {
        let d0 = ids.len();
        push_text(&mut ids, caption, vocab, "caption")?;
        tgt.caption = Some(d0..ids.len());
        tgt.spe = Some(ids.len());
        ids.push(vocab.spe);
    }
    if let Some(codes) = target_codes {
        let c0 = ids.len();
        push_codes(&mut ids, codes, vocab)?;
        tgt.codes = Some(c0..ids.len());
        tgt.end_of_codes = Some(ids.len());
        ids.push(vocab.end_of_codes);
        tgt.eos = Some(ids.len());
        ids.push(vocab.eos);
    }
    Ok(TokenSequence { ids, layout: SegmentLayout { history: layout_hist, target: tgt }, speakers })
}

fn run(ids: &[u32], mut pos: usize, pred: impl Fn(TokenClass) -> bool, vocab: &VocabSpec) -> Range<usize> {
    let start = pos;
    while pos < ids.len() && pred(vocab.classify(ids[pos])) {
        pos += 1;
    }
    start..pos
}

/// Recovers the segment layout from ids alone. The last speaker slot starts the target turn.
pub fn parse_sequence(ids: &[u32], vocab: &VocabSpec) -> Result<SegmentLayout, ContextError> {
    let is_text = |c| matches!(c, TokenClass::Text(_));
    let is_code = |c| matches!(c, TokenClass::Code(_));
    let expect = |pos: usize, want: Special| -> Result<(), ContextError> {
        match ids.get(pos).map(|&id| vocab.classify(id)) {
            Some(TokenClass::Special(s)) if s == want => Ok(()),
            other => Err(ContextError::Malformed { pos, message: format!("expected {want:?}, found {other:?}") }),
        }
    };
    expect(0, Special::Bos)?;
    let slots: Vec<usize> = ids.iter().enumerate().filter(|(_, &id)| id == vocab.speaker_slot).map(|(i, _)| i).collect();
    let Some((&target_slot, history_slots)) = slots.split_last() else {
        return Err(ContextError::Malformed { pos: 1, message: "no speaker slot".into() });
    };
    let mut pos = 1;
    let mut history = Vec::new();
    for &slot in history_slots {
        if slot != pos {
            return Err(ContextError::Malformed { pos, message: "gap before speaker slot".into() });
        }
        let codes = run(ids, pos + 1, is_code, vocab);
        let text = run(ids, codes.end, is_text, vocab);
        let sps = text.end;
        expect(sps, Special::Sps)?;
        let caption = run(ids, sps + 1, is_text, vocab);
        let spe = caption.end;
        expect(spe, Special::Spe)?;
        history.push(HistorySpans { speaker: slot, codes, text, sps, caption, spe });
        pos = spe + 1;
    }
    if target_slot != pos {
        return Err(ContextError::Malformed { pos, message: "gap before target speaker slot".into() });
    }
    let text = run(ids, pos + 1, is_text, vocab);
    let sps = text.end;
    expect(sps, Special::Sps)?;
    let mut target = TargetSpans { speaker: target_slot, text, sps, caption: None, spe: None, codes: None, end_of_codes: None, eos: None };
    pos = sps + 1;
    if pos < ids.len() {
        let caption = run(ids, pos, is_text, vocab);
        expect(caption.end, Special::Spe)?;
        target.spe = Some(caption.end);
        pos = caption.end + 1;
        target.caption = Some(caption);
    }
    if pos < ids.len() {
        let codes = run(ids, pos, is_code, vocab);
        expect(codes.end, Special::EndOfCodes)?;
        target.end_of_codes = Some(codes.end);
        pos = codes.end + 1;
        target.codes = Some(codes);
        expect(pos, Special::Eos)?;
        target.eos = Some(pos);
        pos += 1;
    }
    if pos != ids.len() {
        return Err(ContextError::Malformed { pos, message: "trailing tokens".into() });
    }
    Ok(SegmentLayout { history, target })
}

/// Teacher-forcing view of a full sequence: `input = ids[..n-1]`, `target = ids[1..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTarget {
    pub input: Vec<u32>,
    pub target: Vec<u32>,
    /// Positions whose target is a target-turn caption token or its `SPE`.
    pub caption_mask: Vec<bool>,
    /// Positions whose target is a target-turn code or the end-of-codes sentinel.
    pub speech_mask: Vec<bool>,
    pub speaker_slots: Vec<usize>,
    pub speakers: Vec<SpeakerVector>,
}

impl TrainingTarget {
    pub fn caption_count(&self) -> usize {
        self.caption_mask.iter().filter(|m| **m).count()
    }

    pub fn speech_count(&self) -> usize {
        self.speech_mask.iter().filter(|m| **m).count()
    }
}

pub fn build_training_target(seq: &TokenSequence) -> Result<TrainingTarget, ContextError> {
    let t = &seq.layout.target;
    let caption = t.caption.clone().ok_or(ContextError::MissingTarget("caption"))?;
    let spe = t.spe.ok_or(ContextError::MissingTarget("caption terminator"))?;
    let codes = t.codes.clone().ok_or(ContextError::MissingTarget("speech codes"))?;
    let end = t.end_of_codes.ok_or(ContextError::MissingTarget("end-of-codes sentinel"))?;
    let n = seq.ids.len();
    let caption_mask = (1..n).map(|p| caption.contains(&p) || p == spe).collect();
    let speech_mask = (1..n).map(|p| codes.contains(&p) || p == end).collect();
    Ok(TrainingTarget {
        input: seq.ids[..n - 1].to_vec(),
        target: seq.ids[1..].to_vec(),
        caption_mask,
        speech_mask,
        speaker_slots: seq.layout.speaker_slots(),
        speakers: seq.speakers.clone(),
    })
}

/// Decodes caption ids up to the first `SPE`.
pub fn decode_caption(ids: &[u32], vocab: &VocabSpec, bpe: &BpeModel) -> Result<String, ContextError> {
    let mut text = Vec::new();
    for &id in ids {
        match vocab.classify(id) {
            TokenClass::Text(t) => text.push(t),
            TokenClass::Special(Special::Spe) => break,
            other => return Err(ContextError::Decode(format!("id {id} ({other:?}) is not a caption token"))),
        }
    }
    bpe.decode(&text).map_err(|e| ContextError::Decode(e.to_string()))
}
