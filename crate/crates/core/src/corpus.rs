//! Dialogue corpora: JSONL manifests, validation, session-level splits,
//! context windowing and annotation statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio;

/// Manifest file name looked up when `load_corpus` is given a directory.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("session {session_id}: {message}")]
    Validation { session_id: String, message: String },
    #[error("invalid split: {0}")]
    Split(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Emotion {
    Angry,
    Contempt,
    Disgusted,
    Fear,
    Happy,
    Sad,
    Neutral,
    Surprised,
}

impl Emotion {
    pub const ALL: [Emotion; 8] = [
        Emotion::Angry,
        Emotion::Contempt,
        Emotion::Disgusted,
        Emotion::Fear,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Neutral,
        Emotion::Surprised,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Emotion::Angry => "Angry",
            Emotion::Contempt => "Contempt",
            Emotion::Disgusted => "Disgusted",
            Emotion::Fear => "Fear",
            Emotion::Happy => "Happy",
            Emotion::Sad => "Sad",
            Emotion::Neutral => "Neutral",
            Emotion::Surprised => "Surprised",
        }
    }

    /// Case-insensitive exact label match.
    pub fn from_label(s: &str) -> Option<Emotion> {
        let s = s.trim();
        Self::ALL.into_iter().find(|e| e.label().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn label(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Normal,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Normal, Level::High];

    pub fn label(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Normal => "normal",
            Level::High => "high",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleLevels {
    pub pitch: Level,
    pub energy: Level,
    pub tempo: Level,
}

/// Sentence-level style attributes with their raw measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleFactors {
    pub gender: Gender,
    /// Mean F0 over voiced frames, Hz.
    pub pitch_hz: f64,
    pub energy_rms: f64,
    /// Mean phone duration, seconds.
    pub tempo_mpd: f64,
    pub levels: StyleLevels,
    /// Set when tempo came from the syllable-rate fallback rather than an alignment.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tempo_approximate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker_id: String,
    pub role: Role,
    pub text: String,
    pub audio_path: Option<PathBuf>,
    pub caption: Option<String>,
    pub emotion: Option<Emotion>,
    pub style: Option<StyleFactors>,
}

impl Utterance {
    pub fn new(speaker_id: impl Into<String>, role: Role, text: impl Into<String>) -> Self {
        Self {
            speaker_id: speaker_id.into(),
            role,
            text: text.into(),
            audio_path: None,
            caption: None,
            emotion: None,
            style: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueSession {
    pub session_id: String,
    pub turns: Vec<Utterance>,
}

impl DialogueSession {
    /// Checks non-empty turns, non-blank text, and strict user/agent alternation.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |message: String| CorpusError::Validation { session_id: self.session_id.clone(), message };
        if self.turns.is_empty() {
            return Err(fail("session has no turns".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Agent };
            if turn.role != expected {
                return Err(fail(format!("turn {i} has role {:?}, expected {:?}", turn.role, expected)));
            }
            if turn.text.trim().is_empty() {
                return Err(fail(format!("turn {i} has empty text")));
            }
        }
        Ok(())
    }

    /// Stable identifier of one turn, used for alignments and annotation logs.
    pub fn utterance_id(&self, turn: usize) -> String {
        format!("{}_{turn}", self.session_id)
    }
}

// Wire format of one manifest line.
#[derive(Serialize, Deserialize)]
struct SessionRecord {
    session_id: String,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    speaker_id: String,
    role: Role,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotion: Option<Emotion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    style: Option<StyleFactors>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

/// Resolves a manifest path: directories map to their `manifest.jsonl`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads and validates a JSONL manifest. Audio paths are resolved against
/// the manifest's directory and must exist.
pub fn load_corpus(path: &Path) -> Result<Vec<DialogueSession>, CorpusError> {
    let manifest = manifest_path(path);
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = File::open(&manifest).map_err(io_err(&manifest))?;
    let mut sessions = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&manifest))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SessionRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: idx + 1, message: e.to_string() })?;
        let session = DialogueSession {
            session_id: record.session_id,
            turns: record
                .turns
                .into_iter()
                .map(|t| Utterance {
                    speaker_id: t.speaker_id,
                    role: t.role,
                    text: t.text,
                    audio_path: t.audio.map(|a| base.join(a)),
                    caption: t.caption,
                    emotion: t.emotion,
                    style: t.style,
                })
                .collect(),
        };
        session.validate()?;
        for (i, turn) in session.turns.iter().enumerate() {
            if let Some(p) = &turn.audio_path {
                if !p.exists() {
                    return Err(CorpusError::Validation {
                        session_id: session.session_id.clone(),
                        message: format!("turn {i}: audio file {} not found", p.display()),
                    });
                }
            }
        }
        sessions.push(session);
    }
    Ok(sessions)
}

/// Serializes sessions as JSONL, writing audio paths relative to `base_dir`
/// when they live under it.
pub fn serialize_corpus(sessions: &[DialogueSession], base_dir: &Path) -> String {
    let mut out = String::new();
    for s in sessions {
        let record = SessionRecord {
            session_id: s.session_id.clone(),
            turns: s
                .turns
                .iter()
                .map(|t| TurnRecord {
                    speaker_id: t.speaker_id.clone(),
                    role: t.role,
                    text: t.text.clone(),
                    audio: t.audio_path.as_ref().map(|p| {
                        p.strip_prefix(base_dir).unwrap_or(p).to_string_lossy().into_owned()
                    }),
                    caption: t.caption.clone(),
                    emotion: t.emotion,
                    style: t.style.clone(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record).expect("session record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(sessions: &[DialogueSession], manifest: &Path) -> Result<(), CorpusError> {
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut f = File::create(manifest).map_err(io_err(manifest))?;
    f.write_all(serialize_corpus(sessions, &base).as_bytes()).map_err(io_err(manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { ratios: [0.8, 0.1, 0.1], seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(CorpusError::Split(format!("negative or non-finite ratio in {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Split(format!("ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Partition sizes by largest remainder; ties go to the earlier partition.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let exact: Vec<f64> = self.ratios.iter().map(|r| r * n as f64).collect();
        let mut sizes = [0usize; 3];
        for i in 0..3 {
            sizes[i] = (exact[i] + 1e-9).floor() as usize;
        }
        let mut left = n.saturating_sub(sizes.iter().sum());
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - sizes[a] as f64;
            let fb = exact[b] - sizes[b] as f64;
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if self.ratios[i] > 0.0 {
                sizes[i] += 1;
                left -= 1;
            }
        }
        sizes
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<DialogueSession>,
    pub valid: Vec<DialogueSession>,
    pub test: Vec<DialogueSession>,
}

/// Seeded session-level shuffle followed by a ratio split.
pub fn split_corpus(sessions: &[DialogueSession], spec: &SplitSpec) -> Result<CorpusSplit, CorpusError> {
    spec.validate()?;
    let nonzero = spec.ratios.iter().filter(|r| **r > 0.0).count();
    if sessions.len() < nonzero {
        return Err(CorpusError::Split(format!(
            "{} sessions cannot fill {nonzero} non-empty partitions",
            sessions.len()
        )));
    }
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let [n_train, n_valid, _] = spec.sizes(sessions.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| sessions[i].clone()).collect::<Vec<_>>();
    Ok(CorpusSplit {
        train: pick(&order[..n_train]),
        valid: pick(&order[n_train..n_train + n_valid]),
        test: pick(&order[n_train + n_valid..]),
    })
}

/// One training/inference example: the preceding turns `history` and the
/// agent turn to synthesize.
#[derive(Debug, Clone, Copy)]
pub struct ContextWindow<'a> {
    pub session_id: &'a str,
    pub target_index: usize,
    pub history: &'a [Utterance],
    pub target: &'a Utterance,
}

/// One window per agent turn, carrying at most `max_turns - 1` preceding turns.
pub fn window_context(session: &DialogueSession, max_turns: usize) -> Vec<ContextWindow<'_>> {
    assert!(max_turns >= 1, "max_turns must be at least 1");
    session
        .turns
        .iter()
        .enumerate()
        .filter(|(_, t)| t.role == Role::Agent)
        .map(|(k, target)| ContextWindow {
            session_id: &session.session_id,
            target_index: k,
            history: &session.turns[k.saturating_sub(max_turns - 1)..k],
            target,
        })
        .collect()
}

/// Window ending at an arbitrary turn (used at inference time).
pub fn window_at(session: &DialogueSession, target_index: usize, max_turns: usize) -> Option<ContextWindow<'_>> {
    let target = session.turns.get(target_index)?;
    Some(ContextWindow {
        session_id: &session.session_id,
        target_index,
        history: &session.turns[target_index.saturating_sub(max_turns.max(1) - 1)..target_index],
        target,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogs: usize,
    pub utterances: usize,
    pub hours: f64,
    pub gender: BTreeMap<String, usize>,
    pub pitch: BTreeMap<String, usize>,
    pub energy: BTreeMap<String, usize>,
    pub tempo: BTreeMap<String, usize>,
    pub emotion: BTreeMap<String, usize>,
    /// Utterances whose style factors were present.
    pub styled_utterances: usize,
    pub emotion_labeled_utterances: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn corpus_stats(sessions: &[DialogueSession]) -> CorpusStats {
    let mut stats = CorpusStats { dialogs: sessions.len(), ..Default::default() };
    let mut seconds = 0.0;
    for s in sessions {
        for u in &s.turns {
            stats.utterances += 1;
            if let Some(e) = u.emotion {
                *stats.emotion.entry(e.label().to_string()).or_default() += 1;
                stats.emotion_labeled_utterances += 1;
            }
            if let Some(st) = &u.style {
                stats.styled_utterances += 1;
                *stats.gender.entry(st.gender.label().to_string()).or_default() += 1;
                *stats.pitch.entry(st.levels.pitch.label().to_string()).or_default() += 1;
                *stats.energy.entry(st.levels.energy.label().to_string()).or_default() += 1;
                *stats.tempo.entry(st.levels.tempo.label().to_string()).or_default() += 1;
            }
            if let Some(p) = &u.audio_path {
                match audio::wav_duration(p) {
                    Ok(d) => seconds += d,
                    Err(e) => {
                        log::warn!("skipping duration of {}: {e}", p.display());
                        stats.warnings.push(format!("{}: {e}", p.display()));
                    }
                }
            }
        }
    }
    stats.hours = seconds / 3600.0;
    stats
}
