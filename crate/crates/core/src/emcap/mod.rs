//! Caption annotation: measured style factors and dialog-level emotion are
//! turned into a basic description, rewritten into an empathetic caption,
//! and checked for consistency.

mod llm;
mod pipeline;
mod prompts;
mod rules;
pub mod text;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use llm::{
    mock_basic_description, Attributes, DialogTurn, HttpLlm, HttpLlmConfig, LlmClient, LlmError, LlmRequest, LlmTask, MockLlm,
    RetryPolicy,
};
pub use pipeline::{
    annotate_corpus, classify_dialog_emotions, expand_caption, generate_basic_description, measure_style, records_to_jsonl,
    verify_caption, AnnotateOptions, Annotation, CaptionRecord, Description, EmotionLabels, UtteranceFailure, Verification,
};
pub(crate) use pipeline::derive_seed;
pub use prompts::{render, render_dialog_prompt};
pub use rules::{rule, ExpansionRule, RULES};

use crate::corpus::Level;

#[derive(Debug, thiserror::Error)]
pub enum EmcapError {
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("expansion rule {0} outside 1..=8")]
    Rule(u8),
    #[error("description is already an expanded caption")]
    AlreadyExpanded,
    #[error("empty response for {0} after retries")]
    EmptyResponse(&'static str),
    #[error("alignment references unknown utterance {0}")]
    UnknownAlignment(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prosody(#[from] crate::prosody::ProsodyError),
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Level boundaries for each measured attribute, `(low/normal, normal/high)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeThresholds {
    /// Mean F0, Hz.
    pub pitch: (f64, f64),
    /// Mean phone duration, seconds.
    pub tempo: (f64, f64),
    /// Mean frame RMS.
    pub energy: (f64, f64),
}

impl Default for AttributeThresholds {
    fn default() -> Self {
        Self { pitch: (136.577, 196.098), tempo: (0.252, 0.386), energy: (0.033, 0.0505) }
    }
}

impl AttributeThresholds {
    pub fn validate(&self) -> Result<(), EmcapError> {
        for (name, (a, b)) in [("pitch", self.pitch), ("tempo", self.tempo), ("energy", self.energy)] {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(EmcapError::Thresholds(format!("{name} boundaries ({a}, {b}) are not strictly increasing")));
            }
        }
        Ok(())
    }

    /// Reads a TOML file with `pitch`, `tempo` and `energy` pairs.
    pub fn from_file(path: &Path) -> Result<Self, EmcapError> {
        let text = std::fs::read_to_string(path)?;
        let t: Self = toml::from_str(&text).map_err(|e| EmcapError::Thresholds(format!("{}: {e}", path.display())))?;
        t.validate()?;
        Ok(t)
    }
}

/// `value < b1` is low, `value > b2` is high, anything in between (inclusive) is normal.
pub fn classify_level(value: f64, (b1, b2): (f64, f64)) -> Level {
    if value < b1 {
        Level::Low
    } else if value > b2 {
        Level::High
    } else {
        Level::Normal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn published_thresholds() {
        let t = AttributeThresholds::default();
        assert_eq!(t.pitch, (136.577, 196.098));
        assert_eq!(t.tempo, (0.252, 0.386));
        assert_eq!(t.energy, (0.033, 0.0505));
        t.validate().unwrap();
    }

    #[test]
    fn boundaries_are_normal() {
        let t = AttributeThresholds::default();
        assert_eq!(classify_level(136.577, t.pitch), Level::Normal);
        assert_eq!(classify_level(196.098, t.pitch), Level::Normal);
        assert_eq!(classify_level(300.0, t.pitch), Level::High);
        assert_eq!(classify_level(0.01, t.energy), Level::Low);
        assert_eq!(classify_level(0.2, t.tempo), Level::Low);
        assert_eq!(classify_level(0.4, t.tempo), Level::High);
        assert_eq!(classify_level(0.3, t.tempo), Level::Normal);
    }

    #[test]
    fn thresholds_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.toml");
        std::fs::write(&p, "pitch = [100.0, 200.0]\ntempo = [0.2, 0.3]\nenergy = [0.01, 0.02]\n").unwrap();
        assert_eq!(AttributeThresholds::from_file(&p).unwrap().pitch, (100.0, 200.0));
        std::fs::write(&p, "pitch = [200.0, 100.0]\ntempo = [0.2, 0.3]\nenergy = [0.01, 0.02]\n").unwrap();
        assert!(AttributeThresholds::from_file(&p).is_err());
    }

    proptest! {
        #[test]
        fn classify_level_is_monotone(a in -1e3f64..1e3, d in 0f64..1e3, b1 in -500f64..500.0, w in 1e-6f64..500.0) {
            let bounds = (b1, b1 + w);
            prop_assert!(classify_level(a + d, bounds) >= classify_level(a, bounds));
        }
    }
}
