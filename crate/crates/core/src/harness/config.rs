use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::cfm::LossNorm;
use crate::corpus::SplitSpec;
use crate::emgpt::SamplingConfig;
use crate::nn::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub workdir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { manifest: None, workdir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub ffn_mult: usize,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { n_layers: 2, model_dim: 64, n_heads: 4, max_seq_len: 512, dropout_rate: 0.1, ffn_mult: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfmSection {
    pub cond_width: usize,
    pub n_blocks: usize,
    pub code_dim: usize,
    pub time_dim: usize,
    pub sigma_min: f64,
    pub n_euler_steps: usize,
    pub loss: LossNorm,
    pub prompt_max_frac: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Griffin-Lim iterations when a waveform is requested.
    pub vocoder_iters: usize,
}

impl Default for CfmSection {
    fn default() -> Self {
        Self {
            cond_width: 128,
            n_blocks: 2,
            code_dim: 16,
            time_dim: 16,
            sigma_min: 1e-4,
            n_euler_steps: 10,
            loss: LossNorm::SquaredL2,
            prompt_max_frac: 0.5,
            steps: 500,
            batch_size: 4,
            seed: 0,
            vocoder_iters: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryCaptions {
    /// Annotated captions of the preceding turns.
    Gold,
    /// Captions generated by the model for each preceding turn.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub bpe_vocab: usize,
    pub code_vocab: usize,
    /// Largest number of preceding turns in a training window.
    pub n_turns: usize,
    pub caption_max: usize,
    pub code_max: usize,
    pub history_captions: HistoryCaptions,
    pub codebook_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            bpe_vocab: 256,
            code_vocab: 64,
            n_turns: 3,
            caption_max: 96,
            code_max: 200,
            history_captions: HistoryCaptions::Gold,
            codebook_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub stage: u8,
    pub steps: usize,
    pub batch_size: usize,
    pub save_every: usize,
    pub log_every: usize,
    pub seed: u64,
    pub caption_loss_weight: f64,
    /// Drop the dialogue history from every example.
    pub no_context: bool,
    /// Train with empty captions and skip the caption phase when decoding.
    pub no_captions: bool,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            stage: 1,
            steps: 200,
            batch_size: 4,
            save_every: 100,
            log_every: 10,
            seed: 0,
            caption_loss_weight: 1.0,
            no_context: false,
            no_captions: false,
            adam: AdamConfig { lr: 2e-3, warmup_steps: 20, ..AdamConfig::default() },
        }
    }
}

/// Every tunable of a run. Values are merged as defaults, then the config
/// file, then command-line overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelSection,
    pub cfm: CfmSection,
    pub sampling: SamplingConfig,
    pub split: SplitSpec,
    pub data: DataSection,
    pub train: TrainSection,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`; the value is read as a TOML literal, else as a string.
fn override_value(assignment: &str) -> Result<toml::Value, HarnessError> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| HarnessError::Usage(format!("override {assignment:?} is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut v = value;
    for part in key.trim().rsplit('.') {
        if part.is_empty() {
            return Err(HarnessError::Usage(format!("bad override key {key:?}")));
        }
        let mut t = toml::Table::new();
        t.insert(part.to_string(), v);
        v = toml::Value::Table(t);
    }
    Ok(v)
}

impl RunConfig {
    /// Defaults, then `file`, then each `key=value` override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut value = toml::Value::try_from(Self::default()).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Usage(format!("config {}: {e}", path.display())))?;
            let parsed: toml::Table =
                toml::from_str(&text).map_err(|e| HarnessError::Usage(format!("config {}: {e}", path.display())))?;
            merge(&mut value, toml::Value::Table(parsed));
        }
        for o in overrides {
            merge(&mut value, override_value(o)?);
        }
        let cfg: Self = value.try_into().map_err(|e| HarnessError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Usage(m));
        if !matches!(self.train.stage, 1 | 2) {
            return bad(format!("train.stage must be 1 or 2, got {}", self.train.stage));
        }
        if self.train.batch_size == 0 || self.cfm.batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.data.n_turns == 0 {
            return bad("data.n_turns must be at least 1".into());
        }
        if self.train.caption_loss_weight < 0.0 {
            return bad("train.caption_loss_weight must be non-negative".into());
        }
        self.sampling.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
        self.split.validate().map_err(|e| HarnessError::Usage(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes to JSON");
        hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string()
    }

    /// Ablation tags in the conventional table wording.
    pub fn tags(&self, from_scratch: bool) -> Vec<String> {
        let mut t = Vec::new();
        if from_scratch {
            t.push("w/o First-Stage".to_string());
        }
        if self.train.no_context {
            t.push("w/o context".to_string());
        }
        if self.train.no_captions {
            t.push("w/o captions".to_string());
        }
        if self.train.caption_loss_weight == 0.0 {
            t.push("w/o L^caption".to_string());
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_cli_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[train]\nsteps = 50\nseed = 3\n[model]\nmodel_dim = 32\n").unwrap();
        let c = RunConfig::resolve(Some(&p), &["train.steps=7".into(), "paths.workdir=out/x".into()]).unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.model.model_dim, 32);
        assert_eq!(c.model.n_layers, ModelSection::default().n_layers);
        assert_eq!(c.paths.workdir, PathBuf::from("out/x"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        assert!(matches!(RunConfig::resolve(None, &["train.stepz=1".into()]), Err(HarnessError::Usage(_))));
        assert!(matches!(RunConfig::resolve(None, &["train.stage=3".into()]), Err(HarnessError::Usage(_))));
        assert!(matches!(RunConfig::resolve(None, &["nonsense".into()]), Err(HarnessError::Usage(_))));
    }

    #[test]
    fn hash_is_stable_across_reserialization() {
        let c = RunConfig::resolve(None, &["train.adam.lr=0.0007".into(), "sampling.tau_r=0.15".into()]).unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
    }

    #[test]
    fn ablation_tags() {
        let c = RunConfig::resolve(None, &["train.no_context=true".into(), "train.caption_loss_weight=0.0".into()]).unwrap();
        assert_eq!(c.tags(true), ["w/o First-Stage", "w/o context", "w/o L^caption"]);
        assert!(RunConfig::default().tags(false).is_empty());
    }
}
