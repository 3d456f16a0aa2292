use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::rules::{ExpansionRule, RULES};
use super::text;
use crate::corpus::{Emotion, Gender, Role, StyleLevels};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Response(String),
    #[error("missing API key: set {0}")]
    MissingKey(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogTurn {
    pub speaker_id: String,
    pub role: Role,
    pub text: String,
    pub audio: Option<String>,
    /// Existing label carried through for offline clients; never rendered into prompts.
    pub gold_emotion: Option<Emotion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attributes {
    pub emotion: Emotion,
    pub gender: Gender,
    pub levels: StyleLevels,
}

/// Structured payload behind each rendered prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum LlmTask {
    DialogEmotions { session_id: String, turns: Vec<DialogTurn> },
    Gender { utterance_id: String, pitch_hz: f64 },
    BasicDescription { utterance_id: String, attributes: Attributes },
    Expand { description: String, rule: u8, attributes: Attributes },
    Verify { caption: String, attributes: Attributes },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub task: LlmTask,
    pub prompt: String,
    pub seed: u64,
    /// Zero-based retry counter for this logical request.
    pub attempt: u32,
}

/// Text completion backend. Implementations must be safe to call from several threads.
pub trait LlmClient: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Additional attempts after the first.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, initial_backoff_ms: 500, max_backoff_ms: 8000 }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms.saturating_mul(1u64 << attempt.min(20)).min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

/// Deterministic offline client. Responses depend only on the structured task.
#[derive(Debug, Clone, Default)]
pub struct MockLlm {
    /// Raw label returned for every turn of every dialog-emotion request.
    pub emotion_script: Option<String>,
}

impl MockLlm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scripted_emotions(label: impl Into<String>) -> Self {
        Self { emotion_script: Some(label.into()) }
    }
}

pub fn mock_basic_description(a: &Attributes) -> String {
    format!(
        "The speaker, {} {}, speaks with {} pitch, {} energy, at a {} pace.",
        super::text::with_article(super::text::emotion_adjective(a.emotion)),
        a.gender, a.levels.pitch, a.levels.energy, a.levels.tempo
    )
}

impl LlmClient for MockLlm {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        Ok(match &request.task {
            LlmTask::DialogEmotions { turns, .. } => turns
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let label = match &self.emotion_script {
                        Some(s) => s.clone(),
                        None => t.gold_emotion.unwrap_or_else(|| text::keyword_emotion(&t.text)).to_string(),
                    };
                    format!("{}: {label}", i + 1)
                })
                .collect::<Vec<_>>()
                .join("\n"),
            LlmTask::Gender { pitch_hz, .. } => {
                if *pitch_hz >= 165.0 { "female" } else { "male" }.to_string()
            }
            LlmTask::BasicDescription { attributes, .. } => mock_basic_description(attributes),
            LlmTask::Expand { rule, attributes, .. } => {
                let rule: &ExpansionRule = RULES
                    .get(usize::from(*rule).wrapping_sub(1))
                    .ok_or_else(|| LlmError::Response(format!("unknown rule {rule}")))?;
                (rule.mock)(attributes)
            }
            LlmTask::Verify { .. } => "yes".to_string(),
        })
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpLlmConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_s: u64,
    pub retry: RetryPolicy,
}

impl Default for HttpLlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: "CONVSYNTH_LLM_API_KEY".into(),
            temperature: 0.0,
            timeout_s: 60,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpLlm {
    config: HttpLlmConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn from_env(config: HttpLlmConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| LlmError::MissingKey(config.api_key_env.clone()))?;
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(config.timeout_s)).build();
        Ok(Self { config, api_key, agent })
    }

    fn call_once(&self, request: &LlmRequest) -> Result<String, (bool, LlmError)> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "seed": request.seed,
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let resp = self
            .agent
            .post(&self.config.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let retryable = code == 429 || code >= 500;
                let text = r.into_string().unwrap_or_default();
                return Err((retryable, LlmError::Transport(format!("HTTP {code}: {text}"))));
            }
            Err(e) => return Err((true, LlmError::Transport(e.to_string()))),
        };
        let json: serde_json::Value = resp.into_json().map_err(|e| (false, LlmError::Response(e.to_string())))?;
        json["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, LlmError::Response("no choices[0].message.content".into())))
    }
}

impl LlmClient for HttpLlm {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let mut attempt = 0;
        loop {
            match self.call_once(request) {
                Ok(s) => return Ok(s),
                Err((true, e)) if attempt < self.config.retry.max_retries => {
                    log::warn!("llm request failed ({e}); retrying");
                    std::thread::sleep(self.config.retry.backoff(attempt));
                    attempt += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}
