use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Start {
        command: String,
        config_hash: String,
        provenance: String,
        tags: Vec<String>,
        config: serde_json::Value,
        resumed_at: Option<usize>,
    },
    Step { step: usize, l_caption: f64, l_speech: f64, lr: f64 },
    CfmStep { step: usize, loss: f64, lr: f64 },
    Snapshot { step: usize, teacher_forcing_accuracy: f64 },
    Checkpoint { step: usize, path: String },
    Finish { step: usize },
}

/// Append-only JSONL record of one run; a resumed run appends to the same file.
pub struct ExperimentLog {
    path: PathBuf,
    file: File,
}

impl ExperimentLog {
    pub fn open(path: &Path) -> Result<Self, HarnessError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::Runtime(format!("{}: {e}", dir.display())))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &LogEvent) -> Result<(), HarnessError> {
        let line = serde_json::to_string(event).expect("log event serializes");
        writeln!(self.file, "{line}").map_err(|e| HarnessError::Runtime(format!("{}: {e}", self.path.display())))
    }

    pub fn read(path: &Path) -> Result<Vec<LogEvent>, HarnessError> {
        let f = File::open(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        BufReader::new(f)
            .lines()
            .map(|l| {
                let l = l.map_err(|e| HarnessError::Data(e.to_string()))?;
                serde_json::from_str(&l).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
            })
            .collect()
    }
}

/// Crate version plus the current git revision when available.
pub fn provenance() -> String {
    let rev = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "nogit".into());
    format!("convsynth-{}+{rev}", env!("CARGO_PKG_VERSION"))
}
