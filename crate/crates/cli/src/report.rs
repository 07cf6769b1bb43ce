//! Deterministic command reports.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use vidcompress_core::{Error, Tensor};

use crate::CliError;

pub const REPORT_FILE: &str = "report.json";

/// Everything a command reports. Serialized through `serde_json::Value`,
/// whose maps keep keys sorted, so equal reports are equal bytes.
#[derive(Debug, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub inputs_digest: String,
    pub passed: bool,
    pub metrics: Value,
}

impl Report {
    pub fn to_json(&self) -> String {
        let v = serde_json::to_value(self).expect("report values are JSON");
        let mut s = serde_json::to_string_pretty(&v).expect("JSON values serialize");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(REPORT_FILE);
        fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// `path = value` lines for scalar metrics, nested keys joined by dots.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{}: {}\ninputs digest: {}\n",
            self.command,
            if self.passed { "pass" } else { "FAIL" },
            self.inputs_digest
        );
        flatten("", &self.metrics, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    const MAX_LIST: usize = 8;
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) if items.len() > MAX_LIST || items.iter().any(|i| i.is_object()) => {
            for (i, v) in items.iter().enumerate().take(MAX_LIST) {
                flatten(&format!("{prefix}[{i}]"), v, out);
            }
            if items.len() > MAX_LIST {
                out.push_str(&format!("{prefix}: {} more entries\n", items.len() - MAX_LIST));
            }
        }
        _ => out.push_str(&format!("{prefix} = {v}\n")),
    }
}

/// SHA-256 over labelled command inputs.
pub struct InputDigest(Sha256);

impl InputDigest {
    pub fn new(command: &str) -> Self {
        let mut d = InputDigest(Sha256::new());
        d.chunk("command", command.as_bytes());
        d
    }

    fn chunk(&mut self, label: &str, bytes: &[u8]) {
        for part in [label.as_bytes(), bytes] {
            self.0.update((part.len() as u64).to_le_bytes());
            self.0.update(part);
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.chunk("seed", &seed.to_le_bytes());
        self
    }

    pub fn json(mut self, label: &str, value: &impl Serialize) -> Self {
        let v = serde_json::to_value(value).expect("inputs are JSON");
        self.chunk(label, v.to_string().as_bytes());
        self
    }

    pub fn text(mut self, label: &str, text: &str) -> Self {
        self.chunk(label, text.as_bytes());
        self
    }

    pub fn tensor(mut self, label: &str, t: &Tensor) -> Self {
        self.chunk(label, &t.to_mvdt_bytes());
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}
