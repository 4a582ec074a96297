//! `run.txt`: enough to repeat a command exactly.
//!
//! ```text
//! command=train
//! fingerprint=<config fingerprint>
//! seed=<primary seed of the command>
//! version=amid 0.1.0
//! deterministic=true
//! threads=1
//! input.data=/abs/path
//! note.t1=27
//! wall_time=12.345
//! [config]
//! <canonical RunConfig>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::CliError;

pub const RUN_FILE: &str = "run.txt";
const CONFIG_MARKER: &str = "[config]";

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub command: String,
    pub seed: u64,
    pub deterministic: bool,
    pub inputs: BTreeMap<String, PathBuf>,
    /// Derived values worth recording (estimated σ, chosen t₁, ...).
    pub notes: BTreeMap<String, String>,
    pub config: RunConfig,
}

impl RunRecord {
    pub fn new(command: &str, seed: u64, deterministic: bool, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            seed,
            deterministic,
            inputs: BTreeMap::new(),
            notes: BTreeMap::new(),
            config: config.clone(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<(), CliError> {
        let abs = fs::canonicalize(path).map_err(|e| CliError::from_io(path, e))?;
        self.inputs.insert(name.to_string(), abs);
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.insert(key.to_string(), value.to_string());
    }

    pub fn write(&self, dir: &Path, wall_time: f64) -> Result<(), CliError> {
        let mut lines = vec![
            format!("command={}", self.command),
            format!("fingerprint={}", self.config.fingerprint()),
            format!("seed={}", self.seed),
            format!("version=amid {}", env!("CARGO_PKG_VERSION")),
            format!("deterministic={}", self.deterministic),
            format!("threads={}", amid::parallel::worker_threads()),
        ];
        for (k, p) in &self.inputs {
            lines.push(format!("input.{k}={}", p.display()));
        }
        for (k, v) in &self.notes {
            lines.push(format!("note.{k}={v}"));
        }
        lines.push(format!("wall_time={wall_time:.3}"));
        lines.push(CONFIG_MARKER.to_string());
        let mut text = lines.join("\n");
        text.push('\n');
        text.push_str(&self.config.canonical());
        fs::write(dir.join(RUN_FILE), text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        let (head, config_text) = text
            .split_once(&format!("\n{CONFIG_MARKER}\n"))
            .ok_or_else(|| CliError::Parse {
                line: None,
                msg: format!("{}: no {CONFIG_MARKER} section", path.display()),
            })?;
        let config = RunConfig::parse(config_text, &[]).map_err(|e| match e {
            // report lines relative to run.txt
            CliError::Parse { line: Some(l), msg } => CliError::Parse {
                line: Some(l + head.lines().count() + 1),
                msg,
            },
            other => other,
        })?;
        let mut rec = RunRecord::new("", 0, false, &config);
        let mut fingerprint = None;
        for (n, line) in head.lines().enumerate() {
            let bad = |msg: String| CliError::Parse { line: Some(n + 1), msg };
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value".into()))?;
            match k {
                "command" => rec.command = v.to_string(),
                "seed" => rec.seed = v.parse().map_err(|_| bad(format!("seed `{v}`")))?,
                "deterministic" => rec.deterministic = v.parse().map_err(|_| bad(format!("deterministic `{v}`")))?,
                "fingerprint" => fingerprint = Some(v.to_string()),
                _ => {
                    if let Some(name) = k.strip_prefix("input.") {
                        rec.inputs.insert(name.to_string(), PathBuf::from(v));
                    } else if let Some(name) = k.strip_prefix("note.") {
                        rec.notes.insert(name.to_string(), v.to_string());
                    }
                }
            }
        }
        if rec.command.is_empty() {
            return Err(CliError::Parse {
                line: None,
                msg: format!("{}: no command", path.display()),
            });
        }
        if fingerprint.as_deref() != Some(config.fingerprint().as_str()) {
            return Err(CliError::Config(format!(
                "{}: config does not match its fingerprint",
                path.display()
            )));
        }
        Ok(rec)
    }
}
