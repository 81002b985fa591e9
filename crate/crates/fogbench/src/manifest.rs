//! Run manifests: a key=value record of everything a run needs to be
//! reproduced.
//!
//! Every training or evaluation run writes `run_manifest.txt` into its
//! output directory before any computation starts, then rewrites it with
//! the end timestamp on success. Bookkeeping keys carry a `run.` prefix;
//! every other key is a resolved command-line flag, so the manifest
//! doubles as a `--config` file for re-running the same configuration.

use crate::error::{Error, Result};
use std::fmt::Display;
use std::path::Path;

pub const MANIFEST_FILE: &str = "run_manifest.txt";

const KEY_SUBCOMMAND: &str = "run.subcommand";
const KEY_VERSION: &str = "run.version";
const KEY_STARTED: &str = "run.started";
const KEY_FINISHED: &str = "run.finished";

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

// ── config files ──

/// Parsed key=value file. `run.*` bookkeeping keys are split out so the
/// remaining entries map one-to-one onto command-line flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigFile {
    pub subcommand: Option<String>,
    pub entries: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Reads a key=value config file. Blank lines and `#` comments are
/// skipped; values may contain `=`; duplicate keys are rejected.
pub fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut subcommand = None;
    let mut entries: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Config(format!(
                "{}:{}: empty key",
                path.display(),
                lineno + 1
            )));
        }
        if key == KEY_SUBCOMMAND {
            subcommand = Some(value.to_string());
        } else if key.starts_with("run.") {
            continue;
        } else {
            if entries.iter().any(|(k, _)| k == key) {
                return Err(Error::Config(format!(
                    "{}:{}: duplicate key {key:?}",
                    path.display(),
                    lineno + 1
                )));
            }
            entries.push((key.to_string(), value.to_string()));
        }
    }
    Ok(ConfigFile {
        subcommand,
        entries,
    })
}

// ── run manifests ──

/// Self-describing run record: subcommand, tool version, start/end
/// timestamps, and the fully resolved configuration (defaults
/// materialized, all paths included) as flag-named entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub started: String,
    pub finished: Option<String>,
    pub entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: now_rfc3339(),
            finished: None,
            entries: Vec::new(),
        }
    }

    /// Appends one resolved flag. Keys must be unique, must not use the
    /// reserved `run.` prefix, and neither side may span lines.
    pub fn entry(&mut self, key: &str, value: impl Display) -> Result<&mut Self> {
        let value = value.to_string();
        if key.is_empty() || key.contains('=') || key.contains('\n') || key.starts_with("run.") {
            return Err(Error::Config(format!("invalid manifest key {key:?}")));
        }
        if value.contains('\n') {
            return Err(Error::Config(format!(
                "manifest value for {key:?} spans multiple lines"
            )));
        }
        if self.entries.iter().any(|(k, _)| k == key) {
            return Err(Error::Config(format!("duplicate manifest key {key:?}")));
        }
        self.entries.push((key.to_string(), value));
        Ok(self)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn render(&self) -> String {
        let mut out = String::from("# fogbench run manifest; reusable via --config\n");
        out.push_str(&format!("{KEY_SUBCOMMAND}={}\n", self.subcommand));
        out.push_str(&format!("{KEY_VERSION}={}\n", self.version));
        out.push_str(&format!("{KEY_STARTED}={}\n", self.started));
        if let Some(finished) = &self.finished {
            out.push_str(&format!("{KEY_FINISHED}={finished}\n"));
        }
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    /// Writes `run_manifest.txt` into `run_dir`, creating the directory.
    pub fn write(&self, run_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }

    /// Stamps the end timestamp and rewrites the manifest.
    pub fn finish(&mut self, run_dir: &Path) -> Result<()> {
        self.finished = Some(now_rfc3339());
        self.write(run_dir)
    }

    /// Parses a manifest written by [`RunManifest::write`].
    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = read_config(path)?;
        let subcommand = config.subcommand.ok_or_else(|| {
            Error::Config(format!("{}: missing {KEY_SUBCOMMAND}", path.display()))
        })?;
        let field = |key: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(&format!("{key}=")))
                .map(str::to_string)
        };
        let version = field(KEY_VERSION)
            .ok_or_else(|| Error::Config(format!("{}: missing {KEY_VERSION}", path.display())))?;
        let started = field(KEY_STARTED)
            .ok_or_else(|| Error::Config(format!("{}: missing {KEY_STARTED}", path.display())))?;
        Ok(RunManifest {
            subcommand,
            version,
            started,
            finished: field(KEY_FINISHED),
            entries: config.entries,
        })
    }
}
