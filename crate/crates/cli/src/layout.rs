//! Directory layout of an experiment's output tree.

use std::fs;
use std::path::{Path, PathBuf};

use noisylab::models::FrameworkKind;
use noisylab::training::{EncoderMode, LabelSource};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{label_name, mode_name, InitSource};
use crate::error::CliError;

pub const CHECKPOINT: &str = "checkpoint.nlckpt";
pub const RUNLOG: &str = "runlog.jsonl";
pub const RUN_CONFIG: &str = "config.json";
pub const RUN_HASH: &str = "config.sha256";

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn noise_file(&self) -> PathBuf {
        self.corpus().join("noise.json")
    }

    pub fn assess(&self) -> PathBuf {
        self.root.join("assess")
    }

    pub fn pretrain_run(&self, label: LabelSource, seed: u64) -> PathBuf {
        self.root.join("pretrain").join(label_name(label)).join(format!("seed{seed}"))
    }

    pub fn finetune_run(&self, init: InitSource, kind: FrameworkKind, mode: EncoderMode, seed: u64) -> PathBuf {
        self.root.join("finetune").join(init.name()).join(kind.name()).join(mode_name(mode)).join(format!("seed{seed}"))
    }

    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::write(path, e))?;
    written.push(path.to_path_buf());
    Ok(())
}

pub fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|_| CliError::missing(path, what))
}

/// Writes the resolved run configuration and the SHA-256 of its bytes.
pub fn write_run_config<T: Serialize>(dir: &Path, resolved: &T, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(resolved).expect("run config serializes") + "\n";
    let hash = hex_sha256(text.as_bytes());
    write_file(&dir.join(RUN_CONFIG), &text, written)?;
    write_file(&dir.join(RUN_HASH), hash + "\n", written)
}
