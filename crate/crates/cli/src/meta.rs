//! Provenance sidecars. Every artifact `X` gets `X.meta` (a dataset
//! directory gets `dataset.meta` inside it) listing its kind, the hash of
//! the resolved config that produced it, fingerprints of its inputs, and the
//! resolved config itself.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use list_core::binio::atomic_write;
use list_core::data::DATASET_FILES;
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};

pub const DATASET_META: &str = "dataset.meta";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Meta {
    pub kind: String,
    pub config_hash: String,
    /// Input role → fingerprint of that input.
    pub inputs: BTreeMap<String, String>,
    pub config: Vec<(String, String)>,
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        return artifact.join(DATASET_META);
    }
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta");
    artifact.with_file_name(name)
}

/// SHA-256 of a file's bytes.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("{}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// SHA-256 over the dataset files, each prefixed by its name.
pub fn dataset_fingerprint(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in DATASET_FILES {
        let p = dir.join(name);
        let bytes = std::fs::read(&p).with_context(|| format!("{}", p.display()))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex(&h.finalize()))
}

impl Meta {
    pub fn new(kind: &str, config: &RunConfig) -> Self {
        Self {
            kind: kind.into(),
            config_hash: config.hash(),
            inputs: BTreeMap::new(),
            config: config
                .pairs()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    pub fn with_input(mut self, role: &str, fingerprint: String) -> Self {
        self.inputs.insert(role.into(), fingerprint);
        self
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind={}", self.kind);
        let _ = writeln!(s, "config_hash={}", self.config_hash);
        for (role, fp) in &self.inputs {
            let _ = writeln!(s, "input.{role}={fp}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Meta::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key=value", i + 1))?;
            if k == "kind" {
                m.kind = v.into();
            } else if k == "config_hash" {
                m.config_hash = v.into();
            } else if let Some(role) = k.strip_prefix("input.") {
                m.inputs.insert(role.into(), v.into());
            } else if let Some(key) = k.strip_prefix("config.") {
                m.config.push((key.into(), v.into()));
            } else {
                bail!("line {}: unknown metadata key {k:?}", i + 1);
            }
        }
        if m.kind.is_empty() || m.config_hash.is_empty() {
            bail!("metadata lacks kind or config_hash");
        }
        Ok(m)
    }

    pub fn write_for(&self, artifact: &Path) -> Result<()> {
        let path = sidecar_path(artifact);
        atomic_write(&path, |w| {
            w.write_all(self.to_text().as_bytes())
                .map_err(|e| list_core::Error::Io {
                    path: path.clone(),
                    source: e,
                })
        })?;
        Ok(())
    }

    /// Reads the sidecar of `artifact` (supplied via `flag`) and checks its
    /// kind.
    pub fn read_for(artifact: &Path, flag: &str, kind: &str) -> Result<Self> {
        let path = sidecar_path(artifact);
        let text = std::fs::read_to_string(&path).with_context(|| {
            format!(
                "{flag} {}: missing metadata {}",
                artifact.display(),
                path.display()
            )
        })?;
        let m = Self::parse(&text).with_context(|| format!("{}", path.display()))?;
        if m.kind != kind {
            bail!(
                "{flag} {}: expected a {kind} artifact, found {}",
                artifact.display(),
                m.kind
            );
        }
        Ok(m)
    }

    /// Errors unless this artifact was derived from an input with the given
    /// fingerprint.
    pub fn require_input(&self, role: &str, fingerprint: &str, what: &str) -> Result<()> {
        match self.inputs.get(role) {
            Some(fp) if fp == fingerprint => Ok(()),
            Some(_) => bail!("{what} was produced from a different {role} (config mismatch)"),
            None => bail!("{what} does not record its {role}"),
        }
    }
}
