//! Run configuration (TOML) and the manifest sidecar stamped on every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ChunkParams;
use crate::embed::HttpEmbedderConfig;
use crate::eval::Thresholds;
use crate::io::{self, short_hash, IoError};
use crate::retrieval::{ChatReaderConfig, PatientScore, ReadConfig};
use crate::synthgen::GeneratorParams;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderChoice {
    Builtin { d: usize, seed: u64 },
    External(HttpEmbedderConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReaderChoice {
    Mock,
    External(ChatReaderConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Where `synth` writes and the other commands read benchmark inputs.
    pub data_dir: PathBuf,
    /// Where indices, KBs, cohorts and reports go.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub chunk_size: usize,
    pub overlap: usize,
    pub top_k_chunks: usize,
    /// How the retriever ranks patients from their chunk scores.
    pub patient_score: PatientScore,
    pub alpha: usize,
    pub beta: usize,
    pub max_reader_calls: usize,
    pub context_budget: usize,
    pub embedder: EmbedderChoice,
    pub reader: ReaderChoice,
    pub seed: u64,
    pub paths: Paths,
    pub generator: GeneratorParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            chunk_size: 1000,
            overlap: 100,
            top_k_chunks: 1000,
            patient_score: PatientScore::Max,
            alpha: 50,
            beta: 10,
            max_reader_calls: 3,
            context_budget: 128_000,
            embedder: EmbedderChoice::Builtin { d: 256, seed: 42 },
            reader: ReaderChoice::Mock,
            seed: 42,
            paths: Paths::default(),
            generator: GeneratorParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.chunk_params()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.thresholds()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.top_k_chunks == 0 || self.max_reader_calls == 0 || self.context_budget == 0 {
            return Err(ConfigError::Invalid(
                "top_k_chunks, max_reader_calls and context_budget must be positive".into(),
            ));
        }
        if let EmbedderChoice::Builtin { d, .. } = self.embedder {
            if d < 2 {
                return Err(ConfigError::Invalid(format!("embedder dimension {d} < 2")));
            }
        }
        self.generator
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn chunk_params(&self) -> ChunkParams {
        ChunkParams {
            chunk_size: self.chunk_size,
            overlap: self.overlap,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn read_config(&self, jobs: Option<usize>) -> ReadConfig {
        ReadConfig {
            max_calls: self.max_reader_calls,
            context_budget: self.context_budget,
            parallelism: jobs,
            ..ReadConfig::default()
        }
    }

    /// Hash of the canonical JSON form; paths are excluded so moving a run
    /// directory keeps its hash.
    pub fn config_hash(&self) -> String {
        let mut canon = self.clone();
        canon.paths = Paths::default();
        short_hash(&serde_json::to_vec(&canon).expect("config serializes"))
    }
}

/// Provenance stamp written next to every set of artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Reader prompt template hash, for directories holding read results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    /// File name to content hash.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config.config_hash(),
            seed: config.seed,
            prompt_hash: None,
            artifacts: BTreeMap::new(),
        }
    }

    /// Hashes `dir/name` and records it.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<(), IoError> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| IoError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.artifacts.insert(name.to_string(), io::sha256_hex(&bytes));
        Ok(())
    }

    /// Merges into any manifest already in `dir` and writes it back.
    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        let path = dir.join(MANIFEST_FILE);
        let mut merged = match Manifest::read(dir) {
            Ok(Some(old)) if old.config_hash == self.config_hash => old,
            _ => Manifest {
                artifacts: BTreeMap::new(),
                ..self.clone()
            },
        };
        merged.tool_version = self.tool_version.clone();
        merged.seed = self.seed;
        if self.prompt_hash.is_some() {
            merged.prompt_hash = self.prompt_hash.clone();
        }
        merged.artifacts.extend(self.artifacts.clone());
        io::write_json_pretty(&path, &merged)
    }

    pub fn read(dir: &Path) -> Result<Option<Manifest>, IoError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        io::read_json(&path).map(Some)
    }
}
