//! Reading and atomically writing pipeline artifacts.

use std::io::Write;
use std::path::{Path, PathBuf};

use ipag::embed::{EmbeddedGraph, PropertyVocabulary};
use ipag::hagnn::EmbedSettings;
use ipag::ipag::{corpus_from_json, corpus_to_json, CorpusFileError, Ipag, Stage};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const EMBEDDED_TAG: &str = "embedded";
pub const EMBEDDED_VERSION: u32 = 1;

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// JSON to `path`, or to standard output without one.
pub fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?);
            Ok(())
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The subcommand whose output has `stage`.
fn producer(stage: Stage) -> &'static str {
    match stage {
        Stage::Preliminary => "build-ipag",
        Stage::SequenceReduced | Stage::AggregationReduced => "compress",
        Stage::Complete => "link",
    }
}

/// Load a graph file whose stage tag is one of `accept`.
pub fn read_graphs(path: &Path, accept: &[Stage]) -> Result<Vec<Ipag>, CliError> {
    let text = read_text(path)?;
    corpus_from_json(&text, accept).map_err(|e| {
        let hint = match &e {
            CorpusFileError::Stage { .. } => format!(" (run {} first)", producer(accept[0])),
            _ => String::new(),
        };
        CliError::Input {
            path: path.to_path_buf(),
            message: format!("{e}{hint}"),
        }
    })
}

pub fn write_graphs(path: &Path, stage: Stage, graphs: &[Ipag]) -> Result<(), CliError> {
    write_atomic(path, corpus_to_json(stage, graphs).as_bytes())
}

/// Model-ready graphs with the settings that produced them.
#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddedFile {
    pub version: u32,
    pub stage: String,
    pub embed: EmbedSettings,
    pub vocab: PropertyVocabulary,
    pub graphs: Vec<EmbeddedGraph>,
}

impl EmbeddedFile {
    pub fn new(embed: EmbedSettings, vocab: PropertyVocabulary, graphs: Vec<EmbeddedGraph>) -> Self {
        EmbeddedFile {
            version: EMBEDDED_VERSION,
            stage: EMBEDDED_TAG.to_string(),
            embed,
            vocab,
            graphs,
        }
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let input = |message: String| CliError::Input {
            path: path.to_path_buf(),
            message,
        };
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| input(format!("malformed JSON: {e}")))?;
        match value.get("stage").and_then(|s| s.as_str()) {
            Some(EMBEDDED_TAG) => {}
            Some(other) => {
                return Err(input(format!(
                    "file holds stage `{other}`, expected `{EMBEDDED_TAG}` (run embed first)"
                )))
            }
            None => return Err(input("not a stage-tagged artifact".into())),
        }
        let file: EmbeddedFile = serde_json::from_value(value).map_err(|e| input(format!("malformed embedded file: {e}")))?;
        if file.version != EMBEDDED_VERSION {
            return Err(input(format!("unsupported embedded file version {}", file.version)));
        }
        Ok(file)
    }
}
