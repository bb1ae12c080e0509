//! TOML manifests for `ipag e2e`.
//!
//! ```toml
//! inputs = ["src/*.c", "asts/*.json"]
//! labels = "labels.tsv"
//! output = "out"
//! seed = 7
//! folds = 5
//!
//! [embedder]
//! mode = "hash"
//! width = 64
//!
//! [model]
//! hidden = 32
//!
//! [[expect]]
//! routine = "dump_relocs"
//! counts = { tokens = 9, properties = 20 }
//! ```
//!
//! Relative paths are resolved against the manifest's directory. Inputs
//! ending in `.json` are AST interchange files; anything else is mini-C.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ipag::embed::{EmbedMode, DEFAULT_TEXT_WIDTH};
use ipag::hagnn::HagnnConfig;
use ipag::ipag::Stage;
use ipag::link::DEFAULT_MAX_CALL_DEPTH;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSection {
    #[serde(default = "hash_mode")]
    pub mode: EmbedMode,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "text_width")]
    pub width: usize,
    #[serde(default)]
    pub strict: bool,
}

fn hash_mode() -> EmbedMode {
    EmbedMode::Hash
}

fn text_width() -> usize {
    DEFAULT_TEXT_WIDTH
}

fn call_depth() -> usize {
    DEFAULT_MAX_CALL_DEPTH
}

fn yes() -> bool {
    true
}

fn preliminary() -> Stage {
    Stage::Preliminary
}

impl Default for EmbedderSection {
    fn default() -> Self {
        EmbedderSection {
            mode: EmbedMode::Hash,
            endpoint: None,
            width: DEFAULT_TEXT_WIDTH,
            strict: false,
        }
    }
}

/// Expected graph counts for one routine at one stage. Keys are the
/// `IpagCounts` field names (`tokens`, `pd`, ...).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub routine: String,
    #[serde(default = "preliminary")]
    pub stage: Stage,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub inputs: Vec<String>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub embedder: EmbedderSection,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Write every intermediate stage file.
    #[serde(default = "yes")]
    pub checkpoints: bool,
    #[serde(default = "call_depth")]
    pub max_call_depth: usize,
    #[serde(default)]
    pub folds: Option<usize>,
    #[serde(default)]
    pub model: HagnnConfig,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

/// A manifest with paths resolved and inputs expanded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub manifest: Manifest,
    pub sources: Vec<PathBuf>,
    pub interchange: Vec<PathBuf>,
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Expand a glob pattern relative to `base`; a plain path must exist.
pub fn expand(base: &Path, pattern: &str) -> Result<Vec<PathBuf>, CliError> {
    let full = resolve_path(base, Path::new(pattern));
    let text = full.to_string_lossy();
    let paths = glob::glob(&text).map_err(|e| CliError::Usage(format!("bad input pattern `{pattern}`: {e}")))?;
    let mut found: Vec<PathBuf> = paths.filter_map(Result::ok).filter(|p| p.is_file()).collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::Input {
            path: full,
            message: "input pattern matches no files".into(),
        });
    }
    Ok(found)
}

pub fn load(path: &Path) -> Result<Resolved, CliError> {
    let text = crate::artifacts::read_text(path)?;
    let mut manifest: Manifest = toml::from_str(&text).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: format!("malformed manifest: {e}"),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    if manifest.inputs.is_empty() {
        return Err(CliError::Input {
            path: path.to_path_buf(),
            message: "manifest lists no inputs".into(),
        });
    }
    let (mut sources, mut interchange) = (Vec::new(), Vec::new());
    for pattern in &manifest.inputs {
        for p in expand(base, pattern)? {
            if p.extension().is_some_and(|e| e == "json") {
                interchange.push(p);
            } else {
                sources.push(p);
            }
        }
    }
    for p in [&mut manifest.labels, &mut manifest.rules].into_iter().flatten() {
        *p = resolve_path(base, p);
        if !p.is_file() {
            return Err(CliError::Input {
                path: p.clone(),
                message: "referenced file does not exist".into(),
            });
        }
    }
    manifest.output = resolve_path(base, &manifest.output);
    manifest.model.seed = manifest.seed;
    manifest.model.validate().map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: format!("invalid [model] section: {e}"),
    })?;
    let known = ["tokens", "properties", "declarations", "pd", "pp", "tp", "tt", "td", "dt"];
    for e in &manifest.expect {
        if let Some(k) = e.counts.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(CliError::Input {
                path: path.to_path_buf(),
                message: format!("unknown count `{k}` for routine `{}`", e.routine),
            });
        }
    }
    Ok(Resolved {
        manifest,
        sources,
        interchange,
    })
}
