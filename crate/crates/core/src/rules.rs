//! Compressibility rules for aggregation parents, per language.
//!
//! The rules file lists every property name the frontend may emit together
//! with its category and whether an aggregation headed by that name may be
//! merged. Names missing from the file are unknown; callers treat them as an
//! error rather than guessing.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::Language;

const BUILTIN_RULES: &str = include_str!("../data/rules.json");

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("rules file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("rules file: unsupported version {0}")]
    Version(u32),
    #[error("rules file has no ruleset for language `{0}`")]
    MissingLanguage(Language),
    #[error("rules file lists `{0}` more than once")]
    Duplicate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Expression,
    Statement,
    Declaration,
    ParameterInitializer,
    Type,
    SpecifierModifier,
    Argument,
    Other,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NameRule {
    pub name: String,
    pub category: Category,
    pub compressible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RulesetRecord {
    language: Language,
    call_names: Vec<String>,
    names: Vec<NameRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RulesFile {
    version: u32,
    rulesets: Vec<RulesetRecord>,
}

/// The per-language table of property names.
#[derive(Debug, Clone)]
pub struct CompressRuleset {
    pub language: Language,
    /// Property names that mark a call site (`FunctionCallExpression`, ...).
    pub call_names: Vec<String>,
    names: BTreeMap<String, NameRule>,
}

impl CompressRuleset {
    fn from_record(rec: RulesetRecord) -> Result<Self, RulesError> {
        let mut names = BTreeMap::new();
        for rule in rec.names {
            let key = rule.name.clone();
            if names.insert(key.clone(), rule).is_some() {
                return Err(RulesError::Duplicate(key));
            }
        }
        Ok(CompressRuleset {
            language: rec.language,
            call_names: rec.call_names,
            names,
        })
    }

    /// Parse one ruleset object (`{language, call_names, names}`).
    pub fn from_json(text: &str) -> Result<Self, RulesError> {
        #[derive(Deserialize)]
        struct Single {
            #[serde(default)]
            version: Option<u32>,
            #[serde(flatten)]
            record: RulesetRecord,
        }
        let single: Single = serde_json::from_str(text)?;
        if let Some(v) = single.version.filter(|v| *v != 1) {
            return Err(RulesError::Version(v));
        }
        Self::from_record(single.record)
    }

    /// The shipped C rules.
    pub fn builtin_c() -> &'static CompressRuleset {
        static C: OnceLock<CompressRuleset> = OnceLock::new();
        C.get_or_init(|| RuleBook::builtin().get(Language::C).expect("builtin C rules").clone())
    }

    /// The shipped Java rules.
    pub fn builtin_java() -> &'static CompressRuleset {
        static JAVA: OnceLock<CompressRuleset> = OnceLock::new();
        JAVA.get_or_init(|| RuleBook::builtin().get(Language::Java).expect("builtin Java rules").clone())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains_key(name)
    }

    pub fn rule(&self, name: &str) -> Option<&NameRule> {
        self.names.get(name)
    }

    /// `None` when the name is unknown.
    pub fn is_compressible(&self, name: &str) -> Option<bool> {
        self.names.get(name).map(|r| r.compressible)
    }

    pub fn is_call_name(&self, name: &str) -> bool {
        self.call_names.iter().any(|c| c == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &NameRule> {
        self.names.values()
    }
}

/// All rulesets from one rules file, keyed by language.
#[derive(Debug, Clone)]
pub struct RuleBook {
    rulesets: Vec<CompressRuleset>,
}

impl RuleBook {
    pub fn from_json(text: &str) -> Result<Self, RulesError> {
        let file: RulesFile = serde_json::from_str(text)?;
        if file.version != 1 {
            return Err(RulesError::Version(file.version));
        }
        let rulesets = file
            .rulesets
            .into_iter()
            .map(CompressRuleset::from_record)
            .collect::<Result<_, _>>()?;
        Ok(RuleBook { rulesets })
    }

    pub fn load(path: &Path) -> Result<Self, RulesError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn builtin() -> &'static RuleBook {
        static BOOK: OnceLock<RuleBook> = OnceLock::new();
        BOOK.get_or_init(|| RuleBook::from_json(BUILTIN_RULES).expect("builtin rules file is valid"))
    }

    pub fn builtin_json() -> &'static str {
        BUILTIN_RULES
    }

    pub fn get(&self, language: Language) -> Result<&CompressRuleset, RulesError> {
        self.rulesets
            .iter()
            .find(|r| r.language == language)
            .ok_or(RulesError::MissingLanguage(language))
    }
}
