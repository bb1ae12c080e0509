//! Routine labels: one `routine_name<TAB>0|1` line per routine.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub routine: String,
    pub first_line: usize,
    pub second_line: usize,
}

#[derive(Debug, Error)]
pub enum LabelsError {
    #[error("cannot read labels: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `routine<TAB>0|1`, found `{text}`")]
    Malformed { line: usize, text: String },
    #[error("conflicting labels: {}", list(.0))]
    Conflicts(Vec<Conflict>),
}

fn list(conflicts: &[Conflict]) -> String {
    conflicts
        .iter()
        .map(|c| format!("`{}` on lines {} and {}", c.routine, c.first_line, c.second_line))
        .collect::<Vec<_>>()
        .join("; ")
}

/// `true` marks a vulnerable routine. Blank lines and `#` comments are
/// skipped; a repeated routine with the same label is accepted.
pub fn parse_labels(text: &str) -> Result<BTreeMap<String, bool>, LabelsError> {
    let mut labels: BTreeMap<String, (bool, usize)> = BTreeMap::new();
    let mut conflicts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || row.starts_with('#') {
            continue;
        }
        let malformed = || LabelsError::Malformed {
            line,
            text: row.to_string(),
        };
        let (name, value) = row.split_once('\t').ok_or_else(malformed)?;
        let name = name.trim();
        let vulnerable = match value.trim() {
            "1" => true,
            "0" => false,
            _ => return Err(malformed()),
        };
        if name.is_empty() {
            return Err(malformed());
        }
        match labels.get(name) {
            Some(&(prev, first_line)) if prev != vulnerable => conflicts.push(Conflict {
                routine: name.to_string(),
                first_line,
                second_line: line,
            }),
            Some(_) => {}
            None => {
                labels.insert(name.to_string(), (vulnerable, line));
            }
        }
    }
    if !conflicts.is_empty() {
        return Err(LabelsError::Conflicts(conflicts));
    }
    Ok(labels.into_iter().map(|(k, (v, _))| (k, v)).collect())
}

pub fn load_labels(path: &Path) -> Result<BTreeMap<String, bool>, LabelsError> {
    parse_labels(&std::fs::read_to_string(path)?)
}
