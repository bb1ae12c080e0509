//! Language-agnostic AST interchange files.
//!
//! ```json
//! {"version": 1, "routines": [
//!   {"name": "f", "language": "c", "root": 0,
//!    "nodes": [{"id": 0, "kind": "property", "label": "FunctionDefinition", "children": [1]},
//!              {"id": 1, "kind": "token", "label": "f", "children": [], "line": 1, "col": 5}]}
//! ]}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ast, AstNode, AstNodeKind, FrontendError, Language, RoutineCorpus};

pub const INTERCHANGE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterchangeFile {
    version: u32,
    routines: Vec<RoutineRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoutineRecord {
    name: String,
    language: Language,
    nodes: Vec<NodeRecord>,
    root: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: u32,
    kind: AstNodeKind,
    label: String,
    children: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    line: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    col: Option<u32>,
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, col: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + col.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}

/// Parse and validate interchange text.
pub fn parse_interchange(text: &str) -> Result<RoutineCorpus, FrontendError> {
    let file: InterchangeFile = serde_json::from_str(text).map_err(|e| FrontendError::Interchange {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if file.version != INTERCHANGE_VERSION {
        return Err(FrontendError::Interchange {
            offset: 0,
            message: format!("unsupported version {}", file.version),
        });
    }
    let mut asts = Vec::with_capacity(file.routines.len());
    for r in file.routines {
        let nodes: Vec<AstNode> = r
            .nodes
            .into_iter()
            .map(|n| AstNode {
                id: n.id,
                kind: n.kind,
                label: n.label,
                children: n.children,
                span: n.line.map(|line| (line, n.col.unwrap_or(0))),
            })
            .collect();
        let mut ast = Ast {
            nodes,
            root: r.root,
            routine_name: r.name,
            language: r.language,
            source_hash: String::new(),
        };
        ast.validate()?;
        ast.source_hash = super::digest_tokens(ast.token_frontier().iter().map(|(_, l)| l.as_str()));
        asts.push(ast);
    }
    Ok(RoutineCorpus::new(asts))
}

pub fn load_ast_interchange(path: &Path) -> Result<RoutineCorpus, FrontendError> {
    parse_interchange(&std::fs::read_to_string(path)?)
}

/// Serialize ASTs to interchange text.
pub fn export_interchange(asts: &[Ast]) -> String {
    let file = InterchangeFile {
        version: INTERCHANGE_VERSION,
        routines: asts
            .iter()
            .map(|a| RoutineRecord {
                name: a.routine_name.clone(),
                language: a.language,
                root: a.root,
                nodes: a
                    .nodes
                    .iter()
                    .map(|n| NodeRecord {
                        id: n.id,
                        kind: n.kind,
                        label: n.label.clone(),
                        children: n.children.clone(),
                        line: n.span.map(|s| s.0),
                        col: n.span.map(|s| s.1),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("interchange records serialize")
}
