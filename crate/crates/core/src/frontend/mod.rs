//! Routine ASTs: the mini-C frontend, the interchange format, and the
//! structural checks every AST must pass before graph construction.

pub mod interchange;
pub mod lexer;
pub mod parser;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use interchange::{export_interchange, load_ast_interchange, parse_interchange};
pub use parser::{parse_mini_c, parse_mini_c_with_vocabulary};

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: u32, col: u32, message: String },
    #[error("unsupported construct `{construct}` at {line}:{col}")]
    Unsupported { construct: String, line: u32, col: u32 },
    #[error("property label `{label}` is not in the vocabulary")]
    UnknownLabel { label: String },
    #[error("malformed interchange file at byte {offset}: {message}")]
    Interchange { offset: usize, message: String },
    #[error("invalid AST `{routine}`, node {node}: {rule}")]
    Validation { routine: String, node: u32, rule: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AstNodeKind {
    Property,
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    C,
    Java,
    Other,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::C => "c",
            Language::Java => "java",
            Language::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub id: u32,
    pub kind: AstNodeKind,
    pub label: String,
    pub children: Vec<u32>,
    pub span: Option<(u32, u32)>,
}

/// A routine's syntax tree. Node ids equal their index in `nodes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ast {
    pub nodes: Vec<AstNode>,
    pub root: u32,
    pub routine_name: String,
    pub language: Language,
    pub source_hash: String,
}

/// Labels of subtrees that hold a routine's body rather than its signature.
const BODY_LABELS: &[&str] = &["CompoundStatement", "BlockStmt", "Block", "body"];

impl Ast {
    /// Assemble an AST and compute its digest from the token frontier.
    pub fn new(nodes: Vec<AstNode>, root: u32, routine_name: String, language: Language) -> Self {
        let mut ast = Ast {
            nodes,
            root,
            routine_name,
            language,
            source_hash: String::new(),
        };
        ast.source_hash = digest_tokens(ast.token_frontier().iter().map(|(_, l)| l.as_str()));
        ast
    }

    pub fn node(&self, id: u32) -> &AstNode {
        &self.nodes[id as usize]
    }

    /// Terminal nodes in left-to-right order.
    pub fn token_frontier(&self) -> Vec<(u32, String)> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let Some(node) = self.nodes.get(id as usize) else { continue };
            match node.kind {
                AstNodeKind::Token => out.push((id, node.label.clone())),
                AstNodeKind::Property => stack.extend(node.children.iter().rev()),
            }
        }
        out
    }

    /// Tokens of the routine's signature, i.e. everything outside its body.
    pub fn signature(&self) -> String {
        let root = self.node(self.root);
        let mut parts = Vec::new();
        for &child in &root.children {
            let node = self.node(child);
            if node.kind == AstNodeKind::Property && BODY_LABELS.contains(&node.label.as_str()) {
                continue;
            }
            let mut stack = vec![child];
            while let Some(id) = stack.pop() {
                let n = self.node(id);
                match n.kind {
                    AstNodeKind::Token => parts.push(n.label.clone()),
                    AstNodeKind::Property => stack.extend(n.children.iter().rev()),
                }
            }
        }
        if parts.is_empty() {
            self.routine_name.clone()
        } else {
            parts.join(" ")
        }
    }

    /// Check the tree invariants, reporting the first violation found.
    pub fn validate(&self) -> Result<(), FrontendError> {
        let fail = |node: u32, rule: &'static str| FrontendError::Validation {
            routine: self.routine_name.clone(),
            node,
            rule,
        };
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.id as usize != idx {
                return Err(fail(node.id, "ids must be dense from 0"));
            }
        }
        let root = self
            .nodes
            .get(self.root as usize)
            .ok_or_else(|| fail(self.root, "root id does not exist"))?;
        if root.kind != AstNodeKind::Property {
            return Err(fail(self.root, "root must be a property node"));
        }
        let mut parents = vec![0u32; self.nodes.len()];
        for node in &self.nodes {
            if node.kind == AstNodeKind::Token && !node.children.is_empty() {
                return Err(fail(node.id, "token nodes have zero children"));
            }
            for &c in &node.children {
                if c as usize >= self.nodes.len() {
                    return Err(fail(node.id, "child references an unknown node"));
                }
                parents[c as usize] += 1;
            }
        }
        for node in &self.nodes {
            let expected = if node.id == self.root { 0 } else { 1 };
            if parents[node.id as usize] != expected {
                return Err(fail(
                    node.id,
                    if node.id == self.root {
                        "root must not have a parent"
                    } else {
                        "every non-root node has exactly one parent"
                    },
                ));
            }
        }
        // With one parent per node, reachability from the root rules out
        // both cycles and disconnected parts.
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id as usize], true) {
                return Err(fail(id, "graph must be acyclic"));
            }
            stack.extend(&self.node(id).children);
        }
        if let Some(idx) = seen.iter().position(|s| !s) {
            return Err(fail(idx as u32, "graph must be connected"));
        }
        Ok(())
    }
}

/// Hex SHA-256 over the space-joined token sequence.
pub fn digest_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> String {
    let mut hasher = Sha256::new();
    for (i, t) in tokens.into_iter().enumerate() {
        if i > 0 {
            hasher.update(b" ");
        }
        hasher.update(t.as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Terminal nodes of `ast` in source order.
pub fn token_frontier(ast: &Ast) -> Vec<(u32, String)> {
    ast.token_frontier()
}

/// A set of routines with a name index.
#[derive(Debug, Clone, Default)]
pub struct RoutineCorpus {
    pub asts: Vec<Ast>,
    index: BTreeMap<String, usize>,
}

impl RoutineCorpus {
    /// Build the corpus index; a later definition of a name replaces an
    /// earlier one.
    pub fn new(asts: Vec<Ast>) -> Self {
        let mut index = BTreeMap::new();
        for (i, ast) in asts.iter().enumerate() {
            if let Some(prev) = index.insert(ast.routine_name.clone(), i) {
                log::warn!(
                    "routine `{}` defined more than once (#{prev} and #{i}); the last definition wins",
                    ast.routine_name
                );
            }
        }
        RoutineCorpus { asts, index }
    }

    pub fn len(&self) -> usize {
        self.asts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.asts.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Ast> {
        self.index.get(name).map(|&i| &self.asts[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }
}
