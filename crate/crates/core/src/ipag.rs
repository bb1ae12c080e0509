//! The inter-procedural abstract graph and its preliminary construction.
//!
//! An IPAG holds three node sets (tokens, properties, declarations) and six
//! directed edge lists named after their endpoint types. AST edges are
//! reversed so that information flows from tokens up to the declaration.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{Ast, AstNodeKind, FrontendError, Language};

pub type NodeId = u32;
pub type Edge = (NodeId, NodeId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Token,
    Property,
    Declaration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Pd,
    Pp,
    Tp,
    Tt,
    Td,
    Dt,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 6] = [EdgeKind::Pd, EdgeKind::Pp, EdgeKind::Tp, EdgeKind::Tt, EdgeKind::Td, EdgeKind::Dt];

    /// Position in `ALL`, also the hot index of the edge's one-hot vector.
    pub fn index(self) -> usize {
        self as usize
    }

    /// (source kind, target kind).
    pub fn signature(self) -> (NodeKind, NodeKind) {
        use NodeKind::*;
        match self {
            EdgeKind::Pd => (Property, Declaration),
            EdgeKind::Pp => (Property, Property),
            EdgeKind::Tp => (Token, Property),
            EdgeKind::Tt => (Token, Token),
            EdgeKind::Td => (Token, Declaration),
            EdgeKind::Dt => (Declaration, Token),
        }
    }

    pub fn from_endpoints(source: NodeKind, target: NodeKind) -> Option<EdgeKind> {
        EdgeKind::ALL.into_iter().find(|k| k.signature() == (source, target))
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Pd => "e_pd",
            EdgeKind::Pp => "e_pp",
            EdgeKind::Tp => "e_tp",
            EdgeKind::Tt => "e_tt",
            EdgeKind::Td => "e_td",
            EdgeKind::Dt => "e_dt",
        }
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preliminary,
    SequenceReduced,
    AggregationReduced,
    Complete,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Preliminary => "preliminary",
            Stage::SequenceReduced => "sequence_reduced",
            Stage::AggregationReduced => "aggregation_reduced",
            Stage::Complete => "complete",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSets {
    pub pd: Vec<Edge>,
    pub pp: Vec<Edge>,
    pub tp: Vec<Edge>,
    pub tt: Vec<Edge>,
    pub td: Vec<Edge>,
    pub dt: Vec<Edge>,
}

impl EdgeSets {
    pub fn get(&self, kind: EdgeKind) -> &Vec<Edge> {
        match kind {
            EdgeKind::Pd => &self.pd,
            EdgeKind::Pp => &self.pp,
            EdgeKind::Tp => &self.tp,
            EdgeKind::Tt => &self.tt,
            EdgeKind::Td => &self.td,
            EdgeKind::Dt => &self.dt,
        }
    }

    pub fn get_mut(&mut self, kind: EdgeKind) -> &mut Vec<Edge> {
        match kind {
            EdgeKind::Pd => &mut self.pd,
            EdgeKind::Pp => &mut self.pp,
            EdgeKind::Tp => &mut self.tp,
            EdgeKind::Tt => &mut self.tt,
            EdgeKind::Td => &mut self.td,
            EdgeKind::Dt => &mut self.dt,
        }
    }

    pub fn total(&self) -> usize {
        EdgeKind::ALL.iter().map(|&k| self.get(k).len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EdgeKind, Edge)> + '_ {
        EdgeKind::ALL
            .into_iter()
            .flat_map(move |k| self.get(k).iter().map(move |&e| (k, e)))
    }
}

/// One routine's graph at some pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ipag {
    pub origin: String,
    pub language: Language,
    pub stage: Stage,
    /// The routine's own declaration node (callee clones add more).
    pub root: NodeId,
    pub tokens: BTreeMap<NodeId, String>,
    pub properties: BTreeMap<NodeId, String>,
    pub declarations: BTreeMap<NodeId, String>,
    pub edges: EdgeSets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IpagCounts {
    pub tokens: usize,
    pub properties: usize,
    pub declarations: usize,
    pub pd: usize,
    pub pp: usize,
    pub tp: usize,
    pub tt: usize,
    pub td: usize,
    pub dt: usize,
}

impl IpagCounts {
    pub fn nodes(&self) -> usize {
        self.tokens + self.properties + self.declarations
    }

    pub fn edges(&self) -> usize {
        self.pd + self.pp + self.tp + self.tt + self.td + self.dt
    }
}

impl Ipag {
    pub fn kind_of(&self, id: NodeId) -> Option<NodeKind> {
        if self.tokens.contains_key(&id) {
            Some(NodeKind::Token)
        } else if self.properties.contains_key(&id) {
            Some(NodeKind::Property)
        } else if self.declarations.contains_key(&id) {
            Some(NodeKind::Declaration)
        } else {
            None
        }
    }

    pub fn label(&self, id: NodeId) -> Option<&str> {
        self.tokens
            .get(&id)
            .or_else(|| self.properties.get(&id))
            .or_else(|| self.declarations.get(&id))
            .map(String::as_str)
    }

    pub fn node_count(&self) -> usize {
        self.tokens.len() + self.properties.len() + self.declarations.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.total()
    }

    pub fn counts(&self) -> IpagCounts {
        IpagCounts {
            tokens: self.tokens.len(),
            properties: self.properties.len(),
            declarations: self.declarations.len(),
            pd: self.edges.pd.len(),
            pp: self.edges.pp.len(),
            tp: self.edges.tp.len(),
            tt: self.edges.tt.len(),
            td: self.edges.td.len(),
            dt: self.edges.dt.len(),
        }
    }

    /// Smallest id above every node in the graph.
    pub fn next_id(&self) -> NodeId {
        [&self.tokens, &self.properties, &self.declarations]
            .iter()
            .filter_map(|m| m.keys().next_back())
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Token labels of one routine in `e_tt` order, starting from the first
    /// token attached to `decl`.
    pub fn routine_tokens(&self, decl: NodeId) -> Vec<String> {
        let own: HashSet<NodeId> = self.edges.td.iter().filter(|e| e.1 == decl).map(|e| e.0).collect();
        let next: HashMap<NodeId, NodeId> = self.edges.tt.iter().copied().collect();
        let has_prev: HashSet<NodeId> = self.edges.tt.iter().map(|e| e.1).collect();
        let Some(mut cur) = own.iter().copied().filter(|t| !has_prev.contains(t)).min() else {
            return Vec::new();
        };
        let mut out = vec![self.tokens[&cur].clone()];
        let mut seen = HashSet::from([cur]);
        while let Some(&n) = next.get(&cur) {
            if !seen.insert(n) {
                break;
            }
            out.push(self.tokens[&n].clone());
            cur = n;
        }
        out
    }

    /// The routine's own token sequence.
    pub fn reconstruct_tokens(&self) -> Vec<String> {
        self.routine_tokens(self.root)
    }

    /// Outgoing edges of `id` of the given kinds, in list order.
    pub fn outgoing<'a>(&'a self, id: NodeId, kinds: &'a [EdgeKind]) -> impl Iterator<Item = NodeId> + 'a {
        kinds
            .iter()
            .flat_map(move |&k| self.edges.get(k).iter().filter(move |e| e.0 == id).map(|e| e.1))
    }
}

/// Build the preliminary graph of one routine.
pub fn build_preliminary(ast: &Ast) -> Result<Ipag, FrontendError> {
    ast.validate()?;
    let root = ast.root;
    let mut g = Ipag {
        origin: ast.routine_name.clone(),
        language: ast.language,
        stage: Stage::Preliminary,
        root,
        tokens: BTreeMap::new(),
        properties: BTreeMap::new(),
        declarations: BTreeMap::from([(root, ast.signature())]),
        edges: EdgeSets::default(),
    };

    // Preorder walk so that edge lists follow source order.
    let mut stack = vec![root];
    while let Some(id) = stack.pop() {
        let node = ast.node(id);
        match node.kind {
            AstNodeKind::Token => {
                g.tokens.insert(id, node.label.clone());
            }
            AstNodeKind::Property => {
                if id != root {
                    g.properties.insert(id, node.label.clone());
                }
                for &c in &node.children {
                    let child = ast.node(c);
                    match (id == root, child.kind) {
                        (true, AstNodeKind::Property) => g.edges.pd.push((c, id)),
                        // Root-to-token edges coincide with the mandatory e_td edge.
                        (true, AstNodeKind::Token) => {}
                        (false, AstNodeKind::Property) => g.edges.pp.push((c, id)),
                        (false, AstNodeKind::Token) => g.edges.tp.push((c, id)),
                    }
                }
                stack.extend(node.children.iter().rev());
            }
        }
    }
    let frontier = ast.token_frontier();
    g.edges.tt = frontier.windows(2).map(|w| (w[0].0, w[1].0)).collect();
    g.edges.td = frontier.iter().map(|(t, _)| (*t, root)).collect();
    Ok(g)
}

/// One broken invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub subject: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

pub const RULE_DISJOINT_NODES: &str = "node ids must be unique across node sets";
pub const RULE_SIGNATURE: &str = "edge endpoints must match the edge-type signature";
pub const RULE_DUPLICATE_EDGE: &str = "edge lists contain no duplicate edges";
pub const RULE_TT_PATH: &str = "e_tt must form simple token paths";
pub const RULE_TD_UNIQUE: &str = "every token has exactly one outgoing e_td edge";
pub const RULE_TP_UNIQUE: &str = "every token has at most one outgoing e_tp edge";
pub const RULE_STAGE_DT: &str = "e_dt must be empty before linking";
pub const RULE_STAGE_DECL: &str = "exactly one declaration node before linking";
pub const RULE_ROOT: &str = "root must be a declaration node";

/// Check every graph invariant; an empty result means the graph is valid.
///
/// Edges failing the signature check are excluded from the structural
/// checks so a single bad endpoint yields a single violation.
pub fn validate_ipag(g: &Ipag) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |rule, subject: String| out.push(Violation { rule, subject });

    for id in g.tokens.keys() {
        if g.properties.contains_key(id) || g.declarations.contains_key(id) {
            v(RULE_DISJOINT_NODES, format!("node {id}"));
        }
    }
    for id in g.properties.keys() {
        if g.declarations.contains_key(id) {
            v(RULE_DISJOINT_NODES, format!("node {id}"));
        }
    }
    if !g.declarations.contains_key(&g.root) {
        v(RULE_ROOT, format!("node {}", g.root));
    }

    let mut good: BTreeMap<EdgeKind, Vec<Edge>> = BTreeMap::new();
    for kind in EdgeKind::ALL {
        let (sk, tk) = kind.signature();
        let mut seen = HashSet::new();
        for &(s, t) in g.edges.get(kind) {
            if g.kind_of(s) != Some(sk) || g.kind_of(t) != Some(tk) {
                v(RULE_SIGNATURE, format!("{kind} edge ({s}, {t})"));
                continue;
            }
            if !seen.insert((s, t)) {
                v(RULE_DUPLICATE_EDGE, format!("{kind} edge ({s}, {t})"));
                continue;
            }
            good.entry(kind).or_default().push((s, t));
        }
    }
    let edges = |k: EdgeKind| good.get(&k).map(Vec::as_slice).unwrap_or(&[]);

    let mut out_deg: HashMap<NodeId, usize> = HashMap::new();
    let mut in_deg: HashMap<NodeId, usize> = HashMap::new();
    for &(s, t) in edges(EdgeKind::Tt) {
        *out_deg.entry(s).or_default() += 1;
        *in_deg.entry(t).or_default() += 1;
    }
    for (id, d) in out_deg.iter().chain(in_deg.iter()).collect::<BTreeMap<_, _>>() {
        if *d > 1 {
            v(RULE_TT_PATH, format!("token {id}"));
        }
    }
    // Cycle check: follow successors from every path start; tokens never
    // reached lie on a cycle.
    let next: HashMap<NodeId, NodeId> = edges(EdgeKind::Tt).iter().copied().collect();
    let mut reached = HashSet::new();
    for &t in g.tokens.keys() {
        if in_deg.get(&t).copied().unwrap_or(0) == 0 {
            let mut cur = t;
            while reached.insert(cur) {
                match next.get(&cur) {
                    Some(&n) => cur = n,
                    None => break,
                }
            }
        }
    }
    if let Some(t) = g.tokens.keys().find(|t| !reached.contains(t)) {
        v(RULE_TT_PATH, format!("token {t} lies on a cycle"));
    }

    let mut td: BTreeMap<NodeId, usize> = g.tokens.keys().map(|&t| (t, 0)).collect();
    for &(s, _) in edges(EdgeKind::Td) {
        *td.entry(s).or_default() += 1;
    }
    for (t, n) in td {
        if n != 1 {
            v(RULE_TD_UNIQUE, format!("token {t}"));
        }
    }
    let mut tp: BTreeMap<NodeId, usize> = BTreeMap::new();
    for &(s, _) in edges(EdgeKind::Tp) {
        *tp.entry(s).or_default() += 1;
    }
    for (t, n) in tp {
        if n > 1 {
            v(RULE_TP_UNIQUE, format!("token {t}"));
        }
    }

    if g.stage != Stage::Complete {
        if !g.edges.dt.is_empty() {
            v(RULE_STAGE_DT, format!("{} e_dt edges", g.edges.dt.len()));
        }
        if g.declarations.len() != 1 {
            v(RULE_STAGE_DECL, format!("{} declaration nodes", g.declarations.len()));
        }
    }
    out
}

/// File wrapper for a list of graphs at one stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IpagCorpusFile {
    pub version: u32,
    pub stage: Stage,
    pub graphs: Vec<Ipag>,
}

pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusFileError {
    #[error("malformed graph file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported graph file version {0}")]
    Version(u32),
    #[error("graph file holds stage `{found}`, expected {expected}")]
    Stage { found: Stage, expected: String },
    #[error("graph `{origin}` has stage `{found}` inside a `{file}` file")]
    Mixed { origin: String, found: Stage, file: Stage },
}

/// Serialize graphs that all share `stage`.
pub fn corpus_to_json(stage: Stage, graphs: &[Ipag]) -> String {
    let file = IpagCorpusFile {
        version: CORPUS_VERSION,
        stage,
        graphs: graphs.to_vec(),
    };
    serde_json::to_string(&file).expect("graphs serialize")
}

/// Parse a graph file and check its stage tag against `accept`.
pub fn corpus_from_json(text: &str, accept: &[Stage]) -> Result<Vec<Ipag>, CorpusFileError> {
    let file: IpagCorpusFile = serde_json::from_str(text)?;
    if file.version != CORPUS_VERSION {
        return Err(CorpusFileError::Version(file.version));
    }
    if !accept.is_empty() && !accept.contains(&file.stage) {
        let expected = accept.iter().map(|s| format!("`{s}`")).collect::<Vec<_>>().join(" or ");
        return Err(CorpusFileError::Stage {
            found: file.stage,
            expected,
        });
    }
    if let Some(g) = file.graphs.iter().find(|g| g.stage != file.stage) {
        return Err(CorpusFileError::Mixed {
            origin: g.origin.clone(),
            found: g.stage,
            file: file.stage,
        });
    }
    Ok(file.graphs)
}

/// Ids reachable from `start` along the given edge kinds.
pub fn reachable(g: &Ipag, start: NodeId, kinds: &[EdgeKind]) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for m in g.outgoing(n, kinds) {
            if seen.insert(m) {
                stack.push(m);
            }
        }
    }
    seen
}
