//! Call relations: resolve call sites by name, order routines by their
//! deepest call chain and splice callee graphs into callers.
//!
//! Routines are processed from the shallowest tier up so that every callee
//! is already complete when a caller clones it. Each resolved call site gets
//! its own clone with fresh node ids plus one `e_dt` edge from the clone's
//! declaration to the call-site token.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::label_names;
use crate::ipag::{Ipag, NodeId, Stage};
use crate::rules::{CompressRuleset, RuleBook, RulesError};

pub const DEFAULT_MAX_CALL_DEPTH: usize = 8;

/// Property names that only wrap an identifier; a token under such a node
/// that feeds a call expression names the callee.
const NAME_WRAPPERS: &[&str] = &["IdExpression", "Name", "SimpleName", "NameExpr", "Identifier"];

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("graph `{origin}` is at stage `{found}`; linking needs aggregation-reduced graphs")]
    Stage { origin: String, found: Stage },
    #[error("call index covers {index} routines but the corpus has {corpus}")]
    Mismatch { index: usize, corpus: usize },
    #[error("internal linking error: {0}")]
    Internal(String),
    #[error(transparent)]
    Rules(#[from] RulesError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    /// Token naming the callee.
    pub token: NodeId,
    pub name: String,
    /// Corpus index of the callee, `None` when untraceable.
    pub callee: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Callee(String),
    Untraceable,
}

/// Depth partition of a corpus and the resolution of every call site.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallDepthIndex {
    pub names: Vec<String>,
    /// Deepest traceable call chain per routine.
    pub depths: Vec<usize>,
    /// `partitions[i]` holds the corpus indices with depth `i`.
    pub partitions: Vec<Vec<usize>>,
    pub sites: Vec<Vec<CallSite>>,
    /// Caller/callee pairs dropped to break cycles.
    pub broken_edges: Vec<(String, String)>,
    pub max_call_depth: usize,
}

impl CallDepthIndex {
    pub fn resolution(&self, caller: usize, token: NodeId) -> Option<Resolution> {
        self.sites.get(caller)?.iter().find(|s| s.token == token).map(|s| match s.callee {
            Some(j) => Resolution::Callee(self.names[j].clone()),
            None => Resolution::Untraceable,
        })
    }

    pub fn partition_names(&self) -> Vec<Vec<&str>> {
        self.partitions
            .iter()
            .map(|p| p.iter().map(|&i| self.names[i].as_str()).collect())
            .collect()
    }

    /// Share of routines with at least one resolved call site.
    pub fn caller_sample_ratio(&self) -> f64 {
        if self.names.is_empty() {
            return 0.0;
        }
        let callers = self.sites.iter().filter(|s| s.iter().any(|c| c.callee.is_some())).count();
        callers as f64 / self.names.len() as f64
    }
}

/// Tokens that name a possible callee at a call expression, with their labels,
/// in id order.
pub fn call_site_tokens(g: &Ipag, rules: &CompressRuleset) -> Vec<(NodeId, String)> {
    let calls: BTreeSet<NodeId> = g
        .properties
        .iter()
        .filter(|(_, l)| label_names(l).iter().any(|n| rules.is_call_name(n)))
        .map(|(id, _)| *id)
        .collect();
    let wrappers: BTreeSet<NodeId> = g
        .properties
        .iter()
        .filter(|(_, l)| label_names(l).iter().all(|n| NAME_WRAPPERS.contains(n)))
        .map(|(id, _)| *id)
        .collect();
    let feeds_call: BTreeSet<NodeId> = g
        .edges
        .pp
        .iter()
        .filter(|(q, c)| wrappers.contains(q) && calls.contains(c))
        .map(|e| e.0)
        .collect();
    let tokens: BTreeSet<NodeId> = g
        .edges
        .tp
        .iter()
        .filter(|(_, p)| calls.contains(p) || feeds_call.contains(p))
        .map(|e| e.0)
        .collect();
    tokens.into_iter().map(|t| (t, g.tokens[&t].clone())).collect()
}

/// Resolve call sites and compute depth tiers over the corpus.
///
/// Cycles are broken by dropping the call edges that close them during a
/// depth-first walk in corpus order. A call whose callee chain would exceed
/// `max_call_depth` is treated as untraceable.
pub fn index_call_depths(corpus: &[Ipag], rules: &RuleBook, max_call_depth: usize) -> Result<CallDepthIndex, LinkError> {
    for g in corpus {
        if g.stage != Stage::AggregationReduced {
            return Err(LinkError::Stage {
                origin: g.origin.clone(),
                found: g.stage,
            });
        }
    }
    let n = corpus.len();
    let mut by_name: HashMap<&str, usize> = HashMap::new();
    for (i, g) in corpus.iter().enumerate() {
        by_name.insert(g.origin.as_str(), i);
    }
    let mut sites: Vec<Vec<CallSite>> = Vec::with_capacity(n);
    for g in corpus {
        let r = rules.get(g.language)?;
        sites.push(
            call_site_tokens(g, r)
                .into_iter()
                .map(|(token, name)| CallSite {
                    token,
                    callee: by_name.get(name.as_str()).copied(),
                    name,
                })
                .collect(),
        );
    }
    let callees: Vec<Vec<usize>> = sites
        .iter()
        .map(|s| {
            let mut seen = BTreeSet::new();
            s.iter().filter_map(|c| c.callee).filter(|j| seen.insert(*j)).collect()
        })
        .collect();

    // Iterative DFS; edges into a routine still on the stack are back edges.
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark = vec![Mark::New; n];
    let mut dropped: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut order = Vec::with_capacity(n);
    for start in 0..n {
        if mark[start] != Mark::New {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        mark[start] = Mark::Active;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if let Some(&w) = callees[v].get(*next) {
                *next += 1;
                match mark[w] {
                    Mark::New => {
                        mark[w] = Mark::Active;
                        stack.push((w, 0));
                    }
                    Mark::Active => {
                        dropped.insert((v, w));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                order.push(v);
                stack.pop();
            }
        }
    }
    let broken_edges: Vec<(String, String)> = dropped
        .iter()
        .map(|&(a, b)| (corpus[a].origin.clone(), corpus[b].origin.clone()))
        .collect();
    for (a, b) in &broken_edges {
        log::warn!("call cycle broken: ignoring the call from `{a}` to `{b}`");
    }

    // Post-order guarantees callees are finished before their callers.
    let mut depths = vec![0usize; n];
    let mut usable: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &v in &order {
        for &w in &callees[v] {
            if dropped.contains(&(v, w)) {
                continue;
            }
            if depths[w] + 1 > max_call_depth {
                log::warn!(
                    "`{}` calls `{}` beyond the call-depth cap {max_call_depth}; treated as untraceable",
                    corpus[v].origin,
                    corpus[w].origin
                );
                continue;
            }
            usable.insert((v, w));
            depths[v] = depths[v].max(depths[w] + 1);
        }
    }
    for (i, s) in sites.iter_mut().enumerate() {
        for c in s.iter_mut() {
            c.callee = c.callee.filter(|&j| usable.contains(&(i, j)));
        }
    }
    let tiers = depths.iter().copied().max().map_or(0, |d| d + 1);
    let mut partitions = vec![Vec::new(); tiers];
    for (i, &d) in depths.iter().enumerate() {
        partitions[d].push(i);
    }
    Ok(CallDepthIndex {
        names: corpus.iter().map(|g| g.origin.clone()).collect(),
        depths,
        partitions,
        sites,
        broken_edges,
        max_call_depth,
    })
}

/// A copy of `g` with every node id shifted so the smallest becomes `base`.
fn clone_with_fresh_ids(g: &Ipag, base: NodeId) -> Ipag {
    let lo = [&g.tokens, &g.properties, &g.declarations]
        .iter()
        .filter_map(|m| m.keys().next())
        .min()
        .copied()
        .unwrap_or(0);
    let shift = |id: NodeId| id - lo + base;
    let remap = |m: &BTreeMap<NodeId, String>| m.iter().map(|(k, v)| (shift(*k), v.clone())).collect();
    let mut out = Ipag {
        origin: g.origin.clone(),
        language: g.language,
        stage: g.stage,
        root: shift(g.root),
        tokens: remap(&g.tokens),
        properties: remap(&g.properties),
        declarations: remap(&g.declarations),
        edges: g.edges.clone(),
    };
    for kind in crate::ipag::EdgeKind::ALL {
        for e in out.edges.get_mut(kind) {
            *e = (shift(e.0), shift(e.1));
        }
    }
    out
}

/// Union the complete graphs of every resolved callee into `caller`.
///
/// The result's `e_dt` holds exactly the caller's own resolved call sites;
/// the callees' own `e_dt` edges are not carried over.
fn splice(caller: &Ipag, sites: &[CallSite], complete: &[Option<Ipag>]) -> Result<Ipag, LinkError> {
    let mut g = caller.clone();
    g.stage = Stage::Complete;
    g.edges.dt.clear();
    for site in sites {
        let Some(j) = site.callee else { continue };
        let callee = complete[j].as_ref().ok_or_else(|| {
            LinkError::Internal(format!("callee `{}` of `{}` is not linked yet", site.name, caller.origin))
        })?;
        let clone = clone_with_fresh_ids(callee, g.next_id());
        g.tokens.extend(clone.tokens);
        g.properties.extend(clone.properties);
        g.declarations.extend(clone.declarations);
        g.edges.pd.extend(clone.edges.pd);
        g.edges.pp.extend(clone.edges.pp);
        g.edges.tp.extend(clone.edges.tp);
        g.edges.tt.extend(clone.edges.tt);
        g.edges.td.extend(clone.edges.td);
        g.edges.dt.push((clone.root, site.token));
    }
    Ok(g)
}

/// Build the complete graph of every routine.
pub fn link_calls(corpus: &[Ipag], index: &CallDepthIndex) -> Result<Vec<Ipag>, LinkError> {
    if index.names.len() != corpus.len() {
        return Err(LinkError::Mismatch {
            index: index.names.len(),
            corpus: corpus.len(),
        });
    }
    let mut complete: Vec<Option<Ipag>> = vec![None; corpus.len()];
    for tier in &index.partitions {
        let done: Vec<(usize, Ipag)> = tier
            .par_iter()
            .map(|&i| splice(&corpus[i], &index.sites[i], &complete).map(|g| (i, g)))
            .collect::<Result<_, _>>()?;
        for (i, g) in done {
            complete[i] = Some(g);
        }
    }
    complete
        .into_iter()
        .enumerate()
        .map(|(i, g)| g.ok_or_else(|| LinkError::Internal(format!("routine #{i} missing from every tier"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::compress;
    use crate::frontend::parse_mini_c;
    use crate::ipag::{build_preliminary, validate_ipag};

    const FIXTURE: &str = include_str!("../tests/fixtures/dump_relocs.c");

    fn reduced(src: &str) -> Vec<Ipag> {
        parse_mini_c(src)
            .unwrap()
            .iter()
            .map(|a| compress(&build_preliminary(a).unwrap(), CompressRuleset::builtin_c()).unwrap())
            .collect()
    }

    #[test]
    fn fixture_depth_tiers() {
        let corpus = reduced(FIXTURE);
        let idx = index_call_depths(&corpus, RuleBook::builtin(), DEFAULT_MAX_CALL_DEPTH).unwrap();
        assert_eq!(
            idx.partition_names(),
            vec![vec!["dump_relocs_in_section"], vec!["bfd_map_over_sections"], vec!["dump_relocs"]]
        );
        assert!((idx.caller_sample_ratio() - 2.0 / 3.0).abs() < 1e-12);
        let assert_token = corpus[1].tokens.iter().find(|(_, l)| *l == "BFD_ASSERT").unwrap().0;
        assert_eq!(idx.resolution(1, *assert_token), Some(Resolution::Untraceable));
    }

    #[test]
    fn dump_relocs_gets_two_dt_edges() {
        let corpus = reduced(FIXTURE);
        let idx = index_call_depths(&corpus, RuleBook::builtin(), DEFAULT_MAX_CALL_DEPTH).unwrap();
        let linked = link_calls(&corpus, &idx).unwrap();
        let g = &linked[0];
        assert_eq!(g.stage, Stage::Complete);
        let targets: Vec<&str> = g.edges.dt.iter().map(|e| g.tokens[&e.1].as_str()).collect();
        assert_eq!(targets, vec!["bfd_map_over_sections", "dump_relocs_in_section"]);
        for &(d, t) in &g.edges.dt {
            assert_ne!(d, g.root);
            assert!(g.declarations.contains_key(&d));
            assert!(corpus[0].tokens.contains_key(&t));
        }
        assert_eq!(
            g.node_count(),
            corpus[0].node_count() + linked[1].node_count() + linked[2].node_count()
        );
        assert_eq!(validate_ipag(g), vec![]);
        assert_eq!(g.reconstruct_tokens(), corpus[0].reconstruct_tokens());
    }

    #[test]
    fn routine_without_calls_only_changes_stage() {
        let corpus = reduced("int f(int a){ return a + 1; }");
        let idx = index_call_depths(&corpus, RuleBook::builtin(), 8).unwrap();
        let linked = link_calls(&corpus, &idx).unwrap();
        let mut expected = corpus[0].clone();
        expected.stage = Stage::Complete;
        assert_eq!(linked[0], expected);
    }

    #[test]
    fn recursion_is_broken_with_a_warning() {
        let corpus = reduced("int f(int n){ return g(n); } int g(int n){ return f(n); }");
        let idx = index_call_depths(&corpus, RuleBook::builtin(), 8).unwrap();
        assert_eq!(idx.broken_edges, vec![("g".to_string(), "f".to_string())]);
        assert_eq!(idx.depths, vec![1, 0]);
        let linked = link_calls(&corpus, &idx).unwrap();
        assert_eq!(linked[0].edges.dt.len(), 1);
        assert_eq!(linked[1].edges.dt.len(), 0);
    }

    #[test]
    fn depth_cap_marks_deep_calls_untraceable() {
        let corpus = reduced("void a(){ b(); } void b(){ c(); } void c(){ d(); } void d(){ }");
        let idx = index_call_depths(&corpus, RuleBook::builtin(), 2).unwrap();
        assert_eq!(idx.depths, vec![0, 2, 1, 0]);
        assert!(idx.sites[0][0].callee.is_none());
    }

    #[test]
    fn wrong_stage_is_rejected() {
        let g = build_preliminary(&parse_mini_c("int f(){ return 0; }").unwrap()[0]).unwrap();
        assert!(matches!(
            index_call_depths(&[g], RuleBook::builtin(), 8),
            Err(LinkError::Stage { .. })
        ));
    }
}
