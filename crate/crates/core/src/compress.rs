//! Lossless graph compression: sequence merging followed by aggregation
//! merging.
//!
//! Merged property labels keep every constituent name. A sequence label lists
//! member names from the exit end to the entry end, separated by `", "`. An
//! aggregation label is `parent(child1‖child2‖...)`.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ipag::{EdgeKind, Ipag, NodeId, NodeKind, Stage};
use crate::rules::CompressRuleset;

pub const SEQUENCE_SEP: &str = ", ";
pub const SIBLING_SEP: char = '‖';
/// Largest number of names one merged label may hold.
pub const MAX_LABEL_NAMES: usize = 120;

#[derive(Debug, Error)]
pub enum CompressError {
    #[error("graph `{origin}` is at stage `{found}`; {op} needs {expected}")]
    Stage {
        origin: String,
        op: &'static str,
        found: Stage,
        expected: &'static str,
    },
    #[error("property name `{0}` is not in the compression rules")]
    UnknownName(String),
    #[error("compression report: {before} graphs before but {after} after")]
    LengthMismatch { before: usize, after: usize },
}

/// Split a property label into positional segments of names: the parent
/// (or the whole label when it is not an aggregation) first, then one
/// segment per merged sibling.
pub fn label_segments(label: &str) -> Vec<Vec<&str>> {
    match (label.find('('), label.ends_with(')')) {
        (Some(open), true) => {
            let head = &label[..open];
            let mut segs = if head.trim().is_empty() { Vec::new() } else { vec![split_names(head)] };
            segs.extend(label[open + 1..label.len() - 1].split(SIBLING_SEP).map(split_names));
            segs
        }
        _ => vec![split_names(label)],
    }
}

fn split_names(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).collect()
}

/// Every name in a label, in order.
pub fn label_names(label: &str) -> Vec<&str> {
    label_segments(label).into_iter().flatten().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertySequence {
    /// `n_1 .. n_k`, entry end first.
    pub nodes: Vec<NodeId>,
    /// Nodes feeding `n_1`.
    pub entry: Vec<NodeId>,
    /// The node `n_k` feeds.
    pub exit: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationStructure {
    pub parent: NodeId,
    pub children: Vec<NodeId>,
    /// Entry nodes of each child.
    pub feeders: Vec<Vec<NodeId>>,
    pub exit: NodeId,
    /// Every child has exactly one entry and one exit.
    pub structural: bool,
    /// The parent's name is compressible under the rules.
    pub semantic: bool,
    pub compressible: bool,
}

/// Entry and exit adjacency of property nodes.
struct Adjacency {
    entries: HashMap<NodeId, Vec<NodeId>>,
    exits: HashMap<NodeId, Vec<NodeId>>,
}

impl Adjacency {
    fn new(g: &Ipag) -> Self {
        let mut entries: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        let mut exits: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for kind in [EdgeKind::Tp, EdgeKind::Pp] {
            for &(s, t) in g.edges.get(kind) {
                entries.entry(t).or_default().push(s);
            }
        }
        for kind in [EdgeKind::Pp, EdgeKind::Pd] {
            for &(s, t) in g.edges.get(kind) {
                exits.entry(s).or_default().push(t);
            }
        }
        Adjacency { entries, exits }
    }

    fn entries(&self, n: NodeId) -> &[NodeId] {
        self.entries.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    fn exits(&self, n: NodeId) -> &[NodeId] {
        self.exits.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// All maximal property sequences, non-overlapping.
pub fn find_sequences(g: &Ipag) -> Vec<PropertySequence> {
    let adj = Adjacency::new(g);
    let is_prop = |n: NodeId| g.properties.contains_key(&n);
    let mut candidates = Vec::new();
    for &n in g.properties.keys() {
        let [omega] = adj.exits(n) else { continue };
        let ends_here = match g.kind_of(*omega) {
            Some(NodeKind::Declaration) => true,
            Some(NodeKind::Property) => adj.entries(*omega).len() >= 2,
            _ => false,
        };
        if !ends_here {
            continue;
        }
        let mut chain = vec![n];
        let mut cur = n;
        while let [p] = adj.entries(cur) {
            let p = *p;
            if !is_prop(p) || adj.exits(p) != [cur] || adj.entries(p).is_empty() || chain.contains(&p) {
                break;
            }
            chain.push(p);
            cur = p;
        }
        if chain.len() >= 2 {
            chain.reverse();
            candidates.push(PropertySequence {
                entry: adj.entries(chain[0]).to_vec(),
                nodes: chain,
                exit: *omega,
            });
        }
    }
    candidates.sort_by_key(|s| (std::cmp::Reverse(s.nodes.len()), s.nodes[0]));
    let mut used = HashSet::new();
    candidates.retain(|s| {
        if s.nodes.iter().any(|n| used.contains(n)) {
            return false;
        }
        used.extend(s.nodes.iter().copied());
        true
    });
    candidates.sort_by_key(|s| s.nodes[0]);
    candidates
}

/// Replace each group of property nodes by one fresh property node with the
/// given label and rewire edges. Edges inside a group disappear.
fn contract(g: &Ipag, groups: &[(Vec<NodeId>, String)]) -> Ipag {
    let mut out = g.clone();
    let mut next = g.next_id();
    let mut map: HashMap<NodeId, NodeId> = HashMap::new();
    for (members, label) in groups {
        for m in members {
            out.properties.remove(m);
            map.insert(*m, next);
        }
        out.properties.insert(next, label.clone());
        next += 1;
    }
    for kind in EdgeKind::ALL {
        let mut seen = HashSet::new();
        let list = out.edges.get_mut(kind);
        *list = list
            .iter()
            .map(|&(s, t)| (*map.get(&s).unwrap_or(&s), *map.get(&t).unwrap_or(&t)))
            .filter(|&(s, t)| s != t && seen.insert((s, t)))
            .collect();
    }
    out
}

fn name_count(label: &str) -> usize {
    label_names(label).len()
}

fn check_stage(g: &Ipag, op: &'static str, ok: &[Stage], expected: &'static str) -> Result<(), CompressError> {
    if ok.contains(&g.stage) {
        Ok(())
    } else {
        Err(CompressError::Stage {
            origin: g.origin.clone(),
            op,
            found: g.stage,
            expected,
        })
    }
}

/// Merge every maximal sequence into one node.
///
/// A sequence whose merged label would exceed `MAX_LABEL_NAMES` names is
/// split into consecutive chunks that each stay within the limit.
pub fn merge_sequences(g: &Ipag) -> Result<Ipag, CompressError> {
    check_stage(
        g,
        "sequence merging",
        &[Stage::Preliminary, Stage::SequenceReduced],
        "a preliminary graph",
    )?;
    let mut groups = Vec::new();
    for seq in find_sequences(g) {
        // Chunk from the exit end so the entry end keeps its natural order.
        let mut chunk: Vec<NodeId> = Vec::new();
        let mut names = 0;
        let mut chunks = Vec::new();
        for &n in seq.nodes.iter().rev() {
            let c = name_count(&g.properties[&n]);
            if !chunk.is_empty() && names + c > MAX_LABEL_NAMES {
                chunks.push(std::mem::take(&mut chunk));
                names = 0;
            }
            chunk.push(n);
            names += c;
        }
        chunks.push(chunk);
        if chunks.len() > 1 {
            log::warn!(
                "{}: sequence of {} nodes split into {} merged nodes to respect the {MAX_LABEL_NAMES}-name limit",
                g.origin,
                seq.nodes.len(),
                chunks.len()
            );
        }
        for chunk in chunks.into_iter().filter(|c| c.len() >= 2) {
            let label = chunk
                .iter()
                .map(|n| g.properties[n].as_str())
                .collect::<Vec<_>>()
                .join(SEQUENCE_SEP);
            groups.push((chunk, label));
        }
    }
    let mut out = contract(g, &groups);
    out.stage = Stage::SequenceReduced;
    Ok(out)
}

/// The name that decides whether an aggregation parent may be merged: the
/// entry-nearest name of its leading segment. For a merged sequence such as
/// `"CompoundStatement, ExpressionStatement, FunctionCallExpression"` this is
/// the node that directly owns the children.
pub fn deciding_name(label: &str) -> &str {
    label_segments(label)[0].last().copied().unwrap_or(label)
}

/// All aggregation structures, tagged with their compressibility.
pub fn find_aggregations(g: &Ipag, rules: &CompressRuleset) -> Result<Vec<AggregationStructure>, CompressError> {
    let adj = Adjacency::new(g);
    let mut out = Vec::new();
    for (&mu, label) in &g.properties {
        if adj.entries(mu).len() < 2 {
            continue;
        }
        let children: Vec<NodeId> = adj
            .entries(mu)
            .iter()
            .copied()
            .filter(|c| g.properties.contains_key(c))
            .collect();
        if children.len() < 2 || children.iter().any(|&c| adj.entries(c).is_empty()) {
            continue;
        }
        let Some(&exit) = adj.exits(mu).first() else { continue };
        for name in label_names(label)
            .into_iter()
            .chain(children.iter().flat_map(|c| label_names(&g.properties[c])))
        {
            if !rules.contains(name) {
                return Err(CompressError::UnknownName(name.to_string()));
            }
        }
        let structural = children
            .iter()
            .all(|&c| adj.entries(c).len() == 1 && adj.exits(c).len() == 1);
        let semantic = rules.is_compressible(deciding_name(label)) == Some(true);
        out.push(AggregationStructure {
            parent: mu,
            feeders: children.iter().map(|&c| adj.entries(c).to_vec()).collect(),
            children,
            exit,
            structural,
            semantic,
            compressible: structural && semantic,
        });
    }
    Ok(out)
}

/// Merge every compressible aggregation into one node.
pub fn merge_aggregations(g: &Ipag, rules: &CompressRuleset) -> Result<Ipag, CompressError> {
    check_stage(
        g,
        "aggregation merging",
        &[Stage::SequenceReduced, Stage::AggregationReduced],
        "a sequence-reduced graph",
    )?;
    let mut groups = Vec::new();
    for agg in find_aggregations(g, rules)?.into_iter().filter(|a| a.compressible) {
        let names: usize = std::iter::once(agg.parent)
            .chain(agg.children.iter().copied())
            .map(|n| name_count(&g.properties[&n]))
            .sum();
        if names > MAX_LABEL_NAMES {
            log::warn!(
                "{}: aggregation at node {} holds {names} names; left unmerged",
                g.origin,
                agg.parent
            );
            continue;
        }
        let siblings: Vec<&str> = agg.children.iter().map(|c| g.properties[c].as_str()).collect();
        let label = format!(
            "{}({})",
            g.properties[&agg.parent],
            siblings.join(&SIBLING_SEP.to_string())
        );
        let mut members = vec![agg.parent];
        members.extend(&agg.children);
        groups.push((members, label));
    }
    let mut out = contract(g, &groups);
    out.stage = Stage::AggregationReduced;
    Ok(out)
}

/// Sequence merging then aggregation merging.
pub fn compress(g: &Ipag, rules: &CompressRuleset) -> Result<Ipag, CompressError> {
    merge_aggregations(&merge_sequences(g)?, rules)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutineReduction {
    pub routine: String,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub edges_before: usize,
    pub edges_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub edges_before: usize,
    pub edges_after: usize,
    pub node_ratio: f64,
    pub edge_ratio: f64,
    pub routines: Vec<RoutineReduction>,
    /// Routine counts per tenth of node reduction, `[0, 0.1)` first.
    pub node_histogram: [usize; 10],
    pub edge_histogram: [usize; 10],
}

fn reduction(before: usize, after: usize) -> f64 {
    if before == 0 {
        0.0
    } else {
        1.0 - after as f64 / before as f64
    }
}

fn bin(r: f64) -> usize {
    ((r.max(0.0) * 10.0) as usize).min(9)
}

/// Node and edge reduction ratios over a corpus.
pub fn compression_report(before: &[Ipag], after: &[Ipag]) -> Result<CompressionReport, CompressError> {
    if before.len() != after.len() {
        return Err(CompressError::LengthMismatch {
            before: before.len(),
            after: after.len(),
        });
    }
    let routines: Vec<RoutineReduction> = before
        .iter()
        .zip(after)
        .map(|(b, a)| RoutineReduction {
            routine: b.origin.clone(),
            nodes_before: b.node_count(),
            nodes_after: a.node_count(),
            edges_before: b.edge_count(),
            edges_after: a.edge_count(),
        })
        .collect();
    let sum = |f: fn(&RoutineReduction) -> usize| routines.iter().map(f).sum::<usize>();
    let (nb, na, eb, ea) = (
        sum(|r| r.nodes_before),
        sum(|r| r.nodes_after),
        sum(|r| r.edges_before),
        sum(|r| r.edges_after),
    );
    let mut node_histogram = [0; 10];
    let mut edge_histogram = [0; 10];
    for r in &routines {
        node_histogram[bin(reduction(r.nodes_before, r.nodes_after))] += 1;
        edge_histogram[bin(reduction(r.edges_before, r.edges_after))] += 1;
    }
    Ok(CompressionReport {
        nodes_before: nb,
        nodes_after: na,
        edges_before: eb,
        edges_after: ea,
        node_ratio: reduction(nb, na),
        edge_ratio: reduction(eb, ea),
        routines,
        node_histogram,
        edge_histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_mini_c;
    use crate::ipag::{build_preliminary, validate_ipag};

    const DUMP_RELOCS: &str =
        "static void dump_relocs (bfd *abfd) { bfd_map_over_sections (abfd, dump_relocs_in_section, NULL); }";

    fn prelim(src: &str) -> Ipag {
        build_preliminary(&parse_mini_c(src).unwrap()[0]).unwrap()
    }

    fn c() -> &'static CompressRuleset {
        CompressRuleset::builtin_c()
    }

    #[test]
    fn label_segments_cover_all_shapes() {
        assert_eq!(label_segments("a"), vec![vec!["a"]]);
        assert_eq!(label_segments("a, b"), vec![vec!["a", "b"]]);
        assert_eq!(label_segments("a(b‖c, d)"), vec![vec!["a"], vec!["b"], vec!["c", "d"]]);
        assert_eq!(deciding_name("X, Y, Z(a‖b)"), "Z");
    }

    #[test]
    fn dump_relocs_sequences() {
        let g = prelim(DUMP_RELOCS);
        let seqs = find_sequences(&g);
        assert_eq!(seqs.len(), 6);
        let merged = merge_sequences(&g).unwrap();
        let mut labels: Vec<&str> = merged.properties.values().map(String::as_str).collect();
        labels.sort();
        assert_eq!(labels.iter().filter(|l| **l == "IdExpression, Name").count(), 4);
        assert!(labels.contains(&"NamedTypeSpecifier, Name"));
        assert!(labels.contains(&"CompoundStatement, ExpressionStatement, FunctionCallExpression"));
        assert_eq!(merged.properties.len(), 13);
        assert_eq!(validate_ipag(&merged), vec![]);
    }

    #[test]
    fn dump_relocs_aggregations() {
        let g = merge_sequences(&prelim(DUMP_RELOCS)).unwrap();
        let aggs = find_aggregations(&g, c()).unwrap();
        assert_eq!(aggs.len(), 4);
        let mut tagged: Vec<(String, bool)> = aggs
            .iter()
            .map(|a| (deciding_name(&g.properties[&a.parent]).to_string(), a.compressible))
            .collect();
        tagged.sort();
        assert_eq!(
            tagged,
            vec![
                ("Declarator".to_string(), true),
                ("FunctionCallExpression".to_string(), true),
                ("FunctionDeclarator".to_string(), false),
                ("ParameterDeclaration".to_string(), false),
            ]
        );
    }

    #[test]
    fn dump_relocs_final_graph() {
        let g = compress(&prelim(DUMP_RELOCS), c()).unwrap();
        assert_eq!(g.properties.len(), 7);
        let call = g
            .properties
            .iter()
            .find(|(_, l)| l.starts_with("CompoundStatement"))
            .map(|(id, _)| *id)
            .unwrap();
        assert_eq!(
            g.properties[&call],
            "CompoundStatement, ExpressionStatement, FunctionCallExpression(IdExpression, Name‖IdExpression, Name‖IdExpression, Name‖IdExpression, Name)"
        );
        let feeders: Vec<&str> = g
            .edges
            .tp
            .iter()
            .filter(|e| e.1 == call)
            .map(|e| g.tokens[&e.0].as_str())
            .collect();
        assert_eq!(feeders, vec!["bfd_map_over_sections", "abfd", "dump_relocs_in_section", "NULL"]);
        assert!(g.properties.values().any(|l| l == "Declarator(Pointer‖Name)"));
        assert_eq!(validate_ipag(&g), vec![]);
    }

    #[test]
    fn compound_statement_with_two_statements_is_incompressible() {
        let g = merge_sequences(&prelim("void f(){ g(); h(); }")).unwrap();
        let aggs = find_aggregations(&g, c()).unwrap();
        let body = aggs
            .iter()
            .find(|a| g.properties[&a.parent] == "CompoundStatement")
            .unwrap();
        assert!(body.structural && !body.semantic && !body.compressible);
    }

    #[test]
    fn unknown_name_is_an_error() {
        let mut g = merge_sequences(&prelim(DUMP_RELOCS)).unwrap();
        for l in g.properties.values_mut() {
            if l == "Declarator" {
                *l = "Mystery".into();
            }
        }
        let err = find_aggregations(&g, c()).unwrap_err();
        assert!(matches!(err, CompressError::UnknownName(n) if n == "Mystery"));
    }

    #[test]
    fn wrong_stage_is_rejected() {
        let g = prelim(DUMP_RELOCS);
        assert!(matches!(merge_aggregations(&g, c()), Err(CompressError::Stage { .. })));
    }

    #[test]
    fn oversized_sequence_is_chunked() {
        let mut src = String::from("int f(int a){ return ");
        src.push_str(&"(".repeat(150));
        src.push('a');
        src.push_str(&")".repeat(150));
        src.push_str("; }");
        let g = prelim(&src);
        let merged = merge_sequences(&g).unwrap();
        assert!(merged.properties.values().all(|l| label_names(l).len() <= MAX_LABEL_NAMES));
        assert_eq!(merged.reconstruct_tokens(), g.reconstruct_tokens());
    }

    #[test]
    fn report_of_identical_corpora_is_zero() {
        let g = prelim(DUMP_RELOCS);
        let r = compression_report(std::slice::from_ref(&g), std::slice::from_ref(&g)).unwrap();
        assert_eq!((r.node_ratio, r.edge_ratio), (0.0, 0.0));
        assert!(compression_report(&[g], &[]).is_err());
    }
}
