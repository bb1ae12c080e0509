//! Edge depths for tiered message passing.
//!
//! An upward edge (`e_tp`, `e_pp`, `e_pd`, `e_td`) has depth one more than
//! the longest upward path from its target to a declaration, so edges into a
//! declaration have depth 1. Lateral `e_tt` edges and `e_dt` edges take the
//! graph's maximum depth.

use std::collections::HashMap;

use thiserror::Error;

use crate::ipag::{EdgeKind, Ipag, NodeId, NodeKind};

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("graph `{origin}` has a cycle through property node {node}")]
    Cycle { origin: String, node: NodeId },
}

/// Depth of every edge, aligned with the graph's edge lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeDepths {
    by_kind: [Vec<usize>; 6],
    pub max: usize,
}

impl EdgeDepths {
    pub fn get(&self, kind: EdgeKind) -> &[usize] {
        &self.by_kind[kind.index()]
    }
}

/// Longest path, in edges, from each property node to a declaration over
/// `e_pp` and `e_pd`. Properties with no way up count as level 0.
fn levels(g: &Ipag) -> Result<HashMap<NodeId, usize>, DepthError> {
    let mut up: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for kind in [EdgeKind::Pp, EdgeKind::Pd] {
        for &(s, t) in g.edges.get(kind) {
            up.entry(s).or_default().push(t);
        }
    }
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Open,
        Done(usize),
    }
    let mut state: HashMap<NodeId, State> = HashMap::new();
    for &d in g.declarations.keys() {
        state.insert(d, State::Done(0));
    }
    for &start in g.properties.keys() {
        if state.contains_key(&start) {
            continue;
        }
        // Iterative post-order DFS.
        let mut stack = vec![(start, 0usize)];
        state.insert(start, State::Open);
        while let Some(&mut (n, ref mut next)) = stack.last_mut() {
            let succ = up.get(&n).map(Vec::as_slice).unwrap_or(&[]);
            if let Some(&m) = succ.get(*next) {
                *next += 1;
                match state.get(&m) {
                    None => {
                        state.insert(m, State::Open);
                        stack.push((m, 0));
                    }
                    Some(State::Open) => {
                        return Err(DepthError::Cycle {
                            origin: g.origin.clone(),
                            node: m,
                        })
                    }
                    Some(State::Done(_)) => {}
                }
            } else {
                let level = succ
                    .iter()
                    .map(|m| match state[m] {
                        State::Done(l) => l + 1,
                        State::Open => unreachable!("successors are finished first"),
                    })
                    .max()
                    .unwrap_or(0);
                state.insert(n, State::Done(level));
                stack.pop();
            }
        }
    }
    Ok(state
        .into_iter()
        .map(|(n, s)| match s {
            State::Done(l) => (n, l),
            State::Open => unreachable!("every walk finishes"),
        })
        .collect())
}

/// Depth of every edge in `g`.
pub fn edge_depths(g: &Ipag) -> Result<EdgeDepths, DepthError> {
    let level = levels(g)?;
    let mut by_kind: [Vec<usize>; 6] = Default::default();
    let mut max = 1;
    for kind in [EdgeKind::Pd, EdgeKind::Pp, EdgeKind::Tp, EdgeKind::Td] {
        let d: Vec<usize> = g
            .edges
            .get(kind)
            .iter()
            .map(|(_, t)| match g.kind_of(*t) {
                Some(NodeKind::Declaration) => 1,
                _ => 1 + level.get(t).copied().unwrap_or(0),
            })
            .collect();
        max = max.max(d.iter().copied().max().unwrap_or(1));
        by_kind[kind.index()] = d;
    }
    for kind in [EdgeKind::Tt, EdgeKind::Dt] {
        by_kind[kind.index()] = vec![max; g.edges.get(kind).len()];
    }
    Ok(EdgeDepths { by_kind, max })
}
