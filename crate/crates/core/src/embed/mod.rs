//! Numeric features for complete graphs.
//!
//! Token and declaration labels go through a [`TextEmbedder`]. Property
//! labels get an ordinal encoding: one `(I, P, D)` triple per constituent
//! name, where `I` is the name's vocabulary index, `P` its position among
//! aggregation siblings (the parent is 1) and `D` its depth inside a merged
//! sequence. Edges are one-hot over the six edge kinds.

pub mod text;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{label_names, label_segments, MAX_LABEL_NAMES};
use crate::hagnn::depth::{edge_depths, DepthError};
use crate::ipag::{EdgeKind, Ipag, NodeId, NodeKind, Stage};

pub use text::{
    CachedEmbedder, EmbedCache, EmbedMode, HashEmbedder, ServiceEmbedder, TextEmbedder, DEFAULT_TEXT_WIDTH,
};

pub const PROPERTY_WIDTH: usize = 360;
pub const EDGE_WIDTH: usize = 6;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("property name `{name}` (in label `{label}`) is not in the vocabulary")]
    UnknownName { name: String, label: String },
    #[error("property label `{label}` holds {names} names; at most {MAX_LABEL_NAMES} fit")]
    Overflow { label: String, names: usize },
    #[error("cannot embed an empty label")]
    EmptyLabel,
    #[error("embedding service: {0}")]
    Service(String),
    #[error("graph `{origin}` is at stage `{found}`; embedding needs complete graphs (run link first)")]
    Stage { origin: String, found: Stage },
    #[error("embedder returned {got} vectors of width {width}, expected {expected} of width {expected_width}")]
    Shape {
        got: usize,
        width: usize,
        expected: usize,
        expected_width: usize,
    },
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error("embedding cache: {0}")]
    Cache(String),
}

/// Dense 1-based index over property names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyVocabulary {
    pub names: BTreeMap<String, u32>,
}

impl PropertyVocabulary {
    /// Index every name found in the graphs' property labels, in sorted order.
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a Ipag>) -> Self {
        let mut set = BTreeSet::new();
        for g in graphs {
            for label in g.properties.values() {
                set.extend(label_names(label).into_iter().map(str::to_string));
            }
        }
        Self::from_names(set)
    }

    pub fn from_names(names: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = names.into_iter().collect();
        PropertyVocabulary {
            names: set.into_iter().zip(1..).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<u32> {
        self.names.get(name).copied()
    }
}

/// What to do with a property name missing from the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnseenNames {
    Reject,
    /// Map to the reserved index 0 and log a warning.
    Reserve,
}

/// Ordinal encoding of a plain or merged property label.
pub fn embed_property(label: &str, vocab: &PropertyVocabulary) -> Result<Vec<f64>, EmbedError> {
    embed_property_with(label, vocab, UnseenNames::Reject)
}

pub fn embed_property_with(label: &str, vocab: &PropertyVocabulary, unseen: UnseenNames) -> Result<Vec<f64>, EmbedError> {
    let segments = label_segments(label);
    let names: usize = segments.iter().map(Vec::len).sum();
    if names > MAX_LABEL_NAMES {
        return Err(EmbedError::Overflow {
            label: label.to_string(),
            names,
        });
    }
    let mut out = Vec::with_capacity(PROPERTY_WIDTH);
    for (p, seg) in segments.iter().enumerate() {
        for (d, name) in seg.iter().enumerate() {
            let index = match (vocab.index(name), unseen) {
                (Some(i), _) => i,
                (None, UnseenNames::Reserve) => {
                    log::warn!("property name `{name}` is not in the model vocabulary; using index 0");
                    0
                }
                (None, UnseenNames::Reject) => {
                    return Err(EmbedError::UnknownName {
                        name: name.to_string(),
                        label: label.to_string(),
                    })
                }
            };
            out.extend([index as f64, (p + 1) as f64, (d + 1) as f64]);
        }
    }
    out.resize(PROPERTY_WIDTH, 0.0);
    Ok(out)
}

/// One-hot vector of an edge kind.
pub fn embed_edge(kind: EdgeKind) -> [f64; EDGE_WIDTH] {
    let mut v = [0.0; EDGE_WIDTH];
    v[kind.index()] = 1.0;
    v
}

/// Embed one text label.
pub fn embed_text(label: &str, embedder: &dyn TextEmbedder) -> Result<Vec<f64>, EmbedError> {
    if label.is_empty() {
        return Err(EmbedError::EmptyLabel);
    }
    let mut v = embedder.embed_batch(&[label.to_string()])?;
    v.pop().ok_or(EmbedError::Shape {
        got: 0,
        width: 0,
        expected: 1,
        expected_width: embedder.width(),
    })
}

/// Node feature matrices. Row `i` of each matrix belongs to the `i`-th id
/// of the matching id list (ascending id order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub token_ids: Vec<NodeId>,
    pub property_ids: Vec<NodeId>,
    pub declaration_ids: Vec<NodeId>,
    pub token_matrix: Array2<f64>,
    pub property_matrix: Array2<f64>,
    pub declaration_matrix: Array2<f64>,
    pub d_t: usize,
}

fn rows(vectors: Vec<Vec<f64>>, width: usize) -> Array2<f64> {
    let n = vectors.len();
    let flat: Vec<f64> = vectors.into_iter().flatten().collect();
    Array2::from_shape_vec((n, width), flat).expect("row widths checked by the caller")
}

/// Text vectors for every distinct label, embedded in batches.
pub fn embed_labels(
    labels: impl IntoIterator<Item = String>,
    embedder: &dyn TextEmbedder,
) -> Result<HashMap<String, Vec<f64>>, EmbedError> {
    const BATCH: usize = 256;
    let distinct: Vec<String> = labels.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let mut out = HashMap::with_capacity(distinct.len());
    for chunk in distinct.chunks(BATCH) {
        let vectors = embedder.embed_batch(chunk)?;
        if vectors.len() != chunk.len() || vectors.iter().any(|v| v.len() != embedder.width()) {
            return Err(EmbedError::Shape {
                got: vectors.len(),
                width: vectors.first().map_or(0, Vec::len),
                expected: chunk.len(),
                expected_width: embedder.width(),
            });
        }
        out.extend(chunk.iter().cloned().zip(vectors));
    }
    Ok(out)
}

/// Feature matrices of one graph given precomputed text vectors.
pub fn node_features(
    g: &Ipag,
    vocab: &PropertyVocabulary,
    text: &HashMap<String, Vec<f64>>,
    d_t: usize,
    unseen: UnseenNames,
) -> Result<NodeFeatures, EmbedError> {
    let lookup = |l: &String| -> Result<Vec<f64>, EmbedError> {
        if l.is_empty() {
            return Err(EmbedError::EmptyLabel);
        }
        text.get(l).cloned().ok_or_else(|| EmbedError::Cache(format!("no vector for label `{l}`")))
    };
    let token_rows = g.tokens.values().map(lookup).collect::<Result<Vec<_>, _>>()?;
    let decl_rows = g.declarations.values().map(lookup).collect::<Result<Vec<_>, _>>()?;
    let prop_rows = g
        .properties
        .values()
        .map(|l| embed_property_with(l, vocab, unseen))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NodeFeatures {
        token_ids: g.tokens.keys().copied().collect(),
        property_ids: g.properties.keys().copied().collect(),
        declaration_ids: g.declarations.keys().copied().collect(),
        token_matrix: rows(token_rows, d_t),
        property_matrix: rows(prop_rows, PROPERTY_WIDTH),
        declaration_matrix: rows(decl_rows, d_t),
        d_t,
    })
}

/// Position of a node in the stacked node order used by the model:
/// tokens, then properties, then declarations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub kind: NodeKind,
    /// Row within the node kind's feature matrix.
    pub row: usize,
}

/// One typed slice of a graph: the edges of one kind and their endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub kind: EdgeKind,
    /// Endpoints of the edges, sorted.
    pub nodes: Vec<NodeRef>,
    /// Edges as positions in `nodes`.
    pub edges: Vec<(usize, usize)>,
    pub depths: Vec<usize>,
    pub one_hot: [f64; EDGE_WIDTH],
}

impl Subgraph {
    pub fn max_depth(&self) -> usize {
        self.depths.iter().copied().max().unwrap_or(0)
    }
}

/// A complete graph in model-ready form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedGraph {
    pub name: String,
    pub label: Option<bool>,
    pub features: NodeFeatures,
    /// Indexed by [`EdgeKind::index`].
    pub subgraphs: Vec<Subgraph>,
}

impl EmbeddedGraph {
    pub fn count(&self, kind: NodeKind) -> usize {
        match kind {
            NodeKind::Token => self.features.token_ids.len(),
            NodeKind::Property => self.features.property_ids.len(),
            NodeKind::Declaration => self.features.declaration_ids.len(),
        }
    }

    pub fn subgraph(&self, kind: EdgeKind) -> &Subgraph {
        &self.subgraphs[kind.index()]
    }
}

/// Split a complete graph into its six typed subgraphs.
pub fn slice_subgraphs(g: &Ipag, feats: NodeFeatures) -> Result<EmbeddedGraph, EmbedError> {
    if g.stage != Stage::Complete {
        return Err(EmbedError::Stage {
            origin: g.origin.clone(),
            found: g.stage,
        });
    }
    let depths = edge_depths(g)?;
    let mut pos: HashMap<NodeId, NodeRef> = HashMap::new();
    for (kind, ids) in [
        (NodeKind::Token, &feats.token_ids),
        (NodeKind::Property, &feats.property_ids),
        (NodeKind::Declaration, &feats.declaration_ids),
    ] {
        for (row, id) in ids.iter().enumerate() {
            pos.insert(*id, NodeRef { kind, row });
        }
    }
    let subgraphs = EdgeKind::ALL
        .into_iter()
        .map(|kind| {
            let list = g.edges.get(kind);
            let nodes: Vec<NodeRef> = list
                .iter()
                .flat_map(|&(s, t)| [pos[&s], pos[&t]])
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let local: HashMap<NodeRef, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
            Subgraph {
                kind,
                edges: list.iter().map(|(s, t)| (local[&pos[s]], local[&pos[t]])).collect(),
                depths: depths.get(kind).to_vec(),
                nodes,
                one_hot: embed_edge(kind),
            }
        })
        .collect();
    Ok(EmbeddedGraph {
        name: g.origin.clone(),
        label: None,
        features: feats,
        subgraphs,
    })
}

/// Embed a corpus of complete graphs, sharing text vectors across graphs.
pub fn embed_corpus(
    graphs: &[Ipag],
    vocab: &PropertyVocabulary,
    embedder: &dyn TextEmbedder,
    unseen: UnseenNames,
) -> Result<Vec<EmbeddedGraph>, EmbedError> {
    use rayon::prelude::*;
    for g in graphs {
        if g.stage != Stage::Complete {
            return Err(EmbedError::Stage {
                origin: g.origin.clone(),
                found: g.stage,
            });
        }
    }
    let text = embed_labels(
        graphs
            .iter()
            .flat_map(|g| g.tokens.values().chain(g.declarations.values()).cloned()),
        embedder,
    )?;
    let d_t = embedder.width();
    graphs
        .par_iter()
        .map(|g| slice_subgraphs(g, node_features(g, vocab, &text, d_t, unseen)?))
        .collect()
}
