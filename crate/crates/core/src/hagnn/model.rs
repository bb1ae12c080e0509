//! Model weights and the forward pass.
//!
//! Node states live in one stacked matrix: token rows, then property rows,
//! then declaration rows. Each of the six units sees only the nodes of its
//! subgraph; after every layer a node's new state is the mean of the unit
//! outputs that contain it (nodes in no unit keep their state). Each node
//! type is then pooled by global soft attention, and the three pooled
//! vectors feed the classifier head.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sage::{unit_forward, Passer};
use super::tape::{sigmoid, Tape, Var};
use crate::embed::{EmbeddedGraph, PropertyVocabulary, EDGE_WIDTH, PROPERTY_WIDTH};
use crate::ipag::{EdgeKind, NodeKind};

/// Scores strictly above this are classified vulnerable.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("graph `{name}` produced a non-finite score")]
    NonFinite { name: String },
    #[error("graph `{name}` has {found}-wide text features; the model expects {expected}")]
    Width { name: String, found: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HagnnConfig {
    pub hidden: usize,
    pub layers: usize,
    pub passer: Passer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Number of distinct depth weight matrices per unit and layer; deeper
    /// edges share the last one.
    pub depth_tiers: usize,
}

impl Default for HagnnConfig {
    fn default() -> Self {
        HagnnConfig {
            hidden: 256,
            layers: 2,
            passer: Passer::SagePlus,
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 16,
            seed: 0,
            depth_tiers: 4,
        }
    }
}

impl HagnnConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden == 0 {
            return Err("hidden width must be at least 1".into());
        }
        if self.layers == 0 {
            return Err("at least one layer is required".into());
        }
        if self.depth_tiers == 0 {
            return Err("at least one depth tier is required".into());
        }
        if self.batch_size == 0 {
            return Err("batch size must be at least 1".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err("learning rate must be a finite non-negative number".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct TypeProjection {
    pub w: usize,
    pub e: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct UnitWeights {
    pub wd: Vec<usize>,
    pub wc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct PoolWeights {
    pub gate_w: usize,
    pub gate_b: usize,
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct HeadWeights {
    pub lin_w: usize,
    pub lin_b: usize,
    pub hid_w: usize,
    pub hid_b: usize,
    pub out_w: usize,
    pub out_b: usize,
}

/// Parameter indices, derived from the config and input widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Layout {
    /// Indexed by node kind: token, property, declaration.
    pub proj: Vec<TypeProjection>,
    /// `units[layer][edge kind]`.
    pub units: Vec<Vec<UnitWeights>>,
    pub pool: Vec<PoolWeights>,
    pub head: HeadWeights,
}

pub(crate) const KINDS: [NodeKind; 3] = [NodeKind::Token, NodeKind::Property, NodeKind::Declaration];

pub(crate) fn kind_slot(kind: NodeKind) -> usize {
    match kind {
        NodeKind::Token => 0,
        NodeKind::Property => 1,
        NodeKind::Declaration => 2,
    }
}

fn kind_name(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Token => "token",
        NodeKind::Property => "property",
        NodeKind::Declaration => "declaration",
    }
}

/// Parameter names and shapes in creation order, plus the index layout.
pub(crate) fn plan(config: &HagnnConfig, d_t: usize) -> (Vec<(String, (usize, usize))>, Layout) {
    let h = config.hidden;
    let mut specs: Vec<(String, (usize, usize))> = Vec::new();
    let mut add = |name: String, shape: (usize, usize)| {
        specs.push((name, shape));
        specs.len() - 1
    };
    let proj = KINDS
        .iter()
        .map(|&k| {
            let width = if k == NodeKind::Property { PROPERTY_WIDTH } else { d_t };
            let n = kind_name(k);
            TypeProjection {
                w: add(format!("proj.{n}.w"), (width, h)),
                e: add(format!("proj.{n}.edge"), (EDGE_WIDTH, h)),
                b: add(format!("proj.{n}.b"), (1, h)),
            }
        })
        .collect();
    let units = (0..config.layers)
        .map(|l| {
            EdgeKind::ALL
                .iter()
                .map(|k| UnitWeights {
                    wd: (0..config.depth_tiers)
                        .map(|t| add(format!("layer{l}.{}.wd{}", k.name(), t + 1), (h, h)))
                        .collect(),
                    wc: add(format!("layer{l}.{}.wc", k.name()), (2 * h, h)),
                })
                .collect()
        })
        .collect();
    let pool = KINDS
        .iter()
        .map(|&k| {
            let n = kind_name(k);
            PoolWeights {
                gate_w: add(format!("pool.{n}.gate_w"), (h, 1)),
                gate_b: add(format!("pool.{n}.gate_b"), (1, 1)),
                w: add(format!("pool.{n}.w"), (h, h)),
                b: add(format!("pool.{n}.b"), (1, h)),
            }
        })
        .collect();
    let head = HeadWeights {
        lin_w: add("head.linear.w".into(), (3 * h, h)),
        lin_b: add("head.linear.b".into(), (1, h)),
        hid_w: add("head.hidden.w".into(), (h, h)),
        hid_b: add("head.hidden.b".into(), (1, h)),
        out_w: add("head.out.w".into(), (h, 1)),
        out_b: add("head.out.b".into(), (1, 1)),
    };
    (specs, Layout { proj, units, pool, head })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HagnnModel {
    pub config: HagnnConfig,
    /// Width of token and declaration features.
    pub d_t: usize,
    pub vocab: PropertyVocabulary,
    pub names: Vec<String>,
    pub params: Vec<Array2<f64>>,
    pub(crate) layout: Layout,
}

/// Per-graph forward outputs.
pub struct Forward {
    pub logit: Var,
    /// Attention weights per node kind (token, property, declaration);
    /// `None` for a kind with no nodes.
    pub attention: Vec<Option<Var>>,
    pub pooled: Vec<Var>,
}

impl HagnnModel {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn new(config: HagnnConfig, d_t: usize, vocab: PropertyVocabulary) -> Self {
        let (specs, layout) = plan(&config, d_t);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .iter()
            .map(|(name, (r, c))| {
                if name.ends_with(".b") || name.ends_with("_b") {
                    Array2::zeros((*r, *c))
                } else {
                    let limit = (6.0 / (*r + *c) as f64).sqrt();
                    Array2::from_shape_fn((*r, *c), |_| rng.random_range(-limit..limit))
                }
            })
            .collect();
        HagnnModel {
            config,
            d_t,
            vocab,
            names: specs.into_iter().map(|(n, _)| n).collect(),
            params,
            layout,
        }
    }

    /// Assemble a model from stored tensors, checking names and shapes.
    pub fn from_parts(
        config: HagnnConfig,
        d_t: usize,
        vocab: PropertyVocabulary,
        names: Vec<String>,
        params: Vec<Array2<f64>>,
    ) -> Result<Self, String> {
        config.validate()?;
        let (specs, layout) = plan(&config, d_t);
        if specs.len() != params.len() || names.len() != params.len() {
            return Err(format!("expected {} tensors, found {}", specs.len(), params.len()));
        }
        for ((name, shape), (have_name, p)) in specs.iter().zip(names.iter().zip(&params)) {
            if name != have_name || *shape != p.dim() {
                return Err(format!(
                    "tensor `{have_name}` {:?} does not match expected `{name}` {shape:?}",
                    p.dim()
                ));
            }
        }
        Ok(HagnnModel {
            config,
            d_t,
            vocab,
            names,
            params,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }

    /// Build the forward graph of one embedded graph on `tape`.
    pub fn forward(&self, tape: &mut Tape<'_>, g: &EmbeddedGraph) -> Forward {
        let h = self.config.hidden;
        let counts: Vec<usize> = KINDS.iter().map(|&k| g.count(k)).collect();
        let offsets = [0, counts[0], counts[0] + counts[1]];
        let total: usize = counts.iter().sum();
        let feats = [
            &g.features.token_matrix,
            &g.features.property_matrix,
            &g.features.declaration_matrix,
        ];

        let mut base = Vec::with_capacity(3);
        for (slot, x) in feats.iter().enumerate() {
            let p = &self.layout.proj[slot];
            let xv = tape.leaf((*x).clone());
            let w = tape.param(p.w);
            let b = tape.param(p.b);
            let m = tape.matmul(xv, w);
            base.push(tape.add_row(m, b));
        }
        let mut state = tape.concat_rows(&base);

        let edge_rows: Vec<Var> = (0..3).map(|slot| tape.param(self.layout.proj[slot].e)).collect();

        for (layer, units) in self.layout.units.iter().enumerate() {
            let mut sum: Option<Var> = None;
            let mut covered = vec![0usize; total];
            for kind in EdgeKind::ALL {
                let sub = g.subgraph(kind);
                if sub.edges.is_empty() {
                    continue;
                }
                let idx: Vec<usize> = sub.nodes.iter().map(|n| offsets[kind_slot(n.kind)] + n.row).collect();
                for &i in &idx {
                    covered[i] += 1;
                }
                let mut h_in = tape.gather(state, idx.clone());
                if layer == 0 {
                    // Concatenating the unit's edge one-hot to every input
                    // row adds that one-hot's projection row.
                    let rows: Vec<Var> = edge_rows
                        .iter()
                        .map(|&e| tape.gather(e, vec![kind.index()]))
                        .collect();
                    let table = tape.concat_rows(&rows);
                    let per_node = tape.gather(table, sub.nodes.iter().map(|n| kind_slot(n.kind)).collect());
                    h_in = tape.add(h_in, per_node);
                }
                let uw = &units[kind.index()];
                let wd: Vec<Var> = uw.wd.iter().map(|&p| tape.param(p)).collect();
                let wc = tape.param(uw.wc);
                let out = unit_forward(tape, h_in, &sub.edges, &sub.depths, &wd, wc, self.config.passer);
                let spread = tape.scatter_add(out, idx, total);
                sum = Some(match sum {
                    Some(s) => tape.add(s, spread),
                    None => spread,
                });
            }
            if let Some(sum) = sum {
                let mean = tape.scale_rows(
                    sum,
                    covered.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect(),
                );
                let kept = tape.scale_rows(state, covered.iter().map(|&c| if c == 0 { 1.0 } else { 0.0 }).collect());
                state = tape.add(mean, kept);
            }
        }

        let mut pooled = Vec::with_capacity(3);
        let mut attention = Vec::with_capacity(3);
        for slot in 0..3 {
            if counts[slot] == 0 {
                pooled.push(tape.zeros(1, h));
                attention.push(None);
                continue;
            }
            let rows = tape.gather(state, (offsets[slot]..offsets[slot] + counts[slot]).collect());
            let (p, a) = self.pool(tape, rows, slot);
            pooled.push(p);
            attention.push(Some(a));
        }
        // Declaration, property, token.
        let z = tape.concat_cols(&[pooled[2], pooled[1], pooled[0]]);
        let logit = self.head(tape, z);
        Forward {
            logit,
            attention,
            pooled,
        }
    }

    /// Global soft attention over the rows of `states`.
    pub(crate) fn pool(&self, tape: &mut Tape<'_>, states: Var, slot: usize) -> (Var, Var) {
        let p = &self.layout.pool[slot];
        let gw = tape.param(p.gate_w);
        let gb = tape.param(p.gate_b);
        let w = tape.param(p.w);
        let b = tape.param(p.b);
        let gate = tape.matmul(states, gw);
        let gate = tape.add_row(gate, gb);
        let alpha = tape.softmax_col(gate);
        let lin = tape.matmul(states, w);
        let transformed = tape.add_row(lin, b);
        let at = tape.transpose(alpha);
        (tape.matmul(at, transformed), alpha)
    }

    /// Linear, hidden (ReLU) and output layers; returns the logit.
    pub(crate) fn head(&self, tape: &mut Tape<'_>, z: Var) -> Var {
        let hw = &self.layout.head;
        let (lw, lb, hw_, hb, ow, ob) = (
            tape.param(hw.lin_w),
            tape.param(hw.lin_b),
            tape.param(hw.hid_w),
            tape.param(hw.hid_b),
            tape.param(hw.out_w),
            tape.param(hw.out_b),
        );
        let l = tape.matmul(z, lw);
        let l = tape.add_row(l, lb);
        let hdn = tape.matmul(l, hw_);
        let hdn = tape.add_row(hdn, hb);
        let hdn = tape.relu(hdn);
        let o = tape.matmul(hdn, ow);
        tape.add_row(o, ob)
    }

    /// Classifier score in `[0, 1]`.
    pub fn score(&self, g: &EmbeddedGraph) -> Result<f64, ModelError> {
        if g.features.d_t != self.d_t {
            return Err(ModelError::Width {
                name: g.name.clone(),
                found: g.features.d_t,
                expected: self.d_t,
            });
        }
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, g);
        let s = sigmoid(tape.scalar(f.logit));
        if !s.is_finite() {
            return Err(ModelError::NonFinite { name: g.name.clone() });
        }
        Ok(s)
    }

    /// Score and label; vulnerable iff the score is above the threshold.
    pub fn classify(&self, g: &EmbeddedGraph) -> Result<(f64, bool), ModelError> {
        let s = self.score(g)?;
        Ok((s, is_vulnerable(s)))
    }

    /// Score of three pooled vectors (declaration, property, token), each `1 x H`.
    pub fn head_score(&self, pooled_d: &Array2<f64>, pooled_p: &Array2<f64>, pooled_t: &Array2<f64>) -> f64 {
        let mut tape = Tape::new(&self.params);
        let parts: Vec<Var> = [pooled_d, pooled_p, pooled_t]
            .iter()
            .map(|a| tape.leaf((*a).clone()))
            .collect();
        let z = tape.concat_cols(&parts);
        let logit = self.head(&mut tape, z);
        sigmoid(tape.scalar(logit))
    }

    /// Attention weights and pooled vector for given states of one node kind.
    pub fn attention(&self, kind: NodeKind, states: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new(&self.params);
        let s = tape.leaf(states.clone());
        let (p, a) = self.pool(&mut tape, s, kind_slot(kind));
        (
            tape.value(a).index_axis(Axis(1), 0).to_vec(),
            tape.value(p).index_axis(Axis(0), 0).to_vec(),
        )
    }
}

/// `score > 0.5`.
pub fn is_vulnerable(score: f64) -> bool {
    score > THRESHOLD
}
