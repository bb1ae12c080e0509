//! Plain nested-loop reimplementation of the classifier, for comparison
//! with the tape-based model.

use ipag::embed::EmbeddedGraph;
use ipag::hagnn::sage::unit_forward;
use ipag::hagnn::tape::Tape;
use ipag::hagnn::train::{batch_gradient, batch_loss};
use ipag::hagnn::{HagnnModel, Passer};
use ipag::ipag::{EdgeKind, NodeKind};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rows = Vec<Vec<f64>>;

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn row_times(row: &[f64], w: &Array2<f64>) -> Vec<f64> {
    (0..w.ncols())
        .map(|k| (0..w.nrows()).map(|i| row[i] * w[[i, k]]).sum())
        .collect()
}

/// One unit's tiered update, written directly from its definition.
pub fn dense_unit(
    h_prev: &Rows,
    edges: &[(usize, usize)],
    depths: &[usize],
    wd: &[Array2<f64>],
    wc: &Array2<f64>,
    passer: Passer,
) -> Rows {
    let n = h_prev.len();
    let h = wc.ncols();
    let update = |own: &[f64], msg: &[f64]| -> Vec<f64> {
        (0..h)
            .map(|k| {
                let mut z = 0.0;
                for i in 0..h {
                    z += own[i] * wc[[i, k]] + msg[i] * wc[[h + i, k]];
                }
                relu(z)
            })
            .collect()
    };
    let mut cur: Rows = h_prev.iter().map(|r| update(r, &vec![0.0; h])).collect();
    let tier_depth = |d: usize| if passer == Passer::Sage { 1 } else { d };
    let mut levels: Vec<usize> = depths.iter().map(|&d| tier_depth(d)).collect();
    levels.sort_unstable();
    levels.dedup();
    for (pos, &d) in levels.iter().rev().enumerate() {
        let source = if pos == 0 { h_prev.clone() } else { cur.clone() };
        let w = &wd[d.clamp(1, wd.len()) - 1];
        for j in 0..n {
            let incoming: Vec<usize> = edges
                .iter()
                .zip(depths)
                .filter(|(e, &dd)| e.1 == j && tier_depth(dd) == d)
                .map(|(e, _)| e.0)
                .collect();
            if incoming.is_empty() {
                continue;
            }
            let mut msg = vec![0.0; h];
            for &i in &incoming {
                for (m, x) in msg.iter_mut().zip(row_times(&source[i], w)) {
                    *m += x / incoming.len() as f64;
                }
            }
            cur[j] = update(&h_prev[j], &msg);
        }
    }
    cur
}

/// The tape implementation of one unit, on plain rows.
pub fn tape_unit(
    h_prev: &Rows,
    edges: &[(usize, usize)],
    depths: &[usize],
    wd: &[Array2<f64>],
    wc: &Array2<f64>,
    passer: Passer,
) -> Rows {
    let mut params = wd.to_vec();
    params.push(wc.clone());
    let mut tape = Tape::new(&params);
    let h = wc.ncols();
    let x = Array2::from_shape_fn((h_prev.len(), h), |(i, k)| h_prev[i][k]);
    let hv = tape.leaf(x);
    let wdv: Vec<_> = (0..wd.len()).map(|i| tape.param(i)).collect();
    let wcv = tape.param(wd.len());
    let out = unit_forward(&mut tape, hv, edges, depths, &wdv, wcv, passer);
    tape.value(out).rows().into_iter().map(|r| r.to_vec()).collect()
}

fn param<'a>(model: &'a HagnnModel, name: &str) -> &'a Array2<f64> {
    let i = model.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("no tensor `{name}`"));
    &model.params[i]
}

fn affine(rows: &Rows, w: &Array2<f64>, b: &Array2<f64>) -> Rows {
    rows.iter()
        .map(|r| row_times(r, w).into_iter().zip(b.row(0)).map(|(x, y)| x + y).collect())
        .collect()
}

fn matrix_rows(m: &Array2<f64>) -> Rows {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Attention-pooled vector of `states`, or zeros for no rows.
pub fn dense_pool(model: &HagnnModel, kind: &str, states: &Rows) -> Vec<f64> {
    let h = model.config.hidden;
    if states.is_empty() {
        return vec![0.0; h];
    }
    let gate = affine(states, param(model, &format!("pool.{kind}.gate_w")), param(model, &format!("pool.{kind}.gate_b")));
    let top = gate.iter().map(|g| g[0]).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = gate.iter().map(|g| (g[0] - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    let t = affine(states, param(model, &format!("pool.{kind}.w")), param(model, &format!("pool.{kind}.b")));
    (0..h).map(|k| t.iter().zip(&exps).map(|(r, e)| r[k] * e / total).sum()).collect()
}

/// Score of `g` computed without the tape.
pub fn dense_score(model: &HagnnModel, g: &EmbeddedGraph) -> f64 {
    let kinds = [("token", NodeKind::Token), ("property", NodeKind::Property), ("declaration", NodeKind::Declaration)];
    let slot = |k: NodeKind| kinds.iter().position(|x| x.1 == k).unwrap();
    let feats = [&g.features.token_matrix, &g.features.property_matrix, &g.features.declaration_matrix];
    let mut state: Rows = Vec::new();
    let mut offsets = Vec::new();
    for (s, (name, _)) in kinds.iter().enumerate() {
        offsets.push(state.len());
        state.extend(affine(
            &matrix_rows(feats[s]),
            param(model, &format!("proj.{name}.w")),
            param(model, &format!("proj.{name}.b")),
        ));
    }
    let total = state.len();
    for layer in 0..model.config.layers {
        let mut sum = vec![vec![0.0; model.config.hidden]; total];
        let mut covered = vec![0usize; total];
        for kind in EdgeKind::ALL {
            let sub = g.subgraph(kind);
            if sub.edges.is_empty() {
                continue;
            }
            let idx: Vec<usize> = sub.nodes.iter().map(|n| offsets[slot(n.kind)] + n.row).collect();
            let h_in: Rows = sub
                .nodes
                .iter()
                .zip(&idx)
                .map(|(n, &i)| {
                    let mut r = state[i].clone();
                    if layer == 0 {
                        // Projection of the concatenated edge one-hot.
                        let e = param(model, &format!("proj.{}.edge", kinds[slot(n.kind)].0));
                        let extra = row_times(&sub.one_hot, e);
                        for (x, y) in r.iter_mut().zip(extra) {
                            *x += y;
                        }
                    }
                    r
                })
                .collect();
            let wd: Vec<Array2<f64>> = (1..=model.config.depth_tiers)
                .map(|t| param(model, &format!("layer{layer}.{}.wd{t}", kind.name())).clone())
                .collect();
            let wc = param(model, &format!("layer{layer}.{}.wc", kind.name()));
            let out = dense_unit(&h_in, &sub.edges, &sub.depths, &wd, wc, model.config.passer);
            for (r, &i) in out.iter().zip(&idx) {
                covered[i] += 1;
                for (s, x) in sum[i].iter_mut().zip(r) {
                    *s += x;
                }
            }
        }
        for i in 0..total {
            if covered[i] > 0 {
                state[i] = sum[i].iter().map(|x| x / covered[i] as f64).collect();
            }
        }
    }
    let pooled: Vec<Vec<f64>> = kinds
        .iter()
        .enumerate()
        .map(|(s, (name, k))| dense_pool(model, name, &state[offsets[s]..offsets[s] + g.count(*k)].to_vec()))
        .collect();
    let z: Vec<f64> = pooled[2].iter().chain(&pooled[1]).chain(&pooled[0]).copied().collect();
    let l = affine(&vec![z], param(model, "head.linear.w"), param(model, "head.linear.b"));
    let hid: Rows = affine(&l, param(model, "head.hidden.w"), param(model, "head.hidden.b"))
        .into_iter()
        .map(|r| r.into_iter().map(relu).collect())
        .collect();
    let o = affine(&hid, param(model, "head.out.w"), param(model, "head.out.b"))[0][0];
    1.0 / (1.0 + (-o).exp())
}

pub fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn max_diff(a: &Rows, b: &Rows) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub struct RandomUnit {
    pub h_prev: Rows,
    pub edges: Vec<(usize, usize)>,
    pub depths: Vec<usize>,
    pub wd: Vec<Array2<f64>>,
    pub wc: Array2<f64>,
}

/// A random unit of 1 to 10 nodes with random edges, depths and weights.
pub fn random_unit(rng: &mut ChaCha8Rng, h: usize, tiers: usize, depth_cap: usize) -> RandomUnit {
    let n = rng.random_range(1..=10);
    let m = rng.random_range(0..=2 * n);
    let edges: Vec<(usize, usize)> = (0..m).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
    let depths = (0..m).map(|_| rng.random_range(1..=depth_cap)).collect();
    let h_prev = (0..n).map(|_| (0..h).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let wd = (0..tiers).map(|_| normal(rng, h, h, 0.5)).collect();
    let wc = normal(rng, 2 * h, h, 0.5);
    RandomUnit { h_prev, edges, depths, wd, wc }
}

/// Relative error `|g_a - g_n| / max(|g_a|, |g_n|)` between the analytic
/// gradient and central differences, over `per_tensor` random entries of
/// each tensor, or over every entry when `None`.
pub fn gradient_error(model: &mut HagnnModel, batch: &[(&EmbeddedGraph, bool)], per_tensor: Option<usize>, seed: u64) -> f64 {
    let (_, grads) = batch_gradient(model, batch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-6;
    let (mut diff, mut numeric_norm, mut analytic_norm) = (0.0, 0.0, 0.0);
    for t in 0..model.params.len() {
        let (r, c) = model.params[t].dim();
        let entries: Vec<(usize, usize)> = match per_tensor {
            Some(k) => (0..k).map(|_| (rng.random_range(0..r), rng.random_range(0..c))).collect(),
            None => (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).collect(),
        };
        for at in entries {
            let orig = model.params[t][at];
            model.params[t][at] = orig + eps;
            let up = batch_loss(model, batch);
            model.params[t][at] = orig - eps;
            let down = batch_loss(model, batch);
            model.params[t][at] = orig;
            let numeric = (up - down) / (2.0 * eps);
            diff += (numeric - grads[t][at]).powi(2);
            numeric_norm += numeric.powi(2);
            analytic_norm += grads[t][at].powi(2);
        }
    }
    diff.sqrt() / numeric_norm.sqrt().max(analytic_norm.sqrt()).max(1e-12)
}
