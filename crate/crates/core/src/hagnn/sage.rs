//! Depth-tiered mean-aggregation message passing for one unit.
//!
//! Within a layer, edge tiers are visited from the deepest down to depth 1.
//! The deepest tier reads neighbour states from the previous layer; every
//! shallower tier reads the states already updated in this layer. A node's
//! update always concatenates its previous-layer state with the tier's mean
//! message, `h_j = ReLU([h_j_prev ; a_j] W_c)`, where `a_j` averages
//! `h_i W_d` over incoming edges. Nodes are first given the update with an
//! empty (zero) message, then overwritten at each tier that targets them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Passer {
    /// Depth-tiered updates.
    #[default]
    SagePlus,
    /// All edges in one round, neighbour states from the previous layer.
    Sage,
}

/// Weight tier used for edges at depth `d`.
pub fn tier_of(depth: usize, tiers: usize) -> usize {
    depth.clamp(1, tiers) - 1
}

/// One unit's forward pass.
///
/// `h_prev` holds one row per unit node; `edges` index those rows. `wd`
/// holds one `H x H` matrix per tier and `wc` is `2H x H`.
pub fn unit_forward(
    tape: &mut Tape<'_>,
    h_prev: Var,
    edges: &[(usize, usize)],
    depths: &[usize],
    wd: &[Var],
    wc: Var,
    passer: Passer,
) -> Var {
    let (n, h) = tape.value(h_prev).dim();
    let zeros = tape.zeros(n, h);
    let cat = tape.concat_cols(&[h_prev, zeros]);
    let lin = tape.matmul(cat, wc);
    let mut cur = tape.relu(lin);

    let mut tiers: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (e, &d) in depths.iter().enumerate() {
        let key = match passer {
            Passer::SagePlus => d,
            Passer::Sage => 1,
        };
        tiers.entry(key).or_default().push(e);
    }
    let deepest = tiers.keys().next_back().copied();
    for (&d, members) in tiers.iter().rev() {
        let source = if Some(d) == deepest { h_prev } else { cur };
        let w = wd[tier_of(d, wd.len())];
        let srcs: Vec<usize> = members.iter().map(|&e| edges[e].0).collect();
        let tgts: Vec<usize> = members.iter().map(|&e| edges[e].1).collect();

        let mut counts = vec![0usize; n];
        for &t in &tgts {
            counts[t] += 1;
        }
        let targets: Vec<usize> = (0..n).filter(|&j| counts[j] > 0).collect();
        let gathered = tape.gather(source, srcs);
        let msgs = tape.matmul(gathered, w);
        let summed = tape.scatter_add(msgs, tgts, n);
        let picked = tape.gather(summed, targets.clone());
        let mean = tape.scale_rows(picked, targets.iter().map(|&j| 1.0 / counts[j] as f64).collect());
        let own = tape.gather(h_prev, targets.clone());
        let cat = tape.concat_cols(&[own, mean]);
        let lin = tape.matmul(cat, wc);
        let upd = tape.relu(lin);
        cur = tape.set_rows(cur, upd, targets);
    }
    cur
}
