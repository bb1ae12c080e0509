mod common;

use std::collections::{BTreeSet, HashMap};

use ipag::compress::{
    compression_report, find_aggregations, find_sequences, label_names, merge_aggregations, merge_sequences,
    MAX_LABEL_NAMES,
};
use ipag::frontend::Language;
use ipag::ipag::{build_preliminary, EdgeKind, Ipag, NodeId, NodeKind, Stage};
use ipag::rules::{CompressRuleset, RuleBook};
use ipag::synth::{random_ast, random_corpus, GenOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rules() -> &'static CompressRuleset {
    RuleBook::builtin().get(Language::C).unwrap()
}

fn entries(g: &Ipag, n: NodeId) -> Vec<NodeId> {
    g.edges.tp.iter().chain(&g.edges.pp).filter(|e| e.1 == n).map(|e| e.0).collect()
}

fn exits(g: &Ipag, n: NodeId) -> Vec<NodeId> {
    g.edges.pp.iter().chain(&g.edges.pd).filter(|e| e.0 == n).map(|e| e.1).collect()
}

/// Every path satisfying the sequence conditions, found by extending paths
/// one `e_pp` edge at a time from every property; then the maximal ones.
fn brute_force_sequences(g: &Ipag) -> BTreeSet<Vec<NodeId>> {
    let valid = |path: &[NodeId]| -> bool {
        let k = path.len();
        if k < 2 {
            return false;
        }
        let first_ok = exits(g, path[0]).len() == 1 && !entries(g, path[0]).is_empty();
        let inner_ok = path[1..]
            .iter()
            .all(|&n| entries(g, n).len() == 1 && exits(g, n).len() == 1);
        let linked = path.windows(2).all(|w| g.edges.pp.contains(&(w[0], w[1])));
        let omega = exits(g, path[k - 1]);
        let end_ok = omega.len() == 1
            && match g.kind_of(omega[0]) {
                Some(NodeKind::Declaration) => true,
                Some(NodeKind::Property) => entries(g, omega[0]).len() >= 2,
                _ => false,
            };
        first_ok && inner_ok && linked && end_ok
    };
    let mut all = BTreeSet::new();
    let mut frontier: Vec<Vec<NodeId>> = g.properties.keys().map(|&p| vec![p]).collect();
    while let Some(path) = frontier.pop() {
        if valid(&path) {
            all.insert(path.clone());
        }
        let last = *path.last().unwrap();
        for &(s, t) in &g.edges.pp {
            if s == last && !path.contains(&t) {
                let mut next = path.clone();
                next.push(t);
                frontier.push(next);
            }
        }
    }
    let contains = |big: &Vec<NodeId>, small: &Vec<NodeId>| big.len() > small.len() && big.windows(small.len()).any(|w| w == small.as_slice());
    all.iter().filter(|p| !all.iter().any(|q| contains(q, p))).cloned().collect()
}

fn preliminary(seed: u64, size: usize) -> Ipag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_preliminary(&random_ast(&mut rng, "f", size, rules(), Language::C)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sequences_match_brute_force(seed in any::<u64>(), size in 2usize..40) {
        let g = preliminary(seed, size);
        let found: BTreeSet<Vec<NodeId>> = find_sequences(&g).into_iter().map(|s| s.nodes).collect();
        prop_assert_eq!(found, brute_force_sequences(&g));
    }

    #[test]
    fn sequence_merge_counts_and_labels(seed in any::<u64>(), size in 2usize..60) {
        let g = preliminary(seed, size);
        let seqs = find_sequences(&g);
        let removed: usize = seqs.iter().map(|s| s.nodes.len() - 1).sum();
        let m = merge_sequences(&g).unwrap();
        prop_assert_eq!(m.properties.len(), g.properties.len() - removed);
        prop_assert_eq!(m.edge_count(), g.edge_count() - removed);
        for s in &seqs {
            let want: Vec<&str> = s.nodes.iter().rev().map(|n| g.properties[n].as_str()).collect();
            prop_assert!(m.properties.values().any(|l| *l == want.join(", ")));
        }
        prop_assert_eq!(m.reconstruct_tokens(), g.reconstruct_tokens());
        let again = merge_sequences(&m).unwrap();
        prop_assert_eq!(again, m);
    }

    #[test]
    fn aggregation_tags_match_condition_evaluator(seed in any::<u64>(), size in 2usize..60) {
        let g = merge_sequences(&preliminary(seed, size)).unwrap();
        let found: HashMap<NodeId, (Vec<NodeId>, bool, bool)> = find_aggregations(&g, rules())
            .unwrap()
            .into_iter()
            .map(|a| (a.parent, (a.children, a.structural, a.compressible)))
            .collect();
        let mut expected = HashMap::new();
        for (&mu, label) in &g.properties {
            let ins = entries(&g, mu);
            let kids: Vec<NodeId> = ins.iter().copied().filter(|c| g.properties.contains_key(c)).collect();
            let qualifies = ins.len() >= 2
                && kids.len() >= 2
                && kids.iter().all(|&c| !entries(&g, c).is_empty())
                && !exits(&g, mu).is_empty();
            if !qualifies {
                continue;
            }
            let structural = kids.iter().all(|&c| entries(&g, c).len() == 1 && exits(&g, c).len() == 1);
            // The deciding name is the node that directly owns the children:
            // the last name of the parent's own segment.
            let head = label.split('(').next().unwrap();
            let owner = head.rsplit(", ").next().unwrap();
            let semantic = rules().is_compressible(owner) == Some(true);
            expected.insert(mu, (kids, structural, structural && semantic));
        }
        prop_assert_eq!(found, expected);
    }

    #[test]
    fn aggregation_merge_counts_idempotence_and_renaming(seed in any::<u64>(), size in 2usize..60) {
        let g = merge_sequences(&preliminary(seed, size)).unwrap();
        let aggs = find_aggregations(&g, rules()).unwrap();
        let merged: usize = aggs
            .iter()
            .filter(|a| a.compressible)
            .filter(|a| {
                std::iter::once(a.parent).chain(a.children.iter().copied())
                    .map(|n| label_names(&g.properties[&n]).len()).sum::<usize>() <= MAX_LABEL_NAMES
            })
            .map(|a| a.children.len())
            .sum();
        let m = merge_aggregations(&g, rules()).unwrap();
        prop_assert_eq!(m.properties.len(), g.properties.len() - merged);
        prop_assert_eq!(m.edge_count(), g.edge_count() - merged);
        prop_assert!(m.node_count() <= g.node_count());
        prop_assert_eq!(m.reconstruct_tokens(), g.reconstruct_tokens());
        let names_before: Vec<&str> = g.properties.values().flat_map(|l| label_names(l)).collect();
        let names_after: Vec<&str> = m.properties.values().flat_map(|l| label_names(l)).collect();
        let (mut a, mut b) = (names_before.clone(), names_after.clone());
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
        let again = merge_aggregations(&m, rules()).unwrap();
        prop_assert_eq!(again, m);

        let f = common::shuffled_ids(&g, seed);
        let renamed = common::rename(&g, &f);
        let tags: BTreeSet<(NodeId, bool)> = aggs.iter().map(|a| (f[&a.parent], a.compressible)).collect();
        let renamed_tags: BTreeSet<(NodeId, bool)> =
            find_aggregations(&renamed, rules()).unwrap().iter().map(|a| (a.parent, a.compressible)).collect();
        prop_assert_eq!(tags, renamed_tags);
    }
}

#[test]
fn no_sequences_when_every_property_has_two_entries() {
    let asts = ipag::frontend::parse_mini_c("int f(int a, int b) { return a + b; }").unwrap();
    let g = build_preliminary(&asts[0]).unwrap();
    let mut dense = g.clone();
    // Give every property a second token entry.
    let props: Vec<NodeId> = dense.properties.keys().copied().collect();
    let mut next = dense.next_id();
    for p in props {
        dense.tokens.insert(next, "x".into());
        dense.edges.tp.push((next, p));
        next += 1;
    }
    assert!(find_sequences(&dense).is_empty());
    let m = merge_sequences(&dense).unwrap();
    assert_eq!(m.properties, dense.properties);
    assert_eq!(m.stage, Stage::SequenceReduced);
}

#[test]
fn report_ratios_equal_hand_sums() {
    let routines = random_corpus(8, 200, &GenOptions::default());
    let s = common::stages(&ipag::synth::program_source(&routines));
    let r = compression_report(&s.preliminary, &s.compressed).unwrap();
    let nb: usize = s.preliminary.iter().map(|g| g.tokens.len() + g.properties.len() + g.declarations.len()).sum();
    let na: usize = s.compressed.iter().map(|g| g.tokens.len() + g.properties.len() + g.declarations.len()).sum();
    let eb: usize = s.preliminary.iter().map(|g| EdgeKind::ALL.iter().map(|&k| g.edges.get(k).len()).sum::<usize>()).sum();
    let ea: usize = s.compressed.iter().map(|g| EdgeKind::ALL.iter().map(|&k| g.edges.get(k).len()).sum::<usize>()).sum();
    assert_eq!((r.nodes_before, r.nodes_after, r.edges_before, r.edges_after), (nb, na, eb, ea));
    assert!((r.node_ratio - (1.0 - na as f64 / nb as f64)).abs() < 1e-12);
    assert!((r.edge_ratio - (1.0 - ea as f64 / eb as f64)).abs() < 1e-12);
    assert_eq!(r.node_histogram.iter().sum::<usize>(), 200);
}
