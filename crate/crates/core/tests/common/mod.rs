//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod oracle;

use std::collections::HashMap;

use ipag::embed::{embed_corpus, EmbeddedGraph, HashEmbedder, PropertyVocabulary, UnseenNames};
use ipag::frontend::parse_mini_c;
use ipag::ipag::Ipag;
use ipag::link::DEFAULT_MAX_CALL_DEPTH;
use ipag::pipeline::{run_stages, Stages};
use ipag::rules::RuleBook;
use ipag::synth::sink_dataset;

pub const DUMP_RELOCS: &str = include_str!("../fixtures/dump_relocs.c");

pub fn stages(source: &str) -> Stages {
    let asts = parse_mini_c(source).expect("source parses");
    run_stages(&asts, RuleBook::builtin(), DEFAULT_MAX_CALL_DEPTH).expect("pipeline runs")
}

pub fn graph<'a>(graphs: &'a [Ipag], name: &str) -> &'a Ipag {
    graphs.iter().find(|g| g.origin == name).unwrap_or_else(|| panic!("no graph `{name}`"))
}

/// Labelled embedded graphs of the sink dataset.
pub fn sink_graphs(seed: u64, n: usize, width: usize) -> (Vec<EmbeddedGraph>, PropertyVocabulary, Vec<Ipag>) {
    let data = sink_dataset(seed, n);
    let s = stages(&data.source);
    let labels: HashMap<&str, bool> = data.labels.iter().map(|(n, l)| (n.as_str(), *l)).collect();
    let chosen: Vec<Ipag> = s
        .complete
        .into_iter()
        .filter(|g| labels.contains_key(g.origin.as_str()))
        .collect();
    let vocab = PropertyVocabulary::from_graphs(&chosen);
    let mut embedded = embed_corpus(&chosen, &vocab, &HashEmbedder::new(width, 0), UnseenNames::Reject).expect("embeds");
    for g in &mut embedded {
        g.label = Some(labels[g.name.as_str()]);
    }
    (embedded, vocab, chosen)
}

/// Apply an id mapping to every node and edge.
pub fn rename(g: &Ipag, f: &HashMap<u32, u32>) -> Ipag {
    let mut out = g.clone();
    let map = |m: &std::collections::BTreeMap<u32, String>| m.iter().map(|(k, v)| (f[k], v.clone())).collect();
    out.tokens = map(&g.tokens);
    out.properties = map(&g.properties);
    out.declarations = map(&g.declarations);
    out.root = f[&g.root];
    for kind in ipag::ipag::EdgeKind::ALL {
        *out.edges.get_mut(kind) = g.edges.get(kind).iter().map(|(s, t)| (f[s], f[t])).collect();
    }
    out
}

/// A random bijection of the graph's ids onto a shuffled, spread-out range.
pub fn shuffled_ids(g: &Ipag, seed: u64) -> HashMap<u32, u32> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let ids: Vec<u32> = g.tokens.keys().chain(g.properties.keys()).chain(g.declarations.keys()).copied().collect();
    let mut targets: Vec<u32> = (0..ids.len() as u32).map(|i| i * 3 + 7).collect();
    targets.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    ids.into_iter().zip(targets).collect()
}
