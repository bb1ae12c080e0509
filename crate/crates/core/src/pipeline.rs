//! Whole-corpus stage drivers: build, compress, link.

use rayon::prelude::*;
use thiserror::Error;

use crate::compress::{compress, CompressError};
use crate::frontend::{Ast, FrontendError};
use crate::ipag::{build_preliminary, Ipag};
use crate::link::{index_call_depths, link_calls, CallDepthIndex, LinkError};
use crate::rules::{RuleBook, RulesError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Rules(#[from] RulesError),
    #[error("routine `{routine}`: {source}")]
    Compress { routine: String, source: CompressError },
    #[error(transparent)]
    Link(#[from] LinkError),
}

/// Preliminary graphs, in input order.
pub fn build_all(asts: &[Ast]) -> Result<Vec<Ipag>, PipelineError> {
    Ok(asts.par_iter().map(build_preliminary).collect::<Result<Vec<_>, _>>()?)
}

/// Compress every graph with its language's ruleset.
pub fn compress_all(graphs: &[Ipag], rules: &RuleBook) -> Result<Vec<Ipag>, PipelineError> {
    graphs
        .par_iter()
        .map(|g| {
            let set = rules.get(g.language)?;
            compress(g, set).map_err(|source| PipelineError::Compress {
                routine: g.origin.clone(),
                source,
            })
        })
        .collect()
}

/// Resolve calls and splice callees into callers.
pub fn link_all(
    graphs: &[Ipag],
    rules: &RuleBook,
    max_call_depth: usize,
) -> Result<(Vec<Ipag>, CallDepthIndex), PipelineError> {
    let index = index_call_depths(graphs, rules, max_call_depth)?;
    let linked = link_calls(graphs, &index)?;
    Ok((linked, index))
}

/// Every stage of a corpus.
#[derive(Debug, Clone)]
pub struct Stages {
    pub preliminary: Vec<Ipag>,
    pub compressed: Vec<Ipag>,
    pub complete: Vec<Ipag>,
    pub index: CallDepthIndex,
}

pub fn run_stages(asts: &[Ast], rules: &RuleBook, max_call_depth: usize) -> Result<Stages, PipelineError> {
    let preliminary = build_all(asts)?;
    let compressed = compress_all(&preliminary, rules)?;
    let (complete, index) = link_all(&compressed, rules, max_call_depth)?;
    Ok(Stages {
        preliminary,
        compressed,
        complete,
        index,
    })
}
