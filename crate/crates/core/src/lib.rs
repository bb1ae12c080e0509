//! Vulnerability detection over compressed, call-linked program graphs.
//!
//! The pipeline turns routine ASTs into typed graphs (`ipag`), shrinks them
//! (`compress`), splices in called routines (`link`), embeds nodes and edges
//! (`embed`) and classifies each graph with a heterogeneous GNN (`hagnn`).

pub mod frontend;
pub mod compress;
pub mod ipag;
pub mod link;
pub mod rules;
pub mod embed;
pub mod hagnn;
pub mod synth;
pub mod pipeline;
