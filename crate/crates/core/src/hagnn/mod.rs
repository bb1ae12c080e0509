//! Heterogeneous graph neural network classifier.
//!
//! Six edge-typed units run depth-tiered message passing, node types are
//! pooled by global soft attention, and a small MLP head scores the graph.

pub mod checkpoint;
pub mod depth;
pub mod metrics;
pub mod model;
pub mod sage;
pub mod tape;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointError, EmbedSettings};
pub use metrics::{cross_validate, evaluate, Confusion, EvalError, EvalReport, Metrics};
pub use model::{is_vulnerable, HagnnConfig, HagnnModel, ModelError, THRESHOLD};
pub use sage::Passer;
pub use train::{train, History, TrainError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{embed_corpus, EmbedError, TextEmbedder, UnseenNames};
use crate::ipag::Ipag;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("text embedder width {found} does not match the model's {expected}")]
    Width { found: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub routine: String,
    pub score: f64,
    pub vulnerable: bool,
}

/// Score complete graphs in input order. Property names the model has not
/// seen map to the reserved index.
pub fn predict(model: &HagnnModel, graphs: &[Ipag], embedder: &dyn TextEmbedder) -> Result<Vec<Prediction>, PredictError> {
    if embedder.width() != model.d_t {
        return Err(PredictError::Width {
            found: embedder.width(),
            expected: model.d_t,
        });
    }
    let embedded = embed_corpus(graphs, &model.vocab, embedder, UnseenNames::Reserve)?;
    embedded
        .iter()
        .map(|g| {
            let (score, vulnerable) = model.classify(g)?;
            Ok(Prediction {
                routine: g.name.clone(),
                score,
                vulnerable,
            })
        })
        .collect()
}
