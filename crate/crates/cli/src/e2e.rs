//! The whole pipeline from one manifest.

use std::collections::BTreeMap;
use std::path::Path;

use ipag::compress::{compression_report, merge_sequences, CompressionReport};
use ipag::embed::EmbeddedGraph;
use ipag::frontend::export_interchange;
use ipag::hagnn::{cross_validate, train, Checkpoint, EmbedSettings, EvalReport, HagnnModel, Prediction};
use ipag::ipag::{Ipag, IpagCounts, Stage};
use ipag::pipeline::{run_stages, Stages};
use serde::Serialize;

use crate::artifacts::{write_atomic, write_graphs, write_json};
use crate::commands::{attach_labels, embed_graphs, load_asts, load_rules, read_labels, total_counts, EmbedChoice};
use crate::manifest::{self, Expectation};
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct ExpectationResult {
    pub routine: String,
    pub stage: Stage,
    pub expected: BTreeMap<String, usize>,
    pub found: Option<BTreeMap<String, usize>>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct TrainingSummary {
    pub graphs: usize,
    pub vulnerable: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

#[derive(Debug, Serialize)]
pub struct E2eReport {
    pub routines: usize,
    pub stages: BTreeMap<Stage, IpagCounts>,
    pub compression: CompressionReport,
    pub expectations: Vec<ExpectationResult>,
    pub max_call_depth: usize,
    pub unlinked_recursive_calls: usize,
    pub embedding: EmbedSettings,
    pub vocabulary: usize,
    pub training: Option<TrainingSummary>,
    pub evaluation: Option<EvalReport>,
    pub vulnerable_predictions: Option<usize>,
}

fn count_map(c: IpagCounts) -> BTreeMap<String, usize> {
    serde_json::from_value(serde_json::to_value(c).expect("counts serialize")).expect("counts are a flat map")
}

fn check(e: &Expectation, stages: &Stages) -> ExpectationResult {
    let find = |graphs: &[Ipag]| graphs.iter().find(|g| g.origin == e.routine).cloned();
    let graph = match e.stage {
        Stage::Preliminary => find(&stages.preliminary),
        Stage::SequenceReduced => find(&stages.preliminary).and_then(|g| merge_sequences(&g).ok()),
        Stage::AggregationReduced => find(&stages.compressed),
        Stage::Complete => find(&stages.complete),
    };
    let found = graph.map(|g| {
        let all = count_map(g.counts());
        e.counts.keys().map(|k| (k.clone(), all[k])).collect::<BTreeMap<_, _>>()
    });
    ExpectationResult {
        routine: e.routine.clone(),
        stage: e.stage,
        pass: found.as_ref() == Some(&e.counts),
        expected: e.counts.clone(),
        found,
    }
}

pub fn run(manifest_path: &Path) -> Result<E2eReport, CliError> {
    let r = manifest::load(manifest_path)?;
    let m = &r.manifest;
    let out = &m.output;
    std::fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;
    tempfile::NamedTempFile::new_in(out).map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;

    let rules = load_rules(m.rules.as_deref())?;
    let asts = load_asts(&r.sources, &r.interchange, &rules)?;
    if asts.is_empty() {
        return Err(CliError::Failed("the inputs define no routines".into()));
    }
    let stages = run_stages(&asts, &rules, m.max_call_depth)?;
    if m.checkpoints {
        write_atomic(&out.join("asts.json"), export_interchange(&asts).as_bytes())?;
        write_graphs(&out.join("preliminary.json"), Stage::Preliminary, &stages.preliminary)?;
        write_graphs(&out.join("compressed.json"), Stage::AggregationReduced, &stages.compressed)?;
        write_graphs(&out.join("complete.json"), Stage::Complete, &stages.complete)?;
        write_json(&out.join("call_index.json"), &stages.index)?;
    }
    let expectations: Vec<ExpectationResult> = m.expect.iter().map(|e| check(e, &stages)).collect();

    let choice = EmbedChoice {
        mode: m.embedder.mode,
        endpoint: m.embedder.endpoint.clone().or_else(|| std::env::var("IPAG_EMBED_ENDPOINT").ok()),
        width: m.embedder.width,
        strict: m.embedder.strict,
        seed: m.seed,
        cache: None,
    };
    let mut embedded = embed_graphs(&stages.complete, &choice)?;
    let labels = m.labels.as_deref().map(read_labels).transpose()?;
    if let Some(l) = &labels {
        attach_labels(&mut embedded.graphs, l);
    }
    if m.checkpoints {
        write_json(&out.join("embedded.json"), &embedded)?;
    }

    let data: Vec<EmbeddedGraph> = embedded.graphs.iter().filter(|g| g.label.is_some()).cloned().collect();
    let vulnerable = data.iter().filter(|g| g.label == Some(true)).count();
    let (mut training, mut evaluation, mut flagged) = (None, None, None);
    if labels.is_some() && vulnerable > 0 && vulnerable < data.len() {
        let mut model = HagnnModel::new(m.model.clone(), choice.width, embedded.vocab.clone());
        let history = train(&mut model, &data)?;
        write_atomic(
            &out.join("model.json"),
            Checkpoint::from_model(&model, embedded.embed.clone()).to_json().as_bytes(),
        )?;
        let predictions: Vec<Prediction> = embedded
            .graphs
            .iter()
            .map(|g| {
                let (score, vulnerable) = model.classify(g)?;
                Ok(Prediction {
                    routine: g.name.clone(),
                    score,
                    vulnerable,
                })
            })
            .collect::<Result<_, ipag::hagnn::ModelError>>()?;
        flagged = Some(predictions.iter().filter(|p| p.vulnerable).count());
        write_json(&out.join("predictions.json"), &predictions)?;
        training = Some(TrainingSummary {
            graphs: data.len(),
            vulnerable,
            epochs: history.epochs.len(),
            final_loss: history.final_loss,
            final_accuracy: history.final_accuracy,
        });
        if let Some(k) = m.folds {
            let report = cross_validate(&data, &m.model, &embedded.vocab, k)?;
            write_json(&out.join("evaluation.json"), &report)?;
            evaluation = Some(report);
        }
    } else if labels.is_some() {
        log::warn!("training skipped: need labelled graphs of both classes, found {vulnerable} of {}", data.len());
    }

    let report = E2eReport {
        routines: asts.len(),
        stages: BTreeMap::from([
            (Stage::Preliminary, total_counts(&stages.preliminary)),
            (Stage::AggregationReduced, total_counts(&stages.compressed)),
            (Stage::Complete, total_counts(&stages.complete)),
        ]),
        compression: compression_report(&stages.preliminary, &stages.compressed)?,
        expectations,
        max_call_depth: stages.index.depths.iter().copied().max().unwrap_or(0),
        unlinked_recursive_calls: stages.index.broken_edges.len(),
        embedding: embedded.embed.clone(),
        vocabulary: embedded.vocab.len(),
        training,
        evaluation,
        vulnerable_predictions: flagged,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}
