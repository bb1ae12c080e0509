//! Subcommand implementations shared by the individual stages and `e2e`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ipag::compress::{compression_report, merge_sequences, CompressionReport};
use ipag::embed::{
    embed_corpus, CachedEmbedder, EmbedCache, EmbedError, EmbedMode, EmbeddedGraph, HashEmbedder, PropertyVocabulary,
    ServiceEmbedder, TextEmbedder, UnseenNames,
};
use ipag::frontend::{export_interchange, load_ast_interchange, parse_mini_c_with_vocabulary, Ast, Language};
use ipag::hagnn::{
    cross_validate, evaluate, predict, train, Checkpoint, EmbedSettings, HagnnConfig, HagnnModel, Metrics,
};
use ipag::ipag::{Ipag, IpagCounts, Stage};
use ipag::link::CallDepthIndex;
use ipag::pipeline::{build_all, compress_all, link_all};
use ipag::rules::RuleBook;
use serde::Serialize;

use crate::artifacts::{emit_json, read_graphs, read_text, write_atomic, write_graphs, write_json, EmbeddedFile};
use crate::labels::load_labels;
use crate::manifest::expand;
use crate::CliError;

pub fn load_rules(path: Option<&Path>) -> Result<RuleBook, CliError> {
    match path {
        Some(p) => RuleBook::load(p).map_err(|e| CliError::Input {
            path: p.to_path_buf(),
            message: e.to_string(),
        }),
        None => Ok(RuleBook::builtin().clone()),
    }
}

/// Parse mini-C sources and load interchange files, in the order given.
pub fn load_asts(sources: &[PathBuf], interchange: &[PathBuf], rules: &RuleBook) -> Result<Vec<Ast>, CliError> {
    let c = rules.get(Language::C)?;
    let mut asts = Vec::new();
    for path in sources {
        let text = read_text(path)?;
        let parsed = parse_mini_c_with_vocabulary(&text, c).map_err(|e| CliError::Input {
            path: path.clone(),
            message: e.to_string(),
        })?;
        asts.extend(parsed);
    }
    for path in interchange {
        let corpus = load_ast_interchange(path).map_err(|e| CliError::Input {
            path: path.clone(),
            message: e.to_string(),
        })?;
        asts.extend(corpus.asts);
    }
    Ok(asts)
}

/// Expand source globs given on the command line.
pub fn expand_sources(patterns: &[String]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in patterns {
        out.extend(expand(Path::new(""), p)?);
    }
    Ok(out)
}

fn require_inputs(sources: &[PathBuf], interchange: &[PathBuf]) -> Result<(), CliError> {
    if sources.is_empty() && interchange.is_empty() {
        return Err(CliError::Usage("give mini-C sources or --ast-in files".into()));
    }
    Ok(())
}

pub fn parse(sources: &[PathBuf], interchange: &[PathBuf], rules: &RuleBook, out: &Path) -> Result<(), CliError> {
    require_inputs(sources, interchange)?;
    let asts = load_asts(sources, interchange, rules)?;
    log::info!("parsed {} routines", asts.len());
    write_atomic(out, export_interchange(&asts).as_bytes())
}

/// Build graphs and carry them through to `stage`.
pub fn build(
    sources: &[PathBuf],
    interchange: &[PathBuf],
    rules: &RuleBook,
    stage: Stage,
    max_call_depth: usize,
    out: &Path,
) -> Result<(), CliError> {
    require_inputs(sources, interchange)?;
    let asts = load_asts(sources, interchange, rules)?;
    let graphs = build_all(&asts)?;
    let graphs = match stage {
        Stage::Preliminary => graphs,
        Stage::SequenceReduced => graphs.iter().map(merge_sequences).collect::<Result<_, _>>()?,
        Stage::AggregationReduced => compress_all(&graphs, rules)?,
        Stage::Complete => {
            let (complete, index) = link_all(&compress_all(&graphs, rules)?, rules, max_call_depth)?;
            report_links(&index);
            complete
        }
    };
    write_graphs(out, stage, &graphs)
}

fn report_links(index: &CallDepthIndex) {
    for (caller, callee) in &index.broken_edges {
        log::warn!("recursive call {caller} -> {callee} was not linked");
    }
    eprintln!(
        "caller sample ratio: {:.4} over {} routines",
        index.caller_sample_ratio(),
        index.names.len()
    );
}

pub fn compress(input: &Path, rules: &RuleBook, out: &Path) -> Result<(), CliError> {
    let graphs = read_graphs(input, &[Stage::Preliminary])?;
    let compressed = compress_all(&graphs, rules)?;
    let r = compression_report(&graphs, &compressed)?;
    log::info!(
        "{} routines: node reduction {:.1}%, edge reduction {:.1}%",
        graphs.len(),
        100.0 * r.node_ratio,
        100.0 * r.edge_ratio
    );
    write_graphs(out, Stage::AggregationReduced, &compressed)
}

pub fn link(input: &Path, rules: &RuleBook, max_call_depth: usize, out: &Path, index_out: Option<&Path>) -> Result<(), CliError> {
    let graphs = read_graphs(input, &[Stage::AggregationReduced])?;
    let (complete, index) = link_all(&graphs, rules, max_call_depth)?;
    report_links(&index);
    if let Some(p) = index_out {
        write_json(p, &index)?;
    }
    write_graphs(out, Stage::Complete, &complete)
}

pub fn total_counts<'a>(graphs: impl IntoIterator<Item = &'a Ipag>) -> IpagCounts {
    graphs.into_iter().fold(IpagCounts::default(), |mut t, g| {
        let c = g.counts();
        t.tokens += c.tokens;
        t.properties += c.properties;
        t.declarations += c.declarations;
        t.pd += c.pd;
        t.pp += c.pp;
        t.tp += c.tp;
        t.tt += c.tt;
        t.td += c.td;
        t.dt += c.dt;
        t
    })
}

#[derive(Debug, Serialize)]
pub struct StatsReport {
    pub stage: Stage,
    pub routines: usize,
    pub counts: IpagCounts,
    pub baseline_stage: Stage,
    pub reduction: CompressionReport,
}

/// Totals of one graph file, and reductions against `before` (or against
/// itself, which gives zero reductions).
pub fn stats(input: &Path, before: Option<&Path>) -> Result<StatsReport, CliError> {
    let graphs = read_graphs(input, &[])?;
    let stage = graphs.first().map_or(Stage::Preliminary, |g| g.stage);
    let baseline = match before {
        Some(p) => read_graphs(p, &[])?,
        None => graphs.clone(),
    };
    let baseline_stage = baseline.first().map_or(stage, |g| g.stage);
    if baseline.iter().map(|g| &g.origin).ne(graphs.iter().map(|g| &g.origin)) {
        return Err(CliError::Failed("the two graph files hold different routines".into()));
    }
    Ok(StatsReport {
        stage,
        routines: graphs.len(),
        counts: total_counts(&graphs),
        baseline_stage,
        reduction: compression_report(&baseline, &graphs)?,
    })
}

/// Plain-text rendering of a stats report.
pub fn stats_table(r: &StatsReport) -> String {
    let c = &r.counts;
    let red = &r.reduction;
    let mut t = format!("{} routines at stage {} (baseline {})\n\n", r.routines, r.stage, r.baseline_stage);
    t.push_str("nodes   tokens  properties  declarations\n");
    t.push_str(&format!("        {:>6}  {:>10}  {:>12}\n\n", c.tokens, c.properties, c.declarations));
    t.push_str("edges   pd      pp      tp      tt      td      dt\n");
    t.push_str(&format!(
        "        {:<7} {:<7} {:<7} {:<7} {:<7} {}\n\n",
        c.pd, c.pp, c.tp, c.tt, c.td, c.dt
    ));
    t.push_str("        before  after   reduction\n");
    t.push_str(&format!(
        "nodes   {:<7} {:<7} {:.1}%\n",
        red.nodes_before,
        red.nodes_after,
        100.0 * red.node_ratio
    ));
    t.push_str(&format!(
        "edges   {:<7} {:<7} {:.1}%\n\n",
        red.edges_before,
        red.edges_after,
        100.0 * red.edge_ratio
    ));
    t.push_str("node reduction   routines\n");
    for (i, n) in red.node_histogram.iter().enumerate() {
        t.push_str(&format!("{:>3}%-{:>3}%       {n}\n", 10 * i, 10 * (i + 1)));
    }
    t
}

/// Text embedder choice shared by `embed`, `predict` and `e2e`.
#[derive(Debug, Clone)]
pub struct EmbedChoice {
    pub mode: EmbedMode,
    pub endpoint: Option<String>,
    pub width: usize,
    pub strict: bool,
    pub seed: u64,
    pub cache: Option<PathBuf>,
}

impl EmbedChoice {
    pub fn settings(&self) -> EmbedSettings {
        EmbedSettings {
            mode: self.mode,
            width: self.width,
            seed: self.seed,
        }
    }
}

struct Boxed(Box<dyn TextEmbedder>);

impl TextEmbedder for Boxed {
    fn width(&self) -> usize {
        self.0.width()
    }

    fn mode(&self) -> EmbedMode {
        self.0.mode()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        self.0.embed_batch(texts)
    }
}

fn make_embedder(choice: &EmbedChoice) -> Result<Box<dyn TextEmbedder>, CliError> {
    if choice.width == 0 {
        return Err(CliError::Usage("embedding width must be positive".into()));
    }
    match choice.mode {
        EmbedMode::Hash => Ok(Box::new(HashEmbedder::new(choice.width, choice.seed))),
        EmbedMode::Service => {
            let endpoint = choice.endpoint.as_deref().ok_or_else(|| {
                CliError::Usage("service embeddings need --embed-endpoint or IPAG_EMBED_ENDPOINT".into())
            })?;
            let service = ServiceEmbedder::new(endpoint, choice.width, choice.strict, choice.seed);
            match service.health() {
                Ok(h) => log::info!("embedding service {} ({}), native width {}", h.model_id, h.status, h.width),
                Err(e) if choice.strict => return Err(e.into()),
                Err(e) => log::warn!("embedding service health check failed: {e}"),
            }
            Ok(Box::new(service))
        }
    }
}

/// Run `f` with the chosen embedder, saving the cache afterwards if one is set.
pub fn with_embedder<T>(
    choice: &EmbedChoice,
    f: impl FnOnce(&dyn TextEmbedder) -> Result<T, CliError>,
) -> Result<T, CliError> {
    let inner = make_embedder(choice)?;
    match &choice.cache {
        None => f(inner.as_ref()),
        Some(path) => {
            let cached = CachedEmbedder::new(Boxed(inner), EmbedCache::load(path)?);
            let out = f(&cached)?;
            cached.into_cache().save(path)?;
            Ok(out)
        }
    }
}

/// Attach labels to graphs by routine name; returns how many were labelled.
pub fn attach_labels(graphs: &mut [EmbeddedGraph], labels: &BTreeMap<String, bool>) -> usize {
    let names: std::collections::BTreeSet<&str> = graphs.iter().map(|g| g.name.as_str()).collect();
    let missing: Vec<&str> = labels.keys().map(String::as_str).filter(|n| !names.contains(n)).collect();
    if !missing.is_empty() {
        log::warn!("{} labelled routines are not in the corpus: {}", missing.len(), missing.join(", "));
    }
    let mut n = 0;
    for g in graphs {
        g.label = labels.get(&g.name).copied();
        n += usize::from(g.label.is_some());
    }
    n
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, bool>, CliError> {
    load_labels(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn embed_graphs(graphs: &[Ipag], choice: &EmbedChoice) -> Result<EmbeddedFile, CliError> {
    let vocab = PropertyVocabulary::from_graphs(graphs);
    let embedded = with_embedder(choice, |e| Ok(embed_corpus(graphs, &vocab, e, UnseenNames::Reject)?))?;
    Ok(EmbeddedFile::new(choice.settings(), vocab, embedded))
}

pub fn embed(input: &Path, labels: Option<&Path>, choice: &EmbedChoice, out: &Path) -> Result<(), CliError> {
    let graphs = read_graphs(input, &[Stage::Complete])?;
    let mut file = embed_graphs(&graphs, choice)?;
    if let Some(p) = labels {
        let n = attach_labels(&mut file.graphs, &read_labels(p)?);
        log::info!("{n} of {} graphs labelled", file.graphs.len());
    }
    write_json(out, &file)
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<HagnnConfig, CliError> {
    let mut config = match path {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| CliError::Input {
            path: p.to_path_buf(),
            message: format!("malformed config: {e}"),
        })?,
        None => HagnnConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().map_err(CliError::Failed)?;
    Ok(config)
}

/// The labelled graphs of an embedded file, after applying `labels`.
fn labelled(mut file: EmbeddedFile, labels: Option<&Path>) -> Result<(EmbeddedFile, Vec<EmbeddedGraph>), CliError> {
    if let Some(p) = labels {
        attach_labels(&mut file.graphs, &read_labels(p)?);
    }
    let chosen: Vec<EmbeddedGraph> = file.graphs.iter().filter(|g| g.label.is_some()).cloned().collect();
    if chosen.len() < file.graphs.len() {
        log::warn!("{} unlabelled graphs are left out", file.graphs.len() - chosen.len());
    }
    Ok((file, chosen))
}

pub fn train_model(
    input: &Path,
    labels: Option<&Path>,
    config: HagnnConfig,
    model_out: &Path,
    history_out: Option<&Path>,
) -> Result<(), CliError> {
    let (file, data) = labelled(EmbeddedFile::read(input)?, labels)?;
    let mut model = HagnnModel::new(config, file.embed.width, file.vocab.clone());
    let history = train(&mut model, &data)?;
    log::info!(
        "trained on {} graphs: loss {:.4}, accuracy {:.3}",
        data.len(),
        history.final_loss,
        history.final_accuracy
    );
    write_atomic(model_out, Checkpoint::from_model(&model, file.embed).to_json().as_bytes())?;
    if let Some(p) = history_out {
        write_json(p, &history)?;
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(HagnnModel, EmbedSettings), CliError> {
    let input = |message: String| CliError::Input {
        path: path.to_path_buf(),
        message,
    };
    Checkpoint::load(path)
        .map_err(|e| input(e.to_string()))?
        .into_model()
        .map_err(|e| input(e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct HeldOut {
    pub graphs: usize,
    pub confusion: ipag::hagnn::Confusion,
    pub metrics: Metrics,
}

pub fn eval(
    input: &Path,
    labels: Option<&Path>,
    config: HagnnConfig,
    folds: usize,
    model: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (file, data) = labelled(EmbeddedFile::read(input)?, labels)?;
    match model {
        Some(m) => {
            let (model, settings) = load_model(m)?;
            if settings != file.embed {
                return Err(CliError::Failed(format!(
                    "model was trained on {:?} embeddings but the input holds {:?}",
                    settings, file.embed
                )));
            }
            let confusion = evaluate(&model, &data)?;
            emit_json(
                out,
                &HeldOut {
                    graphs: data.len(),
                    metrics: confusion.metrics(),
                    confusion,
                },
            )
        }
        None => {
            let report = cross_validate(&data, &config, &file.vocab, folds)?;
            emit_json(out, &report)
        }
    }
}

pub fn predict_routines(
    input: &Path,
    model: &Path,
    endpoint: Option<String>,
    strict: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let graphs = read_graphs(input, &[Stage::Complete])?;
    let (model, settings) = load_model(model)?;
    let choice = EmbedChoice {
        mode: settings.mode,
        endpoint,
        width: settings.width,
        strict,
        seed: settings.seed,
        cache: None,
    };
    let predictions = with_embedder(&choice, |e| Ok(predict(&model, &graphs, e)?))?;
    emit_json(out, &predictions)
}
