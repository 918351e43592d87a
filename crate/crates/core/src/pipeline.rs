//! End-to-end question answering.
//!
//! decompose, one search per topic entity, global top-K, stack admission in
//! weight order, then a single answer call. An empty stack falls back to the
//! best path alone (or to no paths at all) and marks the result
//! low-confidence.

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CallLedger, GatewayError, ModelGateway, SubQuestionSet};
use crate::kg::{EntityId, ReasoningPath, TripleStore};
use crate::search::{
    extract_top_k, rank_paths, run_search, SearchAborted, SearchConfig, StopReason, TreeDump, TreeStats, WeightedPath,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no topic entities given")]
    NoTopicEntities,
    #[error("none of the topic entities {0:?} is in the graph")]
    NoTopicEntityInStore(Vec<String>),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Search(#[from] SearchAborted),
}

impl PipelineError {
    /// The underlying gateway error, if any.
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            PipelineError::Gateway(e) => Some(e),
            PipelineError::Search(a) => Some(&a.error),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionContext {
    pub question: String,
    pub topic_entities: Vec<EntityId>,
    pub subq: SubQuestionSet,
}

/// Admitted paths in push order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReasoningPathStack {
    entries: Vec<WeightedPath>,
}

impl ReasoningPathStack {
    pub fn entries(&self) -> &[WeightedPath] {
        &self.entries
    }

    pub fn paths(&self) -> Vec<ReasoningPath> {
        self.entries.iter().map(|w| w.path.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Refuses duplicates and anything heavier than the last entry.
    fn push(&mut self, wp: WeightedPath) -> bool {
        if self.entries.iter().any(|e| e.path == wp.path) {
            return false;
        }
        if self.entries.last().is_some_and(|last| wp.weight > last.weight) {
            return false;
        }
        self.entries.push(wp);
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicTreeStats {
    pub topic: EntityId,
    #[serde(flatten)]
    pub stats: TreeStats,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub question: String,
    pub subquestions: Vec<String>,
    pub answers: Vec<String>,
    pub stack: ReasoningPathStack,
    pub top_k: Vec<WeightedPath>,
    pub ledger: CallLedger,
    pub config: SearchConfig,
    /// The stack was empty and the answer came from the fallback.
    pub low_confidence: bool,
    pub tree_stats: Vec<TopicTreeStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trees: Option<Vec<TreeDump>>,
}

/// Decomposes the question with exactly one gateway call.
pub fn build_context(
    question: &str,
    topic_entities: &[EntityId],
    gateway: &ModelGateway,
    n: usize,
) -> Result<QuestionContext, PipelineError> {
    if question.trim().is_empty() {
        return Err(PipelineError::EmptyQuestion);
    }
    if topic_entities.is_empty() {
        return Err(PipelineError::NoTopicEntities);
    }
    let subq = gateway.decompose(question, topic_entities, n)?;
    Ok(QuestionContext { question: question.to_string(), topic_entities: topic_entities.to_vec(), subq })
}

/// Offers each path to the stack in descending weight order.
pub fn run_stack(
    top_paths: &[WeightedPath],
    ctx: &QuestionContext,
    gateway: &ModelGateway,
) -> Result<ReasoningPathStack, GatewayError> {
    let mut ordered = top_paths.to_vec();
    rank_paths(&mut ordered);
    let mut stack = ReasoningPathStack::default();
    for wp in ordered {
        let snapshot = stack.paths();
        if gateway.admit_to_stack(&snapshot, &ctx.question, &ctx.subq, &wp)? && !stack.push(wp.clone()) {
            debug!("stack refused {} (duplicate)", wp.path);
        }
    }
    Ok(stack)
}

/// Knobs for [`answer_detailed`] beyond the search config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnswerOptions {
    /// Attach a dump of every search tree to the result.
    pub keep_trees: bool,
    /// Gate paths through the stack. Without it the answer is generated
    /// from the raw top-K paths.
    pub use_stack: bool,
}

impl Default for AnswerOptions {
    fn default() -> Self {
        AnswerOptions { keep_trees: false, use_stack: true }
    }
}

/// Answers one question. See [`answer_detailed`].
pub fn answer(
    question: &str,
    topic_entities: &[EntityId],
    store: &TripleStore,
    gateway: &ModelGateway,
    config: &SearchConfig,
) -> Result<AnswerResult, PipelineError> {
    answer_detailed(question, topic_entities, store, gateway, config, AnswerOptions::default())
}

/// Checks the inputs every strategy shares and opens a per-question gateway
/// whose ledger counts only this question.
pub(crate) fn open_question(
    question: &str,
    topic_entities: &[EntityId],
    store: &TripleStore,
    gateway: &ModelGateway,
    config: &SearchConfig,
) -> Result<ModelGateway, PipelineError> {
    config.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    if question.trim().is_empty() {
        return Err(PipelineError::EmptyQuestion);
    }
    if topic_entities.is_empty() {
        return Err(PipelineError::NoTopicEntities);
    }
    if !topic_entities.iter().any(|t| store.contains_entity(t)) {
        return Err(PipelineError::NoTopicEntityInStore(topic_entities.iter().map(ToString::to_string).collect()));
    }
    Ok(match gateway.remaining() {
        Some(left) => gateway.with_budget(left),
        None => gateway.fork(),
    })
}

/// Gateway for the retrieval stage, holding back `K + 1` calls of any budget
/// for the stack and the answer.
pub(crate) fn retrieval_gateway(local: &ModelGateway, top_k: usize) -> ModelGateway {
    match local.remaining() {
        Some(left) => local.with_budget(left.saturating_sub(top_k as u64 + 1)),
        None => local.clone(),
    }
}

/// Stack admission and answer generation over already ranked paths. Makes
/// exactly one answer call.
pub(crate) fn finish(
    ctx: &QuestionContext,
    top_k: &[WeightedPath],
    gateway: &ModelGateway,
    use_stack: bool,
) -> Result<(Vec<String>, ReasoningPathStack, bool), GatewayError> {
    if !use_stack {
        let paths: Vec<ReasoningPath> = top_k.iter().map(|w| w.path.clone()).collect();
        let answers = gateway.generate_answer(&paths, &ctx.question, &ctx.subq)?;
        return Ok((answers, ReasoningPathStack::default(), false));
    }
    let stack = run_stack(top_k, ctx, gateway)?;
    if stack.is_empty() {
        let fallback: Vec<ReasoningPath> = top_k.first().map(|w| w.path.clone()).into_iter().collect();
        warn!("empty reasoning-path stack; answering from {} fallback path(s)", fallback.len());
        let answers = gateway.generate_answer(&fallback, &ctx.question, &ctx.subq)?;
        return Ok((answers, stack, true));
    }
    let answers = gateway.generate_answer(&stack.paths(), &ctx.question, &ctx.subq)?;
    Ok((answers, stack, false))
}

/// Answers one question.
///
/// The ledger in the result counts only this question's calls. When the
/// gateway has a budget, `K + 1` calls are held back from the search so the
/// stack and answer stages can still run.
pub fn answer_detailed(
    question: &str,
    topic_entities: &[EntityId],
    store: &TripleStore,
    gateway: &ModelGateway,
    config: &SearchConfig,
    options: AnswerOptions,
) -> Result<AnswerResult, PipelineError> {
    let local = open_question(question, topic_entities, store, gateway, config)?;
    let ctx = build_context(question, topic_entities, &local, config.n_subquestions)?;

    let search_gw = retrieval_gateway(&local, config.top_k);
    let mut merged = Vec::new();
    let mut tree_stats = Vec::new();
    let mut trees = options.keep_trees.then(Vec::new);
    for topic in &ctx.topic_entities {
        let tree = run_search(&ctx.subq, topic, store, &search_gw, config)?;
        merged.extend(extract_top_k(&tree, config.top_k));
        tree_stats.push(TopicTreeStats { topic: topic.clone(), stats: tree.stats(), stop: tree.stop });
        if let Some(t) = trees.as_mut() {
            t.push(tree.dump());
        }
    }
    rank_paths(&mut merged);
    merged.truncate(config.top_k);

    let (answers, stack, low_confidence) = finish(&ctx, &merged, &local, options.use_stack)?;
    Ok(AnswerResult {
        question: ctx.question,
        subquestions: ctx.subq.subs,
        answers,
        stack,
        top_k: merged,
        ledger: local.ledger_snapshot(),
        config: config.clone(),
        low_confidence,
        tree_stats,
        trees,
    })
}
