//! Policy/value model gateway.
//!
//! Every model interaction in the pipeline goes through [`ModelGateway`],
//! which wraps a pluggable [`Backend`] and enforces the output contract that
//! the search relies on: scores clamped to `[0,1]`, relation filtering never
//! inventing relations, sub-question counts bounded by `n`. Each backend
//! invocation is counted in a [`CallLedger`].
//!
//! Three backends ship with the crate:
//!
//! - [`LexicalOracle`]: a deterministic token-overlap model driven by a known
//!   answer set, used for tests and synthetic benchmarks.
//! - [`ReplayBackend`]: serves recorded responses from a JSONL fixture file
//!   and fails on anything it has not seen. [`RecordingBackend`] writes such
//!   files while proxying another backend.
//! - [`RemoteBackend`]: an OpenAI-compatible chat-completions client.

mod ledger;
mod lexical;
pub mod prompts;
mod remote;
mod replay;
pub mod tokens;

use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, ReasoningPath, RelationEdge};
use crate::search::WeightedPath;

pub use ledger::{CallKind, CallLedger};
pub use lexical::{split_clauses, LexicalOracle, PathNoise};
pub use remote::{RemoteBackend, RemoteConfig};
pub use replay::{request_key, FixtureRecord, RecordingBackend, ReplayBackend, Request};

use ledger::LedgerCell;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("backend error: {0}")]
    Backend(String),
    #[error("no replay fixture for {op} (key {key})")]
    FixtureMiss { op: String, key: String },
    #[error("score_paths called with no candidates")]
    EmptyCandidates,
    #[error("call budget of {0} exhausted")]
    BudgetExhausted(u64),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// The original question and its decomposition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestionSet {
    pub original: String,
    pub subs: Vec<String>,
}

impl SubQuestionSet {
    pub fn new(original: impl Into<String>, subs: Vec<String>) -> Result<Self, GatewayError> {
        let original = original.into();
        if original.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty question".into()));
        }
        if subs.is_empty() || subs.iter().any(|s| s.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest("sub-questions must be non-empty".into()));
        }
        Ok(SubQuestionSet { original, subs })
    }

    /// The trivial decomposition: the question is its own sub-question.
    pub fn identity(question: impl Into<String>) -> Result<Self, GatewayError> {
        let q = question.into();
        SubQuestionSet::new(q.clone(), vec![q])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRelation {
    pub edge: RelationEdge,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    pub path: ReasoningPath,
    pub score: f64,
}

/// Self-critic output: whether the path already answers the question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EoSVerdict {
    pub end_of_search: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// A policy/value model implementation.
///
/// Backends return raw answers; [`ModelGateway`] validates and normalizes
/// them, so implementations need not clamp, sort or deduplicate.
pub trait Backend: Send + Sync {
    fn decompose(&self, question: &str, topics: &[EntityId], n: usize) -> Result<Vec<String>, GatewayError>;

    fn filter_relations(
        &self,
        subq: &SubQuestionSet,
        path: &ReasoningPath,
        candidates: &[RelationEdge],
        b_max: usize,
    ) -> Result<Vec<ScoredRelation>, GatewayError>;

    /// One score per candidate, in input order.
    fn score_paths(
        &self,
        subq: &SubQuestionSet,
        topic: &EntityId,
        candidates: &[ReasoningPath],
    ) -> Result<Vec<f64>, GatewayError>;

    fn self_critic(&self, subq: &SubQuestionSet, path: &ReasoningPath) -> Result<EoSVerdict, GatewayError>;

    fn admit(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
        candidate: &WeightedPath,
    ) -> Result<bool, GatewayError>;

    fn generate_answer(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
    ) -> Result<Vec<String>, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn decompose(&self, question: &str, topics: &[EntityId], n: usize) -> Result<Vec<String>, GatewayError> {
        (**self).decompose(question, topics, n)
    }

    fn filter_relations(
        &self,
        subq: &SubQuestionSet,
        path: &ReasoningPath,
        candidates: &[RelationEdge],
        b_max: usize,
    ) -> Result<Vec<ScoredRelation>, GatewayError> {
        (**self).filter_relations(subq, path, candidates, b_max)
    }

    fn score_paths(
        &self,
        subq: &SubQuestionSet,
        topic: &EntityId,
        candidates: &[ReasoningPath],
    ) -> Result<Vec<f64>, GatewayError> {
        (**self).score_paths(subq, topic, candidates)
    }

    fn self_critic(&self, subq: &SubQuestionSet, path: &ReasoningPath) -> Result<EoSVerdict, GatewayError> {
        (**self).self_critic(subq, path)
    }

    fn admit(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
        candidate: &WeightedPath,
    ) -> Result<bool, GatewayError> {
        (**self).admit(stack, question, subq, candidate)
    }

    fn generate_answer(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
    ) -> Result<Vec<String>, GatewayError> {
        (**self).generate_answer(stack, question, subq)
    }
}

/// Contract-enforcing front end for a [`Backend`] with call accounting.
///
/// Cloning shares the ledger. [`fork`](Self::fork) starts a fresh ledger
/// whose increments also flow into every ancestor's ledger, which is how
/// per-question counts and batch totals are kept at the same time.
#[derive(Clone)]
pub struct ModelGateway {
    backend: Arc<dyn Backend>,
    ledgers: Vec<Arc<LedgerCell>>,
    budget: Option<u64>,
}

impl std::fmt::Debug for ModelGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelGateway")
            .field("ledger", &self.ledger_snapshot())
            .field("budget", &self.budget)
            .finish()
    }
}

impl ModelGateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<dyn Backend>) -> Self {
        ModelGateway { backend, ledgers: vec![Arc::new(LedgerCell::default())], budget: None }
    }

    /// Gateway over the same backend with a fresh ledger that also reports
    /// to this one. The budget, if any, is not inherited.
    pub fn fork(&self) -> Self {
        let mut ledgers = Vec::with_capacity(self.ledgers.len() + 1);
        ledgers.push(Arc::new(LedgerCell::default()));
        ledgers.extend(self.ledgers.iter().cloned());
        ModelGateway { backend: self.backend.clone(), ledgers, budget: None }
    }

    /// A fork that refuses calls once `cap` invocations have been made on it.
    pub fn with_budget(&self, cap: u64) -> Self {
        let mut g = self.fork();
        g.budget = Some(cap);
        g
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    /// Calls still allowed under the budget; `None` when unlimited.
    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|cap| cap.saturating_sub(self.ledgers[0].total()))
    }

    pub fn ledger_snapshot(&self) -> CallLedger {
        self.ledgers[0].snapshot()
    }

    fn charge(&self, kind: CallKind) -> Result<(), GatewayError> {
        if let Some(cap) = self.budget {
            if self.ledgers[0].total() >= cap {
                return Err(GatewayError::BudgetExhausted(cap));
            }
        }
        for cell in &self.ledgers {
            cell.bump(kind);
        }
        Ok(())
    }

    pub fn decompose(&self, question: &str, topics: &[EntityId], n: usize) -> Result<SubQuestionSet, GatewayError> {
        if question.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty question".into()));
        }
        if n == 0 {
            return Err(GatewayError::InvalidRequest("n must be at least 1".into()));
        }
        self.charge(CallKind::Decompose)?;
        let mut subs: Vec<String> = self
            .backend
            .decompose(question, topics, n)?
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if subs.len() > n {
            warn!("decompose returned {} sub-questions, keeping {n}", subs.len());
            subs.truncate(n);
        }
        if subs.is_empty() {
            warn!("decompose returned nothing usable; falling back to the question itself");
            subs.push(question.trim().to_string());
        }
        SubQuestionSet::new(question, subs)
    }

    /// Empty `candidates` short-circuits without a backend call.
    pub fn filter_relations(
        &self,
        subq: &SubQuestionSet,
        path: &ReasoningPath,
        candidates: &[RelationEdge],
        b_max: usize,
    ) -> Result<Vec<ScoredRelation>, GatewayError> {
        if b_max == 0 {
            return Err(GatewayError::InvalidRequest("b_max must be at least 1".into()));
        }
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        self.charge(CallKind::FilterRelations)?;
        let raw = self.backend.filter_relations(subq, path, candidates, b_max)?;

        let mut best: BTreeMap<&RelationEdge, f64> = BTreeMap::new();
        for sr in raw {
            let Some(edge) = candidates.iter().find(|c| **c == sr.edge) else {
                warn!("dropping relation {} not among the candidates", sr.edge);
                continue;
            };
            let score = clamp_score(sr.score, "relation");
            let slot = best.entry(edge).or_insert(score);
            *slot = slot.max(score);
        }
        let mut out: Vec<ScoredRelation> =
            best.into_iter().map(|(edge, score)| ScoredRelation { edge: edge.clone(), score }).collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.edge.cmp(&b.edge)));
        out.truncate(b_max);
        Ok(out)
    }

    pub fn score_paths(
        &self,
        subq: &SubQuestionSet,
        topic: &EntityId,
        candidates: &[ReasoningPath],
    ) -> Result<Vec<ScoredPath>, GatewayError> {
        if candidates.is_empty() {
            return Err(GatewayError::EmptyCandidates);
        }
        if let Some(p) = candidates.iter().find(|p| &p.origin != topic) {
            return Err(GatewayError::InvalidRequest(format!("path {p} does not start at {topic}")));
        }
        self.charge(CallKind::ScorePaths)?;
        let scores = self.backend.score_paths(subq, topic, candidates)?;
        if scores.len() != candidates.len() {
            return Err(GatewayError::Backend(format!(
                "expected {} path scores, got {}",
                candidates.len(),
                scores.len()
            )));
        }
        Ok(candidates
            .iter()
            .zip(scores)
            .map(|(path, s)| ScoredPath { path: path.clone(), score: clamp_score(s, "path") })
            .collect())
    }

    pub fn self_critic(&self, subq: &SubQuestionSet, path: &ReasoningPath) -> Result<EoSVerdict, GatewayError> {
        if path.is_empty() {
            return Err(GatewayError::InvalidRequest("the root path is never critiqued".into()));
        }
        self.charge(CallKind::SelfCritic)?;
        self.backend.self_critic(subq, path)
    }

    pub fn admit_to_stack(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
        candidate: &WeightedPath,
    ) -> Result<bool, GatewayError> {
        if !(0.0..=1.0).contains(&candidate.weight) {
            return Err(GatewayError::InvalidRequest(format!("weight {} outside [0,1]", candidate.weight)));
        }
        self.charge(CallKind::Admit)?;
        self.backend.admit(stack, question, subq, candidate)
    }

    /// Answers are trimmed and deduplicated, first occurrence wins.
    pub fn generate_answer(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
    ) -> Result<Vec<String>, GatewayError> {
        self.charge(CallKind::Answer)?;
        let mut out: Vec<String> = Vec::new();
        for a in self.backend.generate_answer(stack, question, subq)? {
            let a = a.trim().to_string();
            if !a.is_empty() && !out.contains(&a) {
                out.push(a);
            }
        }
        Ok(out)
    }
}

fn clamp_score(score: f64, what: &str) -> f64 {
    if score.is_nan() {
        warn!("{what} score is NaN; using 0");
        return 0.0;
    }
    if !(0.0..=1.0).contains(&score) {
        warn!("{what} score {score} outside [0,1]; clamping");
    }
    score.clamp(0.0, 1.0)
}
