//! Record/replay of model calls.
//!
//! Fixture files are JSONL with one record per call:
//!
//! ```text
//! {"op":"score_paths","key":"<sha256 of the canonical request>","response":{"scores":[0.9]}}
//! ```
//!
//! The key is the SHA-256 of the request serialized as JSON (field order is
//! fixed by the type definitions, so the encoding is canonical). Replay is
//! strict: an unknown request is a [`GatewayError::FixtureMiss`]. When a
//! file holds several records for one key the first one wins.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, EoSVerdict, GatewayError, ScoredRelation, SubQuestionSet};
use crate::kg::{EntityId, ReasoningPath, RelationEdge};
use crate::search::WeightedPath;

/// The inputs of one model call, as hashed into fixture keys.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request<'a> {
    Decompose {
        question: &'a str,
        topic_entities: &'a [EntityId],
        n: usize,
    },
    FilterRelations {
        subq: &'a SubQuestionSet,
        path: &'a ReasoningPath,
        candidates: &'a [RelationEdge],
        b_max: usize,
    },
    ScorePaths {
        subq: &'a SubQuestionSet,
        topic: &'a EntityId,
        candidates: &'a [ReasoningPath],
    },
    SelfCritic {
        subq: &'a SubQuestionSet,
        path: &'a ReasoningPath,
    },
    Admit {
        stack: &'a [ReasoningPath],
        question: &'a str,
        subq: &'a SubQuestionSet,
        candidate: &'a WeightedPath,
    },
    Answer {
        stack: &'a [ReasoningPath],
        question: &'a str,
        subq: &'a SubQuestionSet,
    },
}

impl Request<'_> {
    pub fn op(&self) -> &'static str {
        match self {
            Request::Decompose { .. } => "decompose",
            Request::FilterRelations { .. } => "filter_relations",
            Request::ScorePaths { .. } => "score_paths",
            Request::SelfCritic { .. } => "self_critic",
            Request::Admit { .. } => "admit",
            Request::Answer { .. } => "answer",
        }
    }
}

pub fn request_key(request: &Request<'_>) -> String {
    let bytes = serde_json::to_vec(request).expect("requests always serialize");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub op: String,
    pub key: String,
    pub response: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Subquestions {
    subquestions: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Relations {
    relations: Vec<ScoredRelation>,
}

#[derive(Serialize, Deserialize)]
struct Scores {
    scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Admission {
    admit: bool,
}

#[derive(Serialize, Deserialize)]
struct Answers {
    answers: Vec<String>,
}

/// Serves responses from a fixture file.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    records: HashMap<(String, String), serde_json::Value>,
    len: usize,
}

impl ReplayBackend {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, GatewayError> {
        let mut backend = ReplayBackend::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| GatewayError::Backend(format!("fixture read failed: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Backend(format!("fixture line {}: {e}", i + 1)))?;
            backend.len += 1;
            backend.records.entry((rec.op, rec.key)).or_insert(rec.response);
        }
        Ok(backend)
    }

    /// Number of records in the fixture file, duplicates included.
    pub fn record_count(&self) -> usize {
        self.len
    }

    fn lookup<T: DeserializeOwned>(&self, request: &Request<'_>) -> Result<T, GatewayError> {
        let key = request_key(request);
        let op = request.op();
        let value = self
            .records
            .get(&(op.to_string(), key.clone()))
            .ok_or_else(|| GatewayError::FixtureMiss { op: op.to_string(), key: key.clone() })?;
        serde_json::from_value(value.clone())
            .map_err(|e| GatewayError::Backend(format!("fixture {op}/{key} has a bad response: {e}")))
    }
}

impl Backend for ReplayBackend {
    fn decompose(&self, question: &str, topics: &[EntityId], n: usize) -> Result<Vec<String>, GatewayError> {
        let r: Subquestions = self.lookup(&Request::Decompose { question, topic_entities: topics, n })?;
        Ok(r.subquestions)
    }

    fn filter_relations(
        &self,
        subq: &SubQuestionSet,
        path: &ReasoningPath,
        candidates: &[RelationEdge],
        b_max: usize,
    ) -> Result<Vec<ScoredRelation>, GatewayError> {
        let r: Relations = self.lookup(&Request::FilterRelations { subq, path, candidates, b_max })?;
        Ok(r.relations)
    }

    fn score_paths(
        &self,
        subq: &SubQuestionSet,
        topic: &EntityId,
        candidates: &[ReasoningPath],
    ) -> Result<Vec<f64>, GatewayError> {
        let r: Scores = self.lookup(&Request::ScorePaths { subq, topic, candidates })?;
        Ok(r.scores)
    }

    fn self_critic(&self, subq: &SubQuestionSet, path: &ReasoningPath) -> Result<EoSVerdict, GatewayError> {
        self.lookup(&Request::SelfCritic { subq, path })
    }

    fn admit(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
        candidate: &WeightedPath,
    ) -> Result<bool, GatewayError> {
        let r: Admission = self.lookup(&Request::Admit { stack, question, subq, candidate })?;
        Ok(r.admit)
    }

    fn generate_answer(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
    ) -> Result<Vec<String>, GatewayError> {
        let r: Answers = self.lookup(&Request::Answer { stack, question, subq })?;
        Ok(r.answers)
    }
}

/// Proxies another backend and appends a fixture record for every
/// successful call.
pub struct RecordingBackend<B> {
    inner: B,
    sink: Mutex<Box<dyn Write + Send>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, sink: impl Write + Send + 'static) -> Self {
        RecordingBackend { inner, sink: Mutex::new(Box::new(sink)) }
    }

    fn record<T: Serialize>(&self, request: &Request<'_>, response: &T) -> Result<(), GatewayError> {
        let rec = FixtureRecord {
            op: request.op().to_string(),
            key: request_key(request),
            response: serde_json::to_value(response).map_err(|e| GatewayError::Backend(e.to_string()))?,
        };
        let line = serde_json::to_string(&rec).map_err(|e| GatewayError::Backend(e.to_string()))?;
        let mut sink = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        // One write per record so sinks shared between backends never interleave lines.
        sink.write_all(format!("{line}\n").as_bytes())
            .and_then(|_| sink.flush())
            .map_err(|e| GatewayError::Backend(format!("fixture write failed: {e}")))
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn decompose(&self, question: &str, topics: &[EntityId], n: usize) -> Result<Vec<String>, GatewayError> {
        let subquestions = self.inner.decompose(question, topics, n)?;
        let resp = Subquestions { subquestions };
        self.record(&Request::Decompose { question, topic_entities: topics, n }, &resp)?;
        Ok(resp.subquestions)
    }

    fn filter_relations(
        &self,
        subq: &SubQuestionSet,
        path: &ReasoningPath,
        candidates: &[RelationEdge],
        b_max: usize,
    ) -> Result<Vec<ScoredRelation>, GatewayError> {
        let relations = self.inner.filter_relations(subq, path, candidates, b_max)?;
        let resp = Relations { relations };
        self.record(&Request::FilterRelations { subq, path, candidates, b_max }, &resp)?;
        Ok(resp.relations)
    }

    fn score_paths(
        &self,
        subq: &SubQuestionSet,
        topic: &EntityId,
        candidates: &[ReasoningPath],
    ) -> Result<Vec<f64>, GatewayError> {
        let scores = self.inner.score_paths(subq, topic, candidates)?;
        let resp = Scores { scores };
        self.record(&Request::ScorePaths { subq, topic, candidates }, &resp)?;
        Ok(resp.scores)
    }

    fn self_critic(&self, subq: &SubQuestionSet, path: &ReasoningPath) -> Result<EoSVerdict, GatewayError> {
        let verdict = self.inner.self_critic(subq, path)?;
        self.record(&Request::SelfCritic { subq, path }, &verdict)?;
        Ok(verdict)
    }

    fn admit(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
        candidate: &WeightedPath,
    ) -> Result<bool, GatewayError> {
        let admit = self.inner.admit(stack, question, subq, candidate)?;
        self.record(&Request::Admit { stack, question, subq, candidate }, &Admission { admit })?;
        Ok(admit)
    }

    fn generate_answer(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
    ) -> Result<Vec<String>, GatewayError> {
        let answers = self.inner.generate_answer(stack, question, subq)?;
        let resp = Answers { answers };
        self.record(&Request::Answer { stack, question, subq }, &resp)?;
        Ok(resp.answers)
    }
}
