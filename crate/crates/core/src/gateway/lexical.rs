//! Deterministic token-overlap oracle.
//!
//! The oracle knows the answer set of the question it is asked about and
//! otherwise judges by token overlap with the question and its
//! sub-questions:
//!
//! - relation score: fraction of the relation's tokens found in the question
//!   context; relations scoring 0 are filtered out.
//! - path score: 1 when the path ends at a target, otherwise
//!   `partial_weight` times the best overlap of any hop (relation or entity)
//!   after the topic entity.
//! - end of search: the path ends at a target.
//! - admission: reject duplicates, accept targets, reject paths the stack
//!   already extends, otherwise accept relevant paths weighing at least
//!   `admit_threshold`.
//! - answers: the terminal entities of the stack, in stack order.
//! - decomposition: split at top-level `and` / `which` / `that` clause
//!   boundaries, at most `n` pieces.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use super::tokens::{overlap, tokenize};
use super::{Backend, EoSVerdict, GatewayError, ScoredRelation, SubQuestionSet};
use crate::kg::{EntityId, ReasoningPath, RelationEdge};
use crate::search::WeightedPath;

pub const DEFAULT_PARTIAL_WEIGHT: f64 = 0.5;
pub const DEFAULT_ADMIT_THRESHOLD: f64 = 0.5;

/// Seeded perturbation of path scores, uniform in `[-amplitude, amplitude]`
/// and a pure function of `(seed, path)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathNoise {
    pub seed: u64,
    pub amplitude: f64,
}

impl PathNoise {
    fn offset(&self, path: &ReasoningPath) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(path.to_string().as_bytes());
        let digest = h.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let unit = u64::from_le_bytes(word) as f64 / u64::MAX as f64;
        (2.0 * unit - 1.0) * self.amplitude
    }
}

#[derive(Debug, Clone)]
pub struct LexicalOracle {
    targets: BTreeSet<EntityId>,
    partial_weight: f64,
    admit_threshold: f64,
    noise: Option<PathNoise>,
}

impl LexicalOracle {
    pub fn new(targets: impl IntoIterator<Item = EntityId>) -> Self {
        LexicalOracle {
            targets: targets.into_iter().collect(),
            partial_weight: DEFAULT_PARTIAL_WEIGHT,
            admit_threshold: DEFAULT_ADMIT_THRESHOLD,
            noise: None,
        }
    }

    pub fn with_noise(mut self, noise: PathNoise) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn with_partial_weight(mut self, w: f64) -> Self {
        self.partial_weight = w.clamp(0.0, 1.0);
        self
    }

    pub fn with_admit_threshold(mut self, t: f64) -> Self {
        self.admit_threshold = t;
        self
    }

    pub fn targets(&self) -> &BTreeSet<EntityId> {
        &self.targets
    }

    fn context(subq: &SubQuestionSet) -> BTreeSet<String> {
        let mut ctx = tokenize(&subq.original);
        for s in &subq.subs {
            ctx.extend(tokenize(s));
        }
        ctx
    }

    /// Token overlap of a single relation name with the question context.
    pub fn relation_score(&self, subq: &SubQuestionSet, relation: &str) -> f64 {
        overlap(relation, &Self::context(subq))
    }

    /// Path score before noise.
    pub fn clean_path_score(&self, subq: &SubQuestionSet, path: &ReasoningPath) -> f64 {
        if self.targets.contains(path.terminal()) {
            return 1.0;
        }
        let ctx = Self::context(subq);
        let best = path
            .steps
            .iter()
            .flat_map(|s| [overlap(&s.edge.relation, &ctx), overlap(s.entity.as_str(), &ctx)])
            .fold(0.0, f64::max);
        self.partial_weight * best
    }

    pub fn path_score(&self, subq: &SubQuestionSet, path: &ReasoningPath) -> f64 {
        let clean = self.clean_path_score(subq, path);
        match &self.noise {
            Some(n) => (clean + n.offset(path)).clamp(0.0, 1.0),
            None => clean,
        }
    }
}

/// Byte offsets where a new clause begins.
fn clause_starts(question: &str) -> Vec<(usize, usize)> {
    // (end of previous clause, start of next clause)
    let mut cuts = Vec::new();
    let mut depth = 0i32;
    let mut in_quote = false;
    let mut words = Vec::new();
    let mut start = None;
    for (i, c) in question.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            '"' => in_quote = !in_quote,
            _ => {}
        }
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                words.push((s, i, depth == 0 && !in_quote));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push((s, question.len(), depth == 0 && !in_quote));
    }
    for (idx, &(s, e, top_level)) in words.iter().enumerate() {
        if idx == 0 || idx + 1 == words.len() || !top_level {
            continue;
        }
        let word = question[s..e].to_lowercase();
        let prev_end = words[idx - 1].1;
        match word.as_str() {
            "and" => cuts.push((prev_end, words[idx + 1].0)),
            // "and which" is one boundary, already cut at the "and".
            "which" | "that" if question[words[idx - 1].0..prev_end].eq_ignore_ascii_case("and") => {}
            "which" | "that" => cuts.push((prev_end, s)),
            _ => {}
        }
    }
    cuts
}

/// Clause split used by the oracle's decomposition.
pub fn split_clauses(question: &str, n: usize) -> Vec<String> {
    let question = question.trim();
    if n <= 1 {
        return vec![question.to_string()];
    }
    let mut cuts = clause_starts(question);
    // Adjacent markers ("and and") would produce overlapping cuts.
    let mut last_start = 0;
    cuts.retain(|&(prev_end, next_start)| {
        let keep = prev_end >= last_start;
        if keep {
            last_start = next_start;
        }
        keep
    });
    let mut out = Vec::new();
    let mut from = 0;
    for &(prev_end, next_start) in cuts.iter().take(n - 1) {
        let piece = question[from..prev_end].trim().trim_end_matches(',').trim();
        if !piece.is_empty() {
            out.push(piece.to_string());
        }
        from = next_start;
    }
    let last = question[from..].trim();
    if !last.is_empty() {
        out.push(last.to_string());
    }
    if out.is_empty() {
        out.push(question.to_string());
    }
    out
}

impl Backend for LexicalOracle {
    fn decompose(&self, question: &str, _topics: &[EntityId], n: usize) -> Result<Vec<String>, GatewayError> {
        Ok(split_clauses(question, n))
    }

    fn filter_relations(
        &self,
        subq: &SubQuestionSet,
        _path: &ReasoningPath,
        candidates: &[RelationEdge],
        b_max: usize,
    ) -> Result<Vec<ScoredRelation>, GatewayError> {
        let ctx = Self::context(subq);
        let mut scored: Vec<ScoredRelation> = candidates
            .iter()
            .map(|edge| ScoredRelation { edge: edge.clone(), score: overlap(&edge.relation, &ctx) })
            .filter(|s| s.score > 0.0)
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.edge.cmp(&b.edge)));
        scored.truncate(b_max);
        Ok(scored)
    }

    fn score_paths(
        &self,
        subq: &SubQuestionSet,
        _topic: &EntityId,
        candidates: &[ReasoningPath],
    ) -> Result<Vec<f64>, GatewayError> {
        Ok(candidates.iter().map(|p| self.path_score(subq, p)).collect())
    }

    fn self_critic(&self, _subq: &SubQuestionSet, path: &ReasoningPath) -> Result<EoSVerdict, GatewayError> {
        let hit = self.targets.contains(path.terminal());
        Ok(EoSVerdict {
            end_of_search: hit,
            rationale: hit.then(|| format!("{} is a known answer", path.terminal())),
        })
    }

    fn admit(
        &self,
        stack: &[ReasoningPath],
        _question: &str,
        subq: &SubQuestionSet,
        candidate: &WeightedPath,
    ) -> Result<bool, GatewayError> {
        let path = &candidate.path;
        if stack.contains(path) {
            return Ok(false);
        }
        if self.targets.contains(path.terminal()) {
            return Ok(true);
        }
        if stack.iter().any(|s| path.is_strict_prefix_of(s)) {
            return Ok(false);
        }
        let ctx = Self::context(subq);
        let relevant = path
            .steps
            .last()
            .is_some_and(|s| overlap(&s.edge.relation, &ctx) > 0.0 || overlap(s.entity.as_str(), &ctx) > 0.0);
        Ok(relevant && candidate.weight >= self.admit_threshold)
    }

    fn generate_answer(
        &self,
        stack: &[ReasoningPath],
        _question: &str,
        _subq: &SubQuestionSet,
    ) -> Result<Vec<String>, GatewayError> {
        let mut out: Vec<String> = Vec::new();
        for p in stack {
            let t = p.terminal().to_string();
            if !out.contains(&t) {
                out.push(t);
            }
        }
        Ok(out)
    }
}
