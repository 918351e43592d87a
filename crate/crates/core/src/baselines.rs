//! Baseline retrieval strategies: level-synchronous beam search, greedy
//! search and a seeded Best-of-N sampler.
//!
//! They share the gateway operations with the tree search so a comparison
//! isolates the search strategy. All three score every one-hop extension of
//! a path in one batched call and use that path score as the weight, so a
//! beam of width one walks exactly the greedy path.
//!
//! Best-of-N is a plain skeleton: independent stochastic walks with softmax
//! sampling, not an adaptive planner.
//!
//! Every strategy stops cleanly when the call budget runs out and returns
//! what it has fully scored so far.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use log::debug;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{GatewayError, ModelGateway, ScoredPath, SubQuestionSet};
use crate::kg::{EntityId, ReasoningPath, TripleStore};
use crate::pipeline::{
    build_context, finish, open_question, retrieval_gateway, AnswerResult, PipelineError, QuestionContext,
};
use crate::search::{rank_paths, SearchConfig, WeightedPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Beam,
    Greedy,
    BestOfN,
}

impl FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "beam" => Ok(StrategyKind::Beam),
            "greedy" => Ok(StrategyKind::Greedy),
            "best_of_n" | "bestofn" | "bon" => Ok(StrategyKind::BestOfN),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Beam => "beam",
            StrategyKind::Greedy => "greedy",
            StrategyKind::BestOfN => "best-of-n",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Beam width `D`, or the sample count `N` for Best-of-N. Unused by greedy.
    pub width: usize,
    pub depth_max: usize,
    /// Softmax temperature for Best-of-N; at or below `1e-9` sampling
    /// becomes argmax.
    pub temperature: f64,
    pub seed: u64,
    /// Most gateway calls per question, all stages included.
    pub budget: Option<u64>,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            width: match kind {
                StrategyKind::Beam => 3,
                StrategyKind::Greedy => 1,
                StrategyKind::BestOfN => 8,
            },
            depth_max: 5,
            temperature: 0.1,
            seed: 0,
            budget: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.width < 1 || self.depth_max < 1 {
            return Err("strategy width and depth must be at least 1".into());
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err("temperature must be non-negative".into());
        }
        Ok(())
    }
}

/// Turns a budget stop into a clean end of retrieval.
fn soft<T>(r: Result<T, GatewayError>) -> Result<Option<T>, GatewayError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(GatewayError::BudgetExhausted(cap)) => {
            debug!("call budget of {cap} reached; stopping retrieval");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// All one-hop extensions of `path`, without the hop straight back along
/// the inverse of the arriving edge.
fn extensions(store: &TripleStore, path: &ReasoningPath) -> Vec<ReasoningPath> {
    let back = path.last_edge().map(|e| e.inverse());
    let pred = path.predecessor();
    let mut out = Vec::new();
    for edge in store.adjacent_relations(path.terminal()) {
        let damp = back.as_ref() == Some(&edge);
        for tail in store.tail_entities(path.terminal(), &edge) {
            if damp && Some(&tail) == pred {
                continue;
            }
            out.push(path.extend(edge.clone(), tail));
        }
    }
    out
}

fn argmax(scored: Vec<ScoredPath>) -> Option<ScoredPath> {
    let mut best: Option<(ScoredPath, String)> = None;
    for sp in scored {
        let key = sp.path.to_string();
        let better = match &best {
            None => true,
            Some((b, bk)) => sp.score > b.score || (sp.score == b.score && key < *bk),
        };
        if better {
            best = Some((sp, key));
        }
    }
    best.map(|(sp, _)| sp)
}

/// Level-synchronous beam search of width `D` from one topic entity. Each
/// frontier path has its one-hop extensions scored in a single call; the
/// `D` best of the whole level survive. Paths judged final, and frontier
/// paths with nowhere left to go, leave the beam as results.
pub fn beam_retrieve(
    subq: &SubQuestionSet,
    topic: &EntityId,
    store: &TripleStore,
    gateway: &ModelGateway,
    cfg: &StrategyConfig,
) -> Result<Vec<WeightedPath>, GatewayError> {
    let mut beam: Vec<WeightedPath> = Vec::new();
    let mut finished: Vec<WeightedPath> = Vec::new();
    let mut frontier = vec![ReasoningPath::root(topic.clone())];
    'levels: for _ in 0..cfg.depth_max {
        let mut level: Vec<WeightedPath> = Vec::new();
        let mut stopped = false;
        for (i, path) in frontier.iter().enumerate() {
            let cands = extensions(store, path);
            if cands.is_empty() {
                finished.extend(beam.get(i).cloned());
                continue;
            }
            let Some(scored) = soft(gateway.score_paths(subq, topic, &cands))? else {
                stopped = true;
                break;
            };
            level.extend(scored.into_iter().map(|sp| WeightedPath { path: sp.path, weight: sp.score }));
        }
        rank_paths(&mut level);
        level.truncate(cfg.width);
        if stopped {
            beam = level;
            break;
        }
        beam.clear();
        frontier.clear();
        for wp in level {
            match soft(gateway.self_critic(subq, &wp.path))? {
                Some(v) if v.end_of_search => finished.push(wp),
                Some(_) => {
                    frontier.push(wp.path.clone());
                    beam.push(wp);
                }
                None => {
                    beam.push(wp);
                    break 'levels;
                }
            }
        }
        if frontier.is_empty() {
            break;
        }
    }
    finished.extend(beam);
    rank_paths(&mut finished);
    Ok(finished)
}

/// One path, extended by the best-scoring hop until end of search, the depth
/// limit or a dead end.
pub fn greedy_retrieve(
    subq: &SubQuestionSet,
    topic: &EntityId,
    store: &TripleStore,
    gateway: &ModelGateway,
    depth_max: usize,
) -> Result<Vec<WeightedPath>, GatewayError> {
    let mut current: Option<WeightedPath> = None;
    let mut path = ReasoningPath::root(topic.clone());
    for _ in 0..depth_max {
        let cands = extensions(store, &path);
        if cands.is_empty() {
            break;
        }
        let Some(scored) = soft(gateway.score_paths(subq, topic, &cands))? else { break };
        let best = argmax(scored).expect("non-empty candidates");
        path = best.path.clone();
        current = Some(WeightedPath { path: best.path, weight: best.score });
        match soft(gateway.self_critic(subq, &path))? {
            Some(v) if !v.end_of_search => {}
            _ => break,
        }
    }
    Ok(current.into_iter().collect())
}

/// Caches extension scores and verdicts so repeated prefixes across walks
/// are paid for once.
struct WalkMemo<'a> {
    subq: &'a SubQuestionSet,
    topic: &'a EntityId,
    store: &'a TripleStore,
    gateway: &'a ModelGateway,
    scores: HashMap<ReasoningPath, Vec<ScoredPath>>,
    verdicts: HashMap<ReasoningPath, bool>,
}

impl WalkMemo<'_> {
    fn scored(&mut self, path: &ReasoningPath) -> Result<Option<Vec<ScoredPath>>, GatewayError> {
        if let Some(s) = self.scores.get(path) {
            return Ok(Some(s.clone()));
        }
        let cands = extensions(self.store, path);
        let scored = if cands.is_empty() {
            Vec::new()
        } else {
            match soft(self.gateway.score_paths(self.subq, self.topic, &cands))? {
                Some(s) => s,
                None => return Ok(None),
            }
        };
        self.scores.insert(path.clone(), scored.clone());
        Ok(Some(scored))
    }

    fn eos(&mut self, path: &ReasoningPath) -> Result<Option<bool>, GatewayError> {
        if let Some(v) = self.verdicts.get(path) {
            return Ok(Some(*v));
        }
        let Some(v) = soft(self.gateway.self_critic(self.subq, path))? else { return Ok(None) };
        self.verdicts.insert(path.clone(), v.end_of_search);
        Ok(Some(v.end_of_search))
    }
}

fn sample(scored: &[ScoredPath], temperature: f64, rng: &mut ChaCha8Rng) -> ScoredPath {
    if temperature <= 1e-9 {
        return argmax(scored.to_vec()).expect("non-empty candidates");
    }
    let max = scored.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scored.iter().map(|s| ((s.score - max) / temperature).exp()).collect();
    let dist = WeightedIndex::new(&weights).expect("softmax weights are positive");
    scored[dist.sample(rng)].clone()
}

/// The raw end points of `N` seeded stochastic walks, one entry per walk
/// that left the root. Each hop is drawn from a softmax over the scores of
/// the current path's extensions.
pub fn best_of_n_walks(
    subq: &SubQuestionSet,
    topic: &EntityId,
    store: &TripleStore,
    gateway: &ModelGateway,
    cfg: &StrategyConfig,
) -> Result<Vec<WeightedPath>, GatewayError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut memo =
        WalkMemo { subq, topic, store, gateway, scores: HashMap::new(), verdicts: HashMap::new() };
    let mut walks = Vec::new();
    'walks: for _ in 0..cfg.width {
        let mut path = ReasoningPath::root(topic.clone());
        let mut current: Option<WeightedPath> = None;
        for _ in 0..cfg.depth_max {
            let Some(scored) = memo.scored(&path)? else {
                walks.extend(current);
                break 'walks;
            };
            if scored.is_empty() {
                break;
            }
            let pick = sample(&scored, cfg.temperature, &mut rng);
            path = pick.path.clone();
            current = Some(WeightedPath { path: pick.path, weight: pick.score });
            match memo.eos(&path)? {
                Some(false) => {}
                Some(true) => break,
                None => {
                    walks.extend(current);
                    break 'walks;
                }
            }
        }
        walks.extend(current);
    }
    Ok(walks)
}

/// Deduplicated Best-of-N walks, best first.
pub fn best_of_n_retrieve(
    subq: &SubQuestionSet,
    topic: &EntityId,
    store: &TripleStore,
    gateway: &ModelGateway,
    cfg: &StrategyConfig,
) -> Result<Vec<WeightedPath>, GatewayError> {
    let mut out: Vec<WeightedPath> = Vec::new();
    for w in best_of_n_walks(subq, topic, store, gateway, cfg)? {
        if !out.iter().any(|o| o.path == w.path) {
            out.push(w);
        }
    }
    rank_paths(&mut out);
    Ok(out)
}

/// Runs the configured strategy from every topic entity present in the
/// store and returns the merged paths, best first.
pub fn retrieve(
    ctx: &QuestionContext,
    store: &TripleStore,
    gateway: &ModelGateway,
    cfg: &StrategyConfig,
) -> Result<Vec<WeightedPath>, GatewayError> {
    let mut merged = Vec::new();
    for topic in ctx.topic_entities.iter().filter(|t| store.contains_entity(t)) {
        let paths = match cfg.kind {
            StrategyKind::Beam => beam_retrieve(&ctx.subq, topic, store, gateway, cfg)?,
            StrategyKind::Greedy => greedy_retrieve(&ctx.subq, topic, store, gateway, cfg.depth_max)?,
            StrategyKind::BestOfN => best_of_n_retrieve(&ctx.subq, topic, store, gateway, cfg)?,
        };
        merged.extend(paths);
    }
    rank_paths(&mut merged);
    Ok(merged)
}

/// Full question answering with a baseline retriever in place of the tree
/// search. Decomposition, the stack and the answer stage are shared with
/// the main pipeline; `search` supplies `n`, `K` and `α`.
pub fn answer_with_strategy(
    question: &str,
    topic_entities: &[EntityId],
    store: &TripleStore,
    gateway: &ModelGateway,
    search: &SearchConfig,
    strategy: &StrategyConfig,
) -> Result<AnswerResult, PipelineError> {
    strategy.validate().map_err(PipelineError::InvalidConfig)?;
    let capped;
    let gateway = match strategy.budget {
        Some(cap) => {
            capped = gateway.with_budget(cap);
            &capped
        }
        None => gateway,
    };
    let local = open_question(question, topic_entities, store, gateway, search)?;
    let ctx = build_context(question, topic_entities, &local, search.n_subquestions)?;
    let mut paths = retrieve(&ctx, store, &retrieval_gateway(&local, search.top_k), strategy)?;
    paths.truncate(search.top_k);
    let (answers, stack, low_confidence) = finish(&ctx, &paths, &local, true)?;
    Ok(AnswerResult {
        question: ctx.question,
        subquestions: ctx.subq.subs,
        answers,
        stack,
        top_k: paths,
        ledger: local.ledger_snapshot(),
        config: search.clone(),
        low_confidence,
        tree_stats: Vec::new(),
        trees: None,
    })
}
