//! Self-critic Monte Carlo tree search over the knowledge graph.
//!
//! Each iteration selects an expandable node by UCT, expands it with one
//! child per filtered relation (the best-scoring tail of that relation),
//! values each child by fusing the relation and path scores, asks the
//! self-critic whether the child already answers the question, and
//! propagates visit-weighted means back to the root.
//!
//! Nodes live in an arena ([`ReasoningTree`]); children always have larger
//! ids than their parent.

mod dump;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, ModelGateway, SubQuestionSet};
use crate::kg::{EntityId, ReasoningPath, TripleStore};

pub use dump::{NodeDump, TreeDump};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UctMode {
    /// `Q/N + c·sqrt(ln N(p) / N)`.
    #[default]
    Literal,
    /// `Q + c·sqrt(ln N(p) / N)`, treating `Q` as a mean.
    MeanValue,
}

impl FromStr for UctMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "literal" => Ok(UctMode::Literal),
            "mean_value" | "meanvalue" | "mean" => Ok(UctMode::MeanValue),
            other => Err(format!("unknown UCT mode {other:?} (expected literal or mean-value)")),
        }
    }
}

impl fmt::Display for UctMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UctMode::Literal => "literal",
            UctMode::MeanValue => "mean-value",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// `H`, search iterations per topic entity.
    pub iterations: usize,
    /// `b`, most children per expansion.
    pub width_cap: usize,
    /// `c`, UCT exploration constant.
    pub exploration: f64,
    /// `α`, weight of the relation score in node values.
    pub alpha: f64,
    pub depth_max: usize,
    /// `K`, weighted paths kept after search.
    pub top_k: usize,
    /// `n`, most sub-questions from decomposition.
    pub n_subquestions: usize,
    pub uct_mode: UctMode,
    pub seed: u64,
    /// Turning this off skips the self-critic call; no node is ever an
    /// end-of-search leaf.
    pub self_critic: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: 24,
            width_cap: 7,
            exploration: std::f64::consts::SQRT_2,
            alpha: 0.33,
            depth_max: 5,
            top_k: 10,
            n_subquestions: 3,
            uct_mode: UctMode::Literal,
            seed: 0,
            self_critic: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.to_string()));
        if self.iterations < 1 {
            return bad("iterations must be at least 1");
        }
        if self.width_cap < 1 {
            return bad("width cap must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0,1]");
        }
        if self.depth_max < 1 {
            return bad("depth_max must be at least 1");
        }
        if self.top_k < 1 {
            return bad("top_k must be at least 1");
        }
        if self.n_subquestions < 1 {
            return bad("n_subquestions must be at least 1");
        }
        if !self.exploration.is_finite() || self.exploration < 0.0 {
            return bad("exploration must be a finite non-negative number");
        }
        Ok(())
    }

    /// Upper bound on gateway calls one iteration can make.
    pub fn calls_per_iteration(&self) -> u64 {
        2 * self.width_cap as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("UCT is undefined for an unvisited child")]
    UnvisitedChild,
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("no expandable node left")]
    Exhausted,
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
}

/// A gateway failure during search, with the tree built up to that point.
#[derive(Debug, Clone, Error)]
#[error("search aborted: {error}")]
pub struct SearchAborted {
    pub error: GatewayError,
    pub tree: Box<ReasoningTree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub entity: EntityId,
    pub path: ReasoningPath,
    pub visits: u64,
    pub value: f64,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub eos_leaf: bool,
    /// Set once the node has been through expansion, even if that produced
    /// no children.
    pub expanded: bool,
    /// Relation and path scores that produced the node's initial value.
    pub relation_score: f64,
    pub path_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Ran all `H` iterations.
    Iterations,
    /// No expandable node was left.
    Exhausted,
    /// The gateway budget ran out.
    Budget,
    /// The topic entity is not in the store.
    MissingTopic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTree {
    nodes: Vec<SearchNode>,
    pub iterations: usize,
    pub stop: Option<StopReason>,
}

/// A path with the value of the node it ends at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPath {
    pub path: ReasoningPath,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TreeStats {
    pub nodes: usize,
    pub max_depth: usize,
    pub eos_leaves: usize,
    pub iterations: usize,
}

impl ReasoningTree {
    /// A tree holding only the root, with `N = 1` and `Q = 0`.
    pub fn new(topic: EntityId) -> Self {
        let root = SearchNode {
            entity: topic.clone(),
            path: ReasoningPath::root(topic),
            visits: 1,
            value: 0.0,
            depth: 0,
            parent: None,
            children: Vec::new(),
            eos_leaf: false,
            expanded: false,
            relation_score: 0.0,
            path_score: 0.0,
        };
        ReasoningTree { nodes: vec![root], iterations: 0, stop: None }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id.0]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &SearchNode)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    /// Appends a child under `parent` with `N = 0`; the caller sets the value.
    pub fn add_child(&mut self, parent: NodeId, path: ReasoningPath) -> NodeId {
        let id = NodeId(self.nodes.len());
        let depth = path.len();
        self.nodes.push(SearchNode {
            entity: path.terminal().clone(),
            path,
            visits: 0,
            value: 0.0,
            depth,
            parent: Some(parent),
            children: Vec::new(),
            eos_leaf: false,
            expanded: false,
            relation_score: 0.0,
            path_score: 0.0,
        });
        self.nodes[parent.0].children.push(id);
        id
    }

    pub fn stats(&self) -> TreeStats {
        TreeStats {
            nodes: self.nodes.len(),
            max_depth: self.nodes.iter().map(|n| n.depth).max().unwrap_or(0),
            eos_leaves: self.nodes.iter().filter(|n| n.eos_leaf).count(),
            iterations: self.iterations,
        }
    }

    fn is_expandable(&self, id: NodeId, config: &SearchConfig) -> bool {
        let n = self.node(id);
        !n.eos_leaf && !n.expanded && n.depth < config.depth_max
    }

    /// Per node: does its subtree still contain an expandable node?
    fn live_subtrees(&self, config: &SearchConfig) -> Vec<bool> {
        let mut live = vec![false; self.nodes.len()];
        for i in (0..self.nodes.len()).rev() {
            live[i] = self.is_expandable(NodeId(i), config)
                || self.nodes[i].children.iter().any(|c| live[c.0]);
        }
        live
    }
}

pub fn uct_score(child: &SearchNode, parent_visits: u64, c: f64, mode: UctMode) -> Result<f64, SearchError> {
    if child.visits == 0 {
        return Err(SearchError::UnvisitedChild);
    }
    if parent_visits == 0 {
        return Err(SearchError::OutOfRange("parent has no visits".into()));
    }
    let n = child.visits as f64;
    let explore = c * ((parent_visits as f64).ln() / n).sqrt();
    let exploit = match mode {
        UctMode::Literal => child.value / n,
        UctMode::MeanValue => child.value,
    };
    Ok(exploit + explore)
}

/// `α·relation_score + (1−α)·path_score`.
pub fn evaluate(relation_score: f64, path_score: f64, alpha: f64) -> Result<f64, SearchError> {
    for (name, v) in [("relation score", relation_score), ("path score", path_score), ("alpha", alpha)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(SearchError::OutOfRange(format!("{name} {v} outside [0,1]")));
        }
    }
    Ok((alpha * relation_score + (1.0 - alpha) * path_score).clamp(0.0, 1.0))
}

/// Bumps `N` on every ancestor of `new_node` and recomputes each ancestor's
/// `Q` as the visit-weighted mean of its children.
pub fn backpropagate(tree: &mut ReasoningTree, new_node: NodeId) {
    let mut cur = tree.node(new_node).parent;
    while let Some(id) = cur {
        let (num, den) = tree.node(id).children.iter().fold((0.0, 0.0), |(num, den), c| {
            let ch = tree.node(*c);
            (num + ch.visits as f64 * ch.value, den + ch.visits as f64)
        });
        let node = tree.node_mut(id);
        node.visits += 1;
        if den > 0.0 {
            node.value = num / den;
        }
        cur = node.parent;
    }
}

fn tie_key(node: &SearchNode) -> (&EntityId, String) {
    (&node.entity, node.path.to_string())
}

/// Walks down from the root by UCT to an expandable node. Subtrees with
/// nothing left to expand are skipped.
pub fn select(tree: &ReasoningTree, config: &SearchConfig) -> Result<NodeId, SearchError> {
    let live = tree.live_subtrees(config);
    let mut cur = tree.root();
    if !live[cur.0] {
        return Err(SearchError::Exhausted);
    }
    loop {
        if tree.is_expandable(cur, config) {
            return Ok(cur);
        }
        let node = tree.node(cur);
        let candidates: Vec<NodeId> = node.children.iter().copied().filter(|c| live[c.0]).collect();
        let unvisited = candidates
            .iter()
            .copied()
            .filter(|c| tree.node(*c).visits == 0)
            .min_by(|a, b| tie_key(tree.node(*a)).cmp(&tie_key(tree.node(*b))));
        let next = match unvisited {
            Some(c) => c,
            None => {
                let mut best: Option<(NodeId, f64)> = None;
                for c in candidates {
                    let score = uct_score(tree.node(c), node.visits, config.exploration, config.uct_mode)?;
                    let better = match best {
                        None => true,
                        Some((b, bs)) => match score.total_cmp(&bs) {
                            Ordering::Greater => true,
                            Ordering::Less => false,
                            Ordering::Equal => tie_key(tree.node(c)) < tie_key(tree.node(b)),
                        },
                    };
                    if better {
                        best = Some((c, score));
                    }
                }
                // A live non-expandable node always has a live child.
                best.ok_or(SearchError::Exhausted)?.0
            }
        };
        cur = next;
    }
}

/// Expands `node`, returning the children that were fully built before any
/// error. Each child has its value set, `N = 1` and its end-of-search flag;
/// backpropagation is left to the caller.
fn expand_partial(
    tree: &mut ReasoningTree,
    node: NodeId,
    subq: &SubQuestionSet,
    store: &TripleStore,
    gateway: &ModelGateway,
    config: &SearchConfig,
) -> (Vec<NodeId>, Option<GatewayError>) {
    let path = tree.node(node).path.clone();
    let entity = tree.node(node).entity.clone();
    let candidates = store.adjacent_relations(&entity);
    if candidates.is_empty() {
        debug!("{entity} has no adjacent relations; dead leaf");
        tree.node_mut(node).expanded = true;
        return (Vec::new(), None);
    }
    let filtered = match gateway.filter_relations(subq, &path, &candidates, config.width_cap) {
        Ok(f) => f,
        Err(e) => return (Vec::new(), Some(e)),
    };
    tree.node_mut(node).expanded = true;
    // The inverse of the arriving edge leads straight back; skip that hop.
    let back = path.last_edge().map(|e| e.inverse());
    let mut created = Vec::new();
    for rel in filtered.into_iter().take(config.width_cap) {
        let mut tails = store.tail_entities(&entity, &rel.edge);
        if back.as_ref() == Some(&rel.edge) {
            let pred = path.predecessor().cloned();
            tails.retain(|t| Some(t) != pred.as_ref());
        }
        if tails.is_empty() {
            debug!("relation {} from {entity} has no usable tails", rel.edge);
            continue;
        }
        let cand_paths: Vec<ReasoningPath> = tails.iter().map(|t| path.extend(rel.edge.clone(), t.clone())).collect();
        let scored = match gateway.score_paths(subq, &path.origin, &cand_paths) {
            Ok(s) => s,
            Err(e) => return (created, Some(e)),
        };
        // Tails arrive sorted, so the first maximum is the smallest id.
        let best = scored
            .into_iter()
            .reduce(|a, b| if b.score > a.score { b } else { a })
            .expect("score_paths returns one score per candidate");
        let value = match evaluate(rel.score, best.score, config.alpha) {
            Ok(v) => v,
            Err(e) => return (created, Some(GatewayError::Backend(e.to_string()))),
        };
        let eos = if config.self_critic {
            match gateway.self_critic(subq, &best.path) {
                Ok(v) => v.end_of_search,
                Err(e) => return (created, Some(e)),
            }
        } else {
            false
        };
        let child = tree.add_child(node, best.path);
        let c = tree.node_mut(child);
        c.visits = 1;
        c.value = value;
        c.relation_score = rel.score;
        c.path_score = best.score;
        c.eos_leaf = eos;
        created.push(child);
    }
    (created, None)
}

/// Expands one node. On error the children completed so far stay attached.
pub fn expand(
    tree: &mut ReasoningTree,
    node: NodeId,
    subq: &SubQuestionSet,
    store: &TripleStore,
    gateway: &ModelGateway,
    config: &SearchConfig,
) -> Result<Vec<NodeId>, GatewayError> {
    if !tree.is_expandable(node, config) {
        return Err(GatewayError::InvalidRequest(format!("node {} is not expandable", node.0)));
    }
    match expand_partial(tree, node, subq, store, gateway, config) {
        (children, None) => Ok(children),
        (_, Some(e)) => Err(e),
    }
}

/// Runs up to `H` select/expand/backpropagate iterations from `topic`.
///
/// A missing topic yields a root-only tree without any gateway call. When the
/// budget runs out the search stops and keeps every completed child.
pub fn run_search(
    subq: &SubQuestionSet,
    topic: &EntityId,
    store: &TripleStore,
    gateway: &ModelGateway,
    config: &SearchConfig,
) -> Result<ReasoningTree, SearchAborted> {
    let mut tree = ReasoningTree::new(topic.clone());
    if let Err(e) = config.validate() {
        return Err(SearchAborted { error: GatewayError::InvalidRequest(e.to_string()), tree: Box::new(tree) });
    }
    if !store.contains_entity(topic) {
        warn!("topic entity {topic} is not in the graph; skipping search");
        tree.stop = Some(StopReason::MissingTopic);
        return Ok(tree);
    }
    tree.stop = Some(StopReason::Iterations);
    while tree.iterations < config.iterations {
        let node = match select(&tree, config) {
            Ok(n) => n,
            Err(SearchError::Exhausted) => {
                debug!("search from {topic} exhausted after {} iterations", tree.iterations);
                tree.stop = Some(StopReason::Exhausted);
                break;
            }
            Err(e) => return Err(SearchAborted { error: GatewayError::Backend(e.to_string()), tree: Box::new(tree) }),
        };
        let (children, err) = expand_partial(&mut tree, node, subq, store, gateway, config);
        for c in &children {
            backpropagate(&mut tree, *c);
        }
        match err {
            None => tree.iterations += 1,
            Some(GatewayError::BudgetExhausted(cap)) => {
                debug!("call budget of {cap} reached during search from {topic}");
                if !children.is_empty() {
                    tree.iterations += 1;
                }
                tree.stop = Some(StopReason::Budget);
                break;
            }
            Some(error) => return Err(SearchAborted { error, tree: Box::new(tree) }),
        }
    }
    Ok(tree)
}

/// Orders weighted paths by weight descending, then shorter first, then by
/// rendered path.
pub fn rank_paths(paths: &mut [WeightedPath]) {
    paths.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.path.len().cmp(&b.path.len()))
            .then_with(|| a.path.to_string().cmp(&b.path.to_string()))
    });
}

/// The `K` highest-valued non-root nodes as weighted paths.
pub fn extract_top_k(tree: &ReasoningTree, k: usize) -> Vec<WeightedPath> {
    let mut all: Vec<WeightedPath> = tree
        .nodes()
        .filter(|(id, _)| *id != tree.root())
        .map(|(_, n)| WeightedPath { path: n.path.clone(), weight: n.value })
        .collect();
    rank_paths(&mut all);
    all.truncate(k);
    all
}
