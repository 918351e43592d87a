//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs::File;
use std::path::PathBuf;

use rtsog_core::eval::{load_dataset, DatasetRecord};
use rtsog_core::kg::{ingest_triples, EntityId, ReasoningPath, RelationEdge, TripleFormat, TripleStore};

pub const FIG4_QUESTION: &str = "The national anthem Afghan National Anthem is from the country which practices what religions?";
pub const FIG5_QUESTION: &str =
    "What educational institution with men's sports team named Wisconsin Badgers did Russell Wilson go to?";

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn e(s: &str) -> EntityId {
    EntityId::new(s).unwrap()
}

pub fn load_kg(name: &str) -> TripleStore {
    let file = File::open(fixtures().join(name)).unwrap();
    ingest_triples(file, TripleFormat::Tsv).unwrap().store
}

pub fn fig4() -> TripleStore {
    load_kg("fig4.tsv")
}

pub fn fig5() -> TripleStore {
    load_kg("fig5.tsv")
}

pub fn mini() -> (TripleStore, Vec<DatasetRecord>) {
    let records = load_dataset(File::open(fixtures().join("mini.jsonl")).unwrap()).unwrap();
    (load_kg("mini_kg.tsv"), records)
}

pub fn out(rel: &str) -> RelationEdge {
    RelationEdge::outgoing(rel)
}

pub fn inc(rel: &str) -> RelationEdge {
    RelationEdge::incoming(rel)
}

/// Builds a path from `origin` through `(edge, entity)` hops.
pub fn path(origin: &str, hops: &[(RelationEdge, &str)]) -> ReasoningPath {
    hops.iter().fold(ReasoningPath::root(e(origin)), |p, (edge, ent)| p.extend(edge.clone(), e(ent)))
}

pub fn bless() -> bool {
    std::env::var("RTSOG_BLESS").is_ok_and(|v| v == "1")
}

/// Independent re-derivation of the lexical oracle and the search value of a
/// freshly created node, for exhaustive comparison with the tree search.
pub mod brute {
    use super::*;

    pub const PARTIAL: f64 = 0.5;
    pub const WIDTH: usize = 7;

    pub fn tokens(s: &str) -> BTreeSet<String> {
        s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
    }

    pub fn overlap(s: &str, context: &BTreeSet<String>) -> f64 {
        let t = tokens(s);
        if t.is_empty() {
            return 0.0;
        }
        t.iter().filter(|x| context.contains(*x)).count() as f64 / t.len() as f64
    }

    pub fn path_score(p: &ReasoningPath, context: &BTreeSet<String>, targets: &BTreeSet<EntityId>) -> f64 {
        if targets.contains(p.terminal()) {
            return 1.0;
        }
        PARTIAL
            * p.steps
                .iter()
                .map(|s| overlap(&s.edge.relation, context).max(overlap(s.entity.as_str(), context)))
                .fold(0.0, f64::max)
    }

    /// Every reachable path of length `1..=depth`, following exactly the
    /// relations a search node would see: relevant ones only, at most
    /// [`WIDTH`] per node, immediate backtracking excluded. Each is valued as
    /// `α·relation overlap + (1-α)·path score` and the best one returned,
    /// ties going to the shorter path, then the smaller rendering.
    pub fn best_path(
        store: &TripleStore,
        question: &str,
        topic: &EntityId,
        targets: &BTreeSet<EntityId>,
        depth: usize,
        alpha: f64,
    ) -> (f64, ReasoningPath) {
        let ctx = tokens(question);
        let mut best: Option<(f64, ReasoningPath)> = None;
        let mut stack = vec![ReasoningPath::root(topic.clone())];
        while let Some(p) = stack.pop() {
            if let Some(last) = p.steps.last() {
                let q = alpha * overlap(&last.edge.relation, &ctx) + (1.0 - alpha) * path_score(&p, &ctx, targets);
                let better = match &best {
                    None => true,
                    Some((bq, bp)) => {
                        q > *bq
                            || (q == *bq
                                && (p.len() < bp.len() || (p.len() == bp.len() && p.to_string() < bp.to_string())))
                    }
                };
                if better {
                    best = Some((q, p.clone()));
                }
                if targets.contains(p.terminal()) {
                    continue;
                }
            }
            if p.len() >= depth {
                continue;
            }
            let mut rels: Vec<(f64, RelationEdge)> = store
                .adjacent_relations(p.terminal())
                .into_iter()
                .map(|edge| (overlap(&edge.relation, &ctx), edge))
                .filter(|(s, _)| *s > 0.0)
                .collect();
            rels.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            rels.truncate(WIDTH);
            for (_, edge) in rels {
                for t in store.tail_entities(p.terminal(), &edge) {
                    if p.last_edge().map(|x| x.inverse()).as_ref() == Some(&edge) && p.predecessor() == Some(&t) {
                        continue;
                    }
                    stack.push(p.extend(edge.clone(), t));
                }
            }
        }
        best.expect("topic has at least one relevant path")
    }
}
