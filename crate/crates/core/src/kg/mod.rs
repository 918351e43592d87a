//! In-memory knowledge graph.
//!
//! A [`TripleStore`] is an immutable, indexed set of `(head, relation, tail)`
//! facts. Both directions are indexed so the search can walk inverse links:
//! an edge is either [`Direction::Outgoing`] (the entity is the head) or
//! [`Direction::Incoming`] (the entity is the tail). Every query returns
//! sorted output so traces are replayable.

mod ingest;
mod path;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{ingest_triples, IngestStats, Ingested, TripleFormat};
pub use path::{PathStep, ReasoningPath};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KgError {
    #[error("malformed row at line {0}")]
    MalformedRow(usize),
    #[error("input contains no triples")]
    EmptyInput,
    #[error("line {0} is not valid UTF-8")]
    Encoding(usize),
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<io::Error> for KgError {
    fn from(err: io::Error) -> Self {
        KgError::Io(err.to_string())
    }
}

/// Opaque entity identifier: a Freebase MID such as `m.0493b56` or a readable
/// name such as `Afghanistan`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityId(String);

impl EntityId {
    /// Rejects empty ids and ids containing tabs or line breaks, which the
    /// line-oriented fixture formats cannot carry.
    pub fn new(id: impl Into<String>) -> Result<Self, KgError> {
        let id = id.into();
        if id.is_empty() || id.contains(['\t', '\n', '\r']) {
            return Err(KgError::InvalidId(id));
        }
        Ok(EntityId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityId {
    type Error = KgError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        EntityId::new(value)
    }
}

impl From<EntityId> for String {
    fn from(id: EntityId) -> Self {
        id.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Which end of a triple the anchoring entity sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Outgoing,
    Incoming,
}

/// A relation seen from one entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationEdge {
    pub relation: String,
    pub direction: Direction,
}

impl RelationEdge {
    pub fn outgoing(relation: impl Into<String>) -> Self {
        RelationEdge { relation: relation.into(), direction: Direction::Outgoing }
    }

    pub fn incoming(relation: impl Into<String>) -> Self {
        RelationEdge { relation: relation.into(), direction: Direction::Incoming }
    }

    pub fn inverse(&self) -> Self {
        let direction = match self.direction {
            Direction::Outgoing => Direction::Incoming,
            Direction::Incoming => Direction::Outgoing,
        };
        RelationEdge { relation: self.relation.clone(), direction }
    }
}

/// Renders `relation` for outgoing edges and `relation⁻¹` for incoming ones.
impl fmt::Display for RelationEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.direction {
            Direction::Outgoing => f.write_str(&self.relation),
            Direction::Incoming => write!(f, "{}⁻¹", self.relation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: String,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: impl Into<String>, tail: EntityId) -> Result<Self, KgError> {
        let relation = relation.into();
        if relation.is_empty() || relation.contains(['\t', '\n', '\r']) {
            return Err(KgError::InvalidId(relation));
        }
        Ok(Triple { head, relation, tail })
    }
}

type Adjacency = BTreeMap<EntityId, BTreeMap<String, BTreeSet<EntityId>>>;

/// Immutable triple set with head- and tail-keyed indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripleStore {
    triples: BTreeSet<Triple>,
    outgoing: Adjacency,
    incoming: Adjacency,
    labels: BTreeMap<EntityId, String>,
}

impl TripleStore {
    pub fn builder() -> TripleStoreBuilder {
        TripleStoreBuilder::default()
    }

    /// Every distinct `(relation, direction)` pair incident to `entity`,
    /// sorted by relation then direction. Unknown entities yield nothing.
    pub fn adjacent_relations(&self, entity: &EntityId) -> Vec<RelationEdge> {
        let mut edges = Vec::new();
        if let Some(rels) = self.outgoing.get(entity) {
            edges.extend(rels.keys().map(|r| RelationEdge::outgoing(r.clone())));
        }
        if let Some(rels) = self.incoming.get(entity) {
            edges.extend(rels.keys().map(|r| RelationEdge::incoming(r.clone())));
        }
        edges.sort();
        edges
    }

    /// Entities reachable from `entity` across `edge`, sorted by id.
    pub fn tail_entities(&self, entity: &EntityId, edge: &RelationEdge) -> Vec<EntityId> {
        let index = match edge.direction {
            Direction::Outgoing => &self.outgoing,
            Direction::Incoming => &self.incoming,
        };
        index
            .get(entity)
            .and_then(|rels| rels.get(&edge.relation))
            .map(|tails| tails.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// True when `(from, edge, to)` corresponds to a stored triple.
    pub fn has_edge(&self, from: &EntityId, edge: &RelationEdge, to: &EntityId) -> bool {
        let index = match edge.direction {
            Direction::Outgoing => &self.outgoing,
            Direction::Incoming => &self.incoming,
        };
        index
            .get(from)
            .and_then(|rels| rels.get(&edge.relation))
            .is_some_and(|tails| tails.contains(to))
    }

    pub fn contains_entity(&self, entity: &EntityId) -> bool {
        self.outgoing.contains_key(entity) || self.incoming.contains_key(entity)
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triples.contains(triple)
    }

    pub fn entity_count(&self) -> usize {
        let mut n = self.outgoing.len();
        n += self.incoming.keys().filter(|e| !self.outgoing.contains_key(*e)).count();
        n
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    /// All entities in id order.
    pub fn entities(&self) -> Vec<&EntityId> {
        let set: BTreeSet<&EntityId> = self.outgoing.keys().chain(self.incoming.keys()).collect();
        set.into_iter().collect()
    }

    /// Human-readable label; falls back to the id (CVT nodes have none).
    pub fn label<'a>(&'a self, entity: &'a EntityId) -> &'a str {
        self.labels.get(entity).map(String::as_str).unwrap_or(entity.as_str())
    }

    /// Writes the canonical TSV form: one triple per line in sorted order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<(), KgError> {
        for t in &self.triples {
            if t.head.as_str().starts_with('#') {
                return Err(KgError::InvalidId(t.head.to_string()));
            }
            writeln!(out, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct TripleStoreBuilder {
    triples: BTreeSet<Triple>,
    labels: BTreeMap<EntityId, String>,
}

impl TripleStoreBuilder {
    /// Returns false when the triple was already present.
    pub fn insert(&mut self, triple: Triple) -> bool {
        self.triples.insert(triple)
    }

    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> Result<bool, KgError> {
        let triple = Triple::new(EntityId::new(head)?, relation, EntityId::new(tail)?)?;
        Ok(self.insert(triple))
    }

    pub fn label(&mut self, entity: EntityId, label: impl Into<String>) -> &mut Self {
        self.labels.insert(entity, label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn build(self) -> TripleStore {
        let mut outgoing = Adjacency::new();
        let mut incoming = Adjacency::new();
        for t in &self.triples {
            outgoing
                .entry(t.head.clone())
                .or_default()
                .entry(t.relation.clone())
                .or_default()
                .insert(t.tail.clone());
            incoming
                .entry(t.tail.clone())
                .or_default()
                .entry(t.relation.clone())
                .or_default()
                .insert(t.head.clone());
        }
        TripleStore { triples: self.triples, outgoing, incoming, labels: self.labels }
    }
}

impl FromIterator<Triple> for TripleStore {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        let mut builder = TripleStore::builder();
        for t in iter {
            builder.insert(t);
        }
        builder.build()
    }
}
