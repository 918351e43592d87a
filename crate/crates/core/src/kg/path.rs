use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EntityId, RelationEdge, TripleStore};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathStep {
    pub edge: RelationEdge,
    pub entity: EntityId,
}

/// A walk `e0 -r1-> e1 -r2-> ... -rl-> el` starting at a topic entity.
///
/// The root path has no steps; its length is the hop depth.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub origin: EntityId,
    pub steps: Vec<PathStep>,
}

impl ReasoningPath {
    pub fn root(origin: EntityId) -> Self {
        ReasoningPath { origin, steps: Vec::new() }
    }

    pub fn extend(&self, edge: RelationEdge, entity: EntityId) -> Self {
        let mut steps = self.steps.clone();
        steps.push(PathStep { edge, entity });
        ReasoningPath { origin: self.origin.clone(), steps }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn terminal(&self) -> &EntityId {
        self.steps.last().map(|s| &s.entity).unwrap_or(&self.origin)
    }

    pub fn last_edge(&self) -> Option<&RelationEdge> {
        self.steps.last().map(|s| &s.edge)
    }

    /// Entity the walk was at before its last hop.
    pub fn predecessor(&self) -> Option<&EntityId> {
        match self.steps.len() {
            0 => None,
            1 => Some(&self.origin),
            n => Some(&self.steps[n - 2].entity),
        }
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityId> {
        std::iter::once(&self.origin).chain(self.steps.iter().map(|s| &s.entity))
    }

    /// True when `self` is a strict prefix of `other`.
    pub fn is_strict_prefix_of(&self, other: &ReasoningPath) -> bool {
        self.origin == other.origin
            && self.steps.len() < other.steps.len()
            && other.steps.starts_with(&self.steps)
    }

    /// Every hop corresponds to a stored triple.
    pub fn is_valid_in(&self, store: &TripleStore) -> bool {
        let mut at = &self.origin;
        for step in &self.steps {
            if !store.has_edge(at, &step.edge, &step.entity) {
                return false;
            }
            at = &step.entity;
        }
        true
    }

    /// Same walk with entity labels substituted, for prompts.
    pub fn render_with(&self, store: &TripleStore) -> String {
        let mut out = store.label(&self.origin).to_string();
        for step in &self.steps {
            out.push_str(&format!(" -[{}]-> {}", step.edge, store.label(&step.entity)));
        }
        out
    }
}

/// `A -[r1]-> B -[r2⁻¹]-> C`; also the canonical tie-breaking key.
impl fmt::Display for ReasoningPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.origin)?;
        for step in &self.steps {
            write!(f, " -[{}]-> {}", step.edge, step.entity)?;
        }
        Ok(())
    }
}
