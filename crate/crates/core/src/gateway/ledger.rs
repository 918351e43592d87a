use std::fmt;
use std::ops::{Add, AddAssign};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Decompose,
    FilterRelations,
    ScorePaths,
    SelfCritic,
    Admit,
    Answer,
}

impl CallKind {
    pub const ALL: [CallKind; 6] = [
        CallKind::Decompose,
        CallKind::FilterRelations,
        CallKind::ScorePaths,
        CallKind::SelfCritic,
        CallKind::Admit,
        CallKind::Answer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CallKind::Decompose => "decompose",
            CallKind::FilterRelations => "filter_relations",
            CallKind::ScorePaths => "score_paths",
            CallKind::SelfCritic => "self_critic",
            CallKind::Admit => "admit",
            CallKind::Answer => "answer",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-kind model call counts. Serialized with a `total` field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "LedgerRepr", try_from = "LedgerRepr")]
pub struct CallLedger {
    pub decompose: u64,
    pub filter_relations: u64,
    pub score_paths: u64,
    pub self_critic: u64,
    pub admit: u64,
    pub answer: u64,
}

impl CallLedger {
    pub fn total(&self) -> u64 {
        self.decompose + self.filter_relations + self.score_paths + self.self_critic + self.admit + self.answer
    }

    pub fn get(&self, kind: CallKind) -> u64 {
        match kind {
            CallKind::Decompose => self.decompose,
            CallKind::FilterRelations => self.filter_relations,
            CallKind::ScorePaths => self.score_paths,
            CallKind::SelfCritic => self.self_critic,
            CallKind::Admit => self.admit,
            CallKind::Answer => self.answer,
        }
    }

    /// Calls made during tree search (relation filtering, path scoring,
    /// self-critic).
    pub fn search_calls(&self) -> u64 {
        self.filter_relations + self.score_paths + self.self_critic
    }

    /// Counter-wise difference; saturates at zero.
    pub fn since(&self, earlier: &CallLedger) -> CallLedger {
        CallLedger {
            decompose: self.decompose.saturating_sub(earlier.decompose),
            filter_relations: self.filter_relations.saturating_sub(earlier.filter_relations),
            score_paths: self.score_paths.saturating_sub(earlier.score_paths),
            self_critic: self.self_critic.saturating_sub(earlier.self_critic),
            admit: self.admit.saturating_sub(earlier.admit),
            answer: self.answer.saturating_sub(earlier.answer),
        }
    }
}

impl Add for CallLedger {
    type Output = CallLedger;

    fn add(mut self, rhs: CallLedger) -> CallLedger {
        self += rhs;
        self
    }
}

impl AddAssign for CallLedger {
    fn add_assign(&mut self, rhs: CallLedger) {
        self.decompose += rhs.decompose;
        self.filter_relations += rhs.filter_relations;
        self.score_paths += rhs.score_paths;
        self.self_critic += rhs.self_critic;
        self.admit += rhs.admit;
        self.answer += rhs.answer;
    }
}

impl std::iter::Sum for CallLedger {
    fn sum<I: Iterator<Item = CallLedger>>(iter: I) -> Self {
        iter.fold(CallLedger::default(), Add::add)
    }
}

#[derive(Serialize, Deserialize)]
struct LedgerRepr {
    decompose: u64,
    filter_relations: u64,
    score_paths: u64,
    self_critic: u64,
    admit: u64,
    answer: u64,
    total: u64,
}

impl From<CallLedger> for LedgerRepr {
    fn from(l: CallLedger) -> Self {
        LedgerRepr {
            decompose: l.decompose,
            filter_relations: l.filter_relations,
            score_paths: l.score_paths,
            self_critic: l.self_critic,
            admit: l.admit,
            answer: l.answer,
            total: l.total(),
        }
    }
}

impl TryFrom<LedgerRepr> for CallLedger {
    type Error = String;

    fn try_from(r: LedgerRepr) -> Result<Self, Self::Error> {
        let l = CallLedger {
            decompose: r.decompose,
            filter_relations: r.filter_relations,
            score_paths: r.score_paths,
            self_critic: r.self_critic,
            admit: r.admit,
            answer: r.answer,
        };
        if l.total() != r.total {
            return Err(format!("ledger total {} does not match counters ({})", r.total, l.total()));
        }
        Ok(l)
    }
}

#[derive(Debug, Default)]
pub(crate) struct LedgerCell {
    counters: [AtomicU64; 6],
}

impl LedgerCell {
    pub(crate) fn bump(&self, kind: CallKind) {
        self.counters[kind.index()].fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn total(&self) -> u64 {
        self.counters.iter().map(|c| c.load(Ordering::SeqCst)).sum()
    }

    pub(crate) fn snapshot(&self) -> CallLedger {
        let get = |k: CallKind| self.counters[k.index()].load(Ordering::SeqCst);
        CallLedger {
            decompose: get(CallKind::Decompose),
            filter_relations: get(CallKind::FilterRelations),
            score_paths: get(CallKind::ScorePaths),
            self_critic: get(CallKind::SelfCritic),
            admit: get(CallKind::Admit),
            answer: get(CallKind::Answer),
        }
    }
}
