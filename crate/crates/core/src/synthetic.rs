//! Seeded synthetic benchmarks with planted multi-hop answers.
//!
//! Each question names a chain of relations from a topic entity,
//! `What is the capital of the founder of Vrellan Tosk?`, and the graph
//! holds exactly that chain (some hops stored in the inverse direction).
//! Around it sit distractors:
//!
//! - sibling edges at every chain entity whose relation shares one of two
//!   tokens with the question (`capital_harbor`), so every planted hop
//!   competes with a partially relevant alternative;
//! - random noise edges whose relations share nothing with the question.
//!
//! Entity names are random syllables, so apart from the topic no entity
//! shares a token with any question.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::DatasetRecord;
use crate::kg::{EntityId, ReasoningPath, RelationEdge, Triple, TripleStore};

/// Relation words that questions mention.
pub const QUESTION_WORDS: &[&str] = &[
    "capital", "founder", "spouse", "birthplace", "currency", "author", "director", "mascot", "coach", "mayor",
    "sponsor", "architect", "publisher", "composer", "governor", "headquarters", "inventor", "manufacturer",
    "owner", "producer", "successor", "predecessor", "anthem", "religion",
];

/// Relation words no question mentions.
pub const NOISE_WORDS: &[&str] = &[
    "harbor", "tariff", "orbit", "glacier", "ledger", "lantern", "meadow", "quarry", "saddle", "tundra", "vessel",
    "wicket", "zenith", "bramble", "cobalt", "dynamo", "ember", "fjord", "gable", "hinge",
];

const SYLLABLES: &[&str] = &[
    "vre", "lan", "tosk", "qel", "mar", "zor", "vak", "bry", "nix", "ul", "dro", "fen", "gal", "hoth", "ix", "jor",
    "kel", "mun", "oss", "pra", "rhu", "sil", "tav", "wy", "yor", "zem", "cal", "dun", "eth", "fro",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub questions: usize,
    /// Planted chain length range, inclusive.
    pub min_depth: usize,
    pub max_depth: usize,
    /// Random entities beyond the chains and their siblings.
    pub extra_entities: usize,
    /// Random zero-overlap edges.
    pub noise_edges: usize,
    /// Probability that a planted hop is stored head-to-tail reversed.
    pub inverse_rate: f64,
    /// Half-overlap distractor edges at every chain entity.
    pub siblings: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            questions: 1,
            min_depth: 1,
            max_depth: 4,
            extra_entities: 60,
            noise_edges: 150,
            inverse_rate: 0.25,
            siblings: 1,
        }
    }
}

impl SyntheticSpec {
    /// The spec behind the bundled 25-question mini-dataset.
    pub fn mini_dataset() -> Self {
        SyntheticSpec {
            seed: 2024,
            questions: 25,
            min_depth: 1,
            max_depth: 4,
            extra_entities: 40,
            noise_edges: 200,
            inverse_rate: 0.25,
            siblings: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedQuestion {
    pub record: DatasetRecord,
    /// The chain from the topic to the answer.
    pub planted: ReasoningPath,
    pub answer: EntityId,
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub store: TripleStore,
    pub questions: Vec<PlantedQuestion>,
}

impl SyntheticBenchmark {
    pub fn records(&self) -> Vec<DatasetRecord> {
        self.questions.iter().map(|q| q.record.clone()).collect()
    }
}

struct Namer {
    used: BTreeSet<String>,
}

impl Namer {
    fn word(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let n = rng.random_range(2..=3);
            let mut w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
            if let Some(first) = w.get_mut(0..1) {
                first.make_ascii_uppercase();
            }
            if self.used.insert(w.to_ascii_lowercase()) {
                return w;
            }
        }
    }

    fn entity(&mut self, rng: &mut ChaCha8Rng) -> EntityId {
        EntityId::new(self.word(rng)).expect("syllable names are valid ids")
    }
}

fn triple(head: &EntityId, relation: &str, tail: &EntityId) -> Triple {
    Triple::new(head.clone(), relation, tail.clone()).expect("generated relations are valid")
}

/// Builds one graph holding every question's chain plus distractors.
pub fn generate(spec: &SyntheticSpec) -> SyntheticBenchmark {
    assert!(spec.min_depth >= 1 && spec.min_depth <= spec.max_depth, "invalid depth range");
    assert!(spec.max_depth <= QUESTION_WORDS.len(), "depth exceeds relation vocabulary");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut namer = Namer { used: BTreeSet::new() };
    let mut triples: BTreeSet<Triple> = BTreeSet::new();
    let mut all_entities: Vec<EntityId> = Vec::new();
    let mut questions = Vec::new();

    for qi in 0..spec.questions {
        let depth = rng.random_range(spec.min_depth..=spec.max_depth);
        let mut words: Vec<&str> = QUESTION_WORDS.to_vec();
        words.shuffle(&mut rng);
        words.truncate(depth);

        let topic_name = format!("{} {}", namer.word(&mut rng), namer.word(&mut rng));
        let topic = EntityId::new(topic_name.replace(' ', "_")).expect("valid id");
        let mut path = ReasoningPath::root(topic.clone());
        let mut chain = vec![topic.clone()];
        for w in &words {
            let next = namer.entity(&mut rng);
            let cur = path.terminal().clone();
            let edge = if rng.random_bool(spec.inverse_rate) {
                triples.insert(triple(&next, w, &cur));
                RelationEdge::incoming(*w)
            } else {
                triples.insert(triple(&cur, w, &next));
                RelationEdge::outgoing(*w)
            };
            path = path.extend(edge, next.clone());
            chain.push(next);
        }
        let answer = path.terminal().clone();

        // Sibling distractors: half-overlapping relations at every chain entity.
        for e in &chain {
            for _ in 0..spec.siblings {
                let w = words.choose(&mut rng).expect("depth >= 1");
                let noise = NOISE_WORDS.choose(&mut rng).expect("non-empty");
                let other = namer.entity(&mut rng);
                triples.insert(triple(e, &format!("{w}_{noise}"), &other));
                all_entities.push(other);
            }
        }
        all_entities.extend(chain.iter().cloned());

        let mut phrase = words.iter().rev().map(|w| format!("the {w}")).collect::<Vec<_>>().join(" of ");
        phrase.push_str(&format!(" of {topic_name}"));
        let question = format!("What is {phrase}?");
        let record = DatasetRecord {
            id: format!("syn-{:03}", qi + 1),
            question,
            topic_entities: vec![topic],
            gold_answers: vec![vec![answer.to_string(), answer.as_str().replace('_', " ")]],
        };
        questions.push(PlantedQuestion { record, planted: path, answer });
    }

    for _ in 0..spec.extra_entities {
        all_entities.push(namer.entity(&mut rng));
    }
    // Noise edges never leave from a question's answer or reuse a question
    // word, so the planted chain stays the only full-overlap route.
    let answers: BTreeSet<&EntityId> = questions.iter().map(|q| &q.answer).collect();
    let mut added = 0;
    let mut attempts = 0;
    while added < spec.noise_edges && attempts < spec.noise_edges * 20 {
        attempts += 1;
        let h = all_entities.choose(&mut rng).expect("entities exist");
        let t = all_entities.choose(&mut rng).expect("entities exist");
        if h == t || answers.contains(h) || answers.contains(t) {
            continue;
        }
        let rel = NOISE_WORDS.choose(&mut rng).expect("non-empty");
        if triples.insert(triple(h, rel, t)) {
            added += 1;
        }
    }

    SyntheticBenchmark { store: triples.into_iter().collect(), questions }
}
