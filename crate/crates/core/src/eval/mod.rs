//! Dataset loading, exact-match scoring and batch evaluation.
//!
//! Datasets are JSONL, one question per line:
//!
//! ```json
//! {"id": "q1", "question": "...", "topic_entities": ["A"], "answers": [["Sunni_Islam", "Sunni Islam"]]}
//! ```
//!
//! `answers` is a list of gold answers, each with its accepted aliases. A
//! question counts as matched when any prediction equals any alias after
//! [`normalize`].

mod sweep;

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{answer_with_strategy, StrategyConfig, StrategyKind};
use crate::gateway::{CallLedger, LexicalOracle, ModelGateway, PathNoise};
use crate::kg::{EntityId, TripleStore};
use crate::pipeline::{answer_detailed, build_context, AnswerOptions};
use crate::search::SearchConfig;

pub use sweep::{cost_report, sweep, sweep_csv, CostRow, CostTable, SweepAxis, SweepPoint};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("schema error at line {line}: {message}")]
    SchemaError { line: usize, message: String },
    #[error("duplicate question id {0:?}")]
    DuplicateId(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid evaluation setup: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub question: String,
    pub topic_entities: Vec<EntityId>,
    /// Gold answers, each a list of accepted surface forms.
    #[serde(rename = "answers")]
    pub gold_answers: Vec<Vec<String>>,
}

/// Reads a JSONL dataset. Blank lines are skipped; errors carry 1-based
/// line numbers.
pub fn load_dataset<R: Read>(source: R) -> Result<Vec<DatasetRecord>, EvalError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EvalError::SchemaError { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| EvalError::SchemaError { line: line_no, message };
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        if rec.id.is_empty() {
            return Err(schema("empty id".into()));
        }
        if rec.question.trim().is_empty() {
            return Err(schema("empty question".into()));
        }
        if rec.topic_entities.is_empty() {
            return Err(schema("no topic entities".into()));
        }
        if rec.gold_answers.is_empty() || rec.gold_answers.iter().any(|a| a.iter().all(|s| s.trim().is_empty())) {
            return Err(schema("every record needs at least one non-empty gold answer".into()));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(EvalError::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Lowercase, underscores to spaces, punctuation removed, whitespace
/// collapsed, one leading `a`/`an`/`the` dropped.
pub fn normalize(text: &str) -> String {
    let cleaned: String = text
        .to_lowercase()
        .replace('_', " ")
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    let words = match words.first() {
        Some(&("a" | "an" | "the")) if words.len() > 1 => &words[1..],
        _ => &words[..],
    };
    words.join(" ")
}

pub fn exact_match(predicted: &[String], gold: &[Vec<String>]) -> bool {
    let gold: BTreeSet<String> = gold.iter().flatten().map(|g| normalize(g)).filter(|g| !g.is_empty()).collect();
    predicted.iter().any(|p| gold.contains(&normalize(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[serde(rename = "rtsog")]
    RTSoG,
    Beam,
    Greedy,
    BestOfN,
    /// Decomposition then answer generation with no retrieved paths.
    NoSearch,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::RTSoG, Strategy::Beam, Strategy::Greedy, Strategy::BestOfN, Strategy::NoSearch];
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rtsog" | "mcts" => Ok(Strategy::RTSoG),
            "no_search" | "nosearch" => Ok(Strategy::NoSearch),
            other => match other.parse::<StrategyKind>()? {
                StrategyKind::Beam => Ok(Strategy::Beam),
                StrategyKind::Greedy => Ok(Strategy::Greedy),
                StrategyKind::BestOfN => Ok(Strategy::BestOfN),
            },
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::RTSoG => "rtsog",
            Strategy::Beam => "beam",
            Strategy::Greedy => "greedy",
            Strategy::BestOfN => "best-of-n",
            Strategy::NoSearch => "no-search",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub strategy: Strategy,
    pub search: SearchConfig,
    pub beam_width: usize,
    pub samples: usize,
    pub temperature: f64,
    /// Most gateway calls per question.
    pub budget: Option<u64>,
    /// Gate answers through the reasoning-path stack.
    pub use_stack: bool,
    /// Worker threads; 0 picks one per core.
    #[serde(skip)]
    pub concurrency: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            strategy: Strategy::RTSoG,
            search: SearchConfig::default(),
            beam_width: 3,
            samples: 8,
            temperature: 0.1,
            budget: None,
            use_stack: true,
            concurrency: 0,
        }
    }
}

impl EvalConfig {
    pub fn strategy_config(&self, kind: StrategyKind) -> StrategyConfig {
        StrategyConfig {
            kind,
            width: match kind {
                StrategyKind::Beam => self.beam_width,
                StrategyKind::Greedy => 1,
                StrategyKind::BestOfN => self.samples,
            },
            depth_max: self.search.depth_max,
            temperature: self.temperature,
            seed: self.search.seed,
            budget: self.budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub id: String,
    pub predicted: Vec<String>,
    pub matched: bool,
    pub ledger: CallLedger,
    #[serde(default)]
    pub low_confidence: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub em: f64,
    pub questions: usize,
    pub matched: usize,
    pub errors: usize,
    /// Sum of the per-question ledgers.
    pub ledger: CallLedger,
    pub mean_calls: f64,
    pub max_calls: u64,
    pub config: EvalConfig,
    pub per_question: Vec<QuestionOutcome>,
}

impl EvalReport {
    fn assemble(config: &EvalConfig, mut per_question: Vec<QuestionOutcome>) -> Self {
        per_question.sort_by(|a, b| a.id.cmp(&b.id));
        let questions = per_question.len();
        let matched = per_question.iter().filter(|q| q.matched).count();
        let ledger: CallLedger = per_question.iter().map(|q| q.ledger).sum();
        EvalReport {
            strategy: config.strategy,
            em: if questions == 0 { 0.0 } else { matched as f64 / questions as f64 },
            questions,
            matched,
            errors: per_question.iter().filter(|q| q.error.is_some()).count(),
            mean_calls: if questions == 0 { 0.0 } else { ledger.total() as f64 / questions as f64 },
            max_calls: per_question.iter().map(|q| q.ledger.total()).max().unwrap_or(0),
            ledger,
            config: config.clone(),
            per_question,
        }
    }

    /// `id,matched,total_calls` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,matched,total_calls\n");
        for q in &self.per_question {
            out.push_str(&format!("{},{},{}\n", csv_field(&q.id), q.matched, q.ledger.total()));
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Supplies the gateway for one question. Each call should hand out a
/// gateway whose ledger is not shared with other questions, e.g. a
/// [`ModelGateway::fork`] of a shared one.
pub type GatewayFactory<'a> = dyn Fn(&DatasetRecord) -> ModelGateway + Sync + 'a;

/// Gateway over a lexical oracle that knows this record's gold answers.
pub fn lexical_gateway(record: &DatasetRecord, noise: Option<PathNoise>) -> ModelGateway {
    let targets = record.gold_answers.iter().flatten().filter_map(|a| EntityId::new(a.clone()).ok());
    let oracle = LexicalOracle::new(targets);
    ModelGateway::new(match noise {
        Some(n) => oracle.with_noise(n),
        None => oracle,
    })
}

fn evaluate_one(
    record: &DatasetRecord,
    store: &TripleStore,
    gateway: &ModelGateway,
    config: &EvalConfig,
) -> QuestionOutcome {
    let gw = gateway.fork();
    let run = || -> Result<(Vec<String>, bool), String> {
        let q = &record.question;
        let topics = &record.topic_entities;
        match config.strategy {
            Strategy::RTSoG => {
                let capped;
                let g = match config.budget {
                    Some(cap) => {
                        capped = gw.with_budget(cap);
                        &capped
                    }
                    None => &gw,
                };
                let options = AnswerOptions { keep_trees: false, use_stack: config.use_stack };
                let r = answer_detailed(q, topics, store, g, &config.search, options).map_err(|e| e.to_string())?;
                Ok((r.answers, r.low_confidence))
            }
            Strategy::Beam | Strategy::Greedy | Strategy::BestOfN => {
                let kind = match config.strategy {
                    Strategy::Beam => StrategyKind::Beam,
                    Strategy::Greedy => StrategyKind::Greedy,
                    _ => StrategyKind::BestOfN,
                };
                let r = answer_with_strategy(q, topics, store, &gw, &config.search, &config.strategy_config(kind))
                    .map_err(|e| e.to_string())?;
                Ok((r.answers, r.low_confidence))
            }
            Strategy::NoSearch => {
                let g = match config.budget {
                    Some(cap) => gw.with_budget(cap),
                    None => gw.fork(),
                };
                let ctx = build_context(q, topics, &g, config.search.n_subquestions).map_err(|e| e.to_string())?;
                let answers = g.generate_answer(&[], &ctx.question, &ctx.subq).map_err(|e| e.to_string())?;
                Ok((answers, true))
            }
        }
    };
    let (predicted, low_confidence, error) = match run() {
        Ok((a, low)) => (a, low, None),
        Err(e) => {
            log::warn!("question {} failed: {e}", record.id);
            (Vec::new(), false, Some(e))
        }
    };
    QuestionOutcome {
        id: record.id.clone(),
        matched: exact_match(&predicted, &record.gold_answers),
        predicted,
        ledger: gw.ledger_snapshot(),
        low_confidence,
        error,
    }
}

/// Evaluates every record independently, in parallel. A failing question is
/// scored as a miss with its error recorded; the batch always completes.
pub fn run_eval(
    dataset: &[DatasetRecord],
    store: &TripleStore,
    gateways: &GatewayFactory<'_>,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    config.search.validate().map_err(|e| EvalError::Invalid(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency)
        .build()
        .map_err(|e| EvalError::Invalid(e.to_string()))?;
    let outcomes: Vec<QuestionOutcome> = pool.install(|| {
        dataset.par_iter().map(|rec| evaluate_one(rec, store, &gateways(rec), config)).collect()
    });
    Ok(EvalReport::assemble(config, outcomes))
}
