//! Knowledge-graph question answering by reward-guided tree search.
//!
//! The pipeline decomposes a question, runs a self-critic Monte Carlo tree
//! search from each topic entity, keeps the best weighted paths, filters them
//! through a reasoning-path stack and asks the model for the final answer.
//! Baseline retrievers, an evaluation harness and a synthetic benchmark
//! generator sit alongside.

pub mod baselines;
pub mod eval;
pub mod gateway;
pub mod kg;
pub mod pipeline;
pub mod search;
pub mod synthetic;

pub use gateway::{Backend, CallLedger, GatewayError, LexicalOracle, ModelGateway, SubQuestionSet};
pub use kg::{EntityId, ReasoningPath, RelationEdge, TripleStore};
pub use pipeline::{answer, AnswerResult};
pub use search::{SearchConfig, UctMode, WeightedPath};
