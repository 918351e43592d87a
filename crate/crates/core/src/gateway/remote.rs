//! OpenAI-compatible chat-completions backend.
//!
//! Transport failures, `429` and `5xx` responses are retried with
//! exponential backoff. A reply that does not follow the requested format is
//! retried once with a reminder appended; a second malformed reply is a
//! [`GatewayError::Backend`]. Scores are requested as integers 0-100 and
//! divided by 100.

use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::ledger::CallKind;
use super::prompts::{render, PromptSet};
use super::{Backend, EoSVerdict, GatewayError, ScoredRelation, SubQuestionSet};
use crate::kg::{Direction, EntityId, ReasoningPath, RelationEdge};
use crate::search::WeightedPath;

const FORMAT_REMINDER: &str =
    "\n\nYour previous reply could not be parsed. Answer again and follow the reply format above exactly.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "RTSOG_API_KEY".into(),
            temperature: 0.7,
            max_tokens: 256,
            retries: 3,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    prompts: PromptSet,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl RemoteBackend {
    /// Reads the API key from the configured environment variable, if set.
    pub fn new(config: RemoteConfig, prompts: PromptSet) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend { config, prompts, agent, api_key }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut last_err = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let wait = self.config.backoff * 2u32.saturating_pow(attempt - 1);
                debug!("retrying chat completion in {wait:?} (attempt {attempt})");
                thread::sleep(wait);
            }
            let mut req = self.agent.post(&self.endpoint());
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(&body) {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.into_body().read_to_string().unwrap_or_default();
                    if (200..300).contains(&status) {
                        let parsed: ChatResponse = serde_json::from_str(&text)
                            .map_err(|e| GatewayError::Backend(format!("bad completion body: {e}")))?;
                        return parsed
                            .choices
                            .into_iter()
                            .next()
                            .and_then(|c| c.message.content)
                            .ok_or_else(|| GatewayError::Backend("completion has no content".into()));
                    }
                    last_err = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
                    if status != 429 && status < 500 {
                        return Err(GatewayError::Backend(last_err));
                    }
                    warn!("chat completion failed ({last_err})");
                }
                Err(e) => {
                    last_err = e.to_string();
                    warn!("chat completion transport error: {last_err}");
                }
            }
        }
        Err(GatewayError::Backend(format!("giving up after {} retries: {last_err}", self.config.retries)))
    }

    fn ask<T>(&self, kind: CallKind, prompt: String, parse: impl Fn(&str) -> Option<T>) -> Result<T, GatewayError> {
        let reply = self.complete(&prompt)?;
        if let Some(v) = parse(&reply) {
            return Ok(v);
        }
        warn!("malformed {kind} reply, retrying with a format reminder");
        let reply = self.complete(&(prompt + FORMAT_REMINDER))?;
        parse(&reply).ok_or_else(|| GatewayError::Backend(format!("malformed {kind} reply: {reply:?}")))
    }

    fn prompt(&self, kind: CallKind, vars: &[(&str, &str)]) -> String {
        render(self.prompts.template(kind), vars)
    }
}

fn numbered(items: impl IntoIterator<Item = String>) -> String {
    let lines: Vec<String> = items.into_iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect();
    if lines.is_empty() {
        "(none)".into()
    } else {
        lines.join("\n")
    }
}

fn strip_bullet(line: &str) -> &str {
    let line = line.trim();
    let line = line.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim();
        }
    }
    line
}

pub(crate) fn parse_subquestions(reply: &str) -> Option<Vec<String>> {
    let subs: Vec<String> =
        reply.lines().map(strip_bullet).filter(|l| !l.is_empty()).map(str::to_string).collect();
    (!subs.is_empty()).then_some(subs)
}

fn leading_number(s: &str) -> Option<f64> {
    let s = s.trim();
    let end = s.find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-')).unwrap_or(s.len());
    s[..end].trim_end_matches('.').parse().ok()
}

fn match_relation<'a>(name: &str, candidates: &'a [RelationEdge]) -> Option<&'a RelationEdge> {
    let name = name.trim().trim_matches(['"', '\'', '`']).trim();
    if let Some(c) = candidates.iter().find(|c| c.to_string().eq_ignore_ascii_case(name)) {
        return Some(c);
    }
    let (base, dir) = match name.strip_suffix("^-1").or_else(|| name.strip_suffix("(inverse)")) {
        Some(b) => (b.trim(), Some(Direction::Incoming)),
        None => (name, None),
    };
    let mut matching = candidates.iter().filter(|c| c.relation.eq_ignore_ascii_case(base));
    match dir {
        Some(d) => matching.find(|c| c.direction == d),
        None => {
            let all: Vec<&RelationEdge> = matching.collect();
            all.iter().find(|c| c.direction == Direction::Outgoing).or(all.first()).copied()
        }
    }
}

/// `None` when no line looks like `name: score`; unmatched names are dropped.
pub(crate) fn parse_relation_scores(reply: &str, candidates: &[RelationEdge]) -> Option<Vec<ScoredRelation>> {
    let mut any = false;
    let mut out = Vec::new();
    for line in reply.lines() {
        let line = strip_bullet(line);
        let Some((name, score)) = line.rsplit_once(':') else { continue };
        let Some(score) = leading_number(score) else { continue };
        any = true;
        match match_relation(name, candidates) {
            Some(edge) => out.push(ScoredRelation { edge: edge.clone(), score: score / 100.0 }),
            None => warn!("remote reply named unknown relation {name:?}; dropped"),
        }
    }
    any.then_some(out)
}

/// Needs a score for every index `1..=count`.
pub(crate) fn parse_indexed_scores(reply: &str, count: usize) -> Option<Vec<f64>> {
    let mut scores = vec![None; count];
    for line in reply.lines() {
        let Some((left, right)) = line.split_once(':') else { continue };
        let digits: String = left.chars().filter(char::is_ascii_digit).collect();
        let (Ok(idx), Some(score)) = (digits.parse::<usize>(), leading_number(right)) else { continue };
        if (1..=count).contains(&idx) && scores[idx - 1].is_none() {
            scores[idx - 1] = Some(score / 100.0);
        }
    }
    scores.into_iter().collect()
}

pub(crate) fn parse_yes_no(reply: &str) -> Option<bool> {
    reply
        .split(|c: char| !c.is_alphanumeric())
        .map(str::to_ascii_lowercase)
        .find_map(|w| match w.as_str() {
            "yes" | "true" => Some(true),
            "no" | "false" => Some(false),
            _ => None,
        })
}

pub(crate) fn parse_eos(reply: &str) -> Option<EoSVerdict> {
    let mut lines = reply.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next()?;
    let first_lower = first.to_ascii_lowercase();
    let verdict = match first_lower.find("eos") {
        Some(i) => parse_yes_no(&first[i + 3..]),
        None => parse_yes_no(first),
    }?;
    let rationale: Vec<&str> = lines.map(str::trim).collect();
    Some(EoSVerdict {
        end_of_search: verdict,
        rationale: (!rationale.is_empty()).then(|| rationale.join(" ")),
    })
}

pub(crate) fn parse_answers(reply: &str) -> Option<Vec<String>> {
    reply.lines().find_map(|line| {
        let line = line.trim();
        let lower = line.to_ascii_lowercase();
        lower.starts_with("answer").then(|| {
            let rest = line.split_once(':').map(|(_, r)| r).unwrap_or("");
            rest.split('|').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
        })
    })
}

fn subq_block(subq: &SubQuestionSet) -> String {
    numbered(subq.subs.iter().cloned())
}

fn stack_block(stack: &[ReasoningPath]) -> String {
    numbered(stack.iter().map(ToString::to_string))
}

impl Backend for RemoteBackend {
    fn decompose(&self, question: &str, topics: &[EntityId], n: usize) -> Result<Vec<String>, GatewayError> {
        let topics = topics.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
        let n = n.to_string();
        let prompt = self.prompt(CallKind::Decompose, &[("question", question), ("topics", &topics), ("n", &n)]);
        self.ask(CallKind::Decompose, prompt, parse_subquestions)
    }

    fn filter_relations(
        &self,
        subq: &SubQuestionSet,
        path: &ReasoningPath,
        candidates: &[RelationEdge],
        b_max: usize,
    ) -> Result<Vec<ScoredRelation>, GatewayError> {
        let cands = candidates.iter().map(|c| format!("- {c}")).collect::<Vec<_>>().join("\n");
        let b = b_max.to_string();
        let prompt = self.prompt(
            CallKind::FilterRelations,
            &[
                ("question", &subq.original),
                ("subquestions", &subq_block(subq)),
                ("path", &path.to_string()),
                ("candidates", &cands),
                ("b", &b),
            ],
        );
        self.ask(CallKind::FilterRelations, prompt, |r| parse_relation_scores(r, candidates))
    }

    fn score_paths(
        &self,
        subq: &SubQuestionSet,
        topic: &EntityId,
        candidates: &[ReasoningPath],
    ) -> Result<Vec<f64>, GatewayError> {
        let cands = numbered(candidates.iter().map(ToString::to_string));
        let prompt = self.prompt(
            CallKind::ScorePaths,
            &[
                ("question", &subq.original),
                ("subquestions", &subq_block(subq)),
                ("topics", topic.as_str()),
                ("candidates", &cands),
            ],
        );
        self.ask(CallKind::ScorePaths, prompt, |r| parse_indexed_scores(r, candidates.len()))
    }

    fn self_critic(&self, subq: &SubQuestionSet, path: &ReasoningPath) -> Result<EoSVerdict, GatewayError> {
        let prompt = self.prompt(
            CallKind::SelfCritic,
            &[("question", &subq.original), ("subquestions", &subq_block(subq)), ("path", &path.to_string())],
        );
        self.ask(CallKind::SelfCritic, prompt, parse_eos)
    }

    fn admit(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
        candidate: &WeightedPath,
    ) -> Result<bool, GatewayError> {
        let prompt = self.prompt(
            CallKind::Admit,
            &[
                ("question", question),
                ("subquestions", &subq_block(subq)),
                ("stack", &stack_block(stack)),
                ("path", &candidate.path.to_string()),
            ],
        );
        self.ask(CallKind::Admit, prompt, parse_yes_no)
    }

    fn generate_answer(
        &self,
        stack: &[ReasoningPath],
        question: &str,
        subq: &SubQuestionSet,
    ) -> Result<Vec<String>, GatewayError> {
        let prompt = self.prompt(
            CallKind::Answer,
            &[("question", question), ("subquestions", &subq_block(subq)), ("stack", &stack_block(stack))],
        );
        self.ask(CallKind::Answer, prompt, parse_answers)
    }
}
