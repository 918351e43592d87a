//! Resolved run settings.
//!
//! Every flag has a key in the flat config format:
//!
//! ```text
//! # comment
//! key = value
//! topic = Afghan_National_Anthem
//! topic = Afghanistan
//! ```
//!
//! Keys are the long flag names with `-` replaced by `_` (`uct_mode`,
//! `base_url`, `H`, `K`, ...). `topic` and `target` may repeat and
//! accumulate; any other repeated key keeps its last value. `strategies` and
//! `values` take comma-separated lists. Booleans are `true` or `false`.
//!
//! Precedence: command-line flags, then the config file, then built-in
//! defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rtsog_core::eval::{Strategy, SweepAxis};
use rtsog_core::kg::TripleFormat;
use rtsog_core::search::{SearchConfig, UctMode};

/// Keys that accumulate across repeats.
const LIST_KEYS: &[&str] = &["topic", "target"];

/// Every recognised key, in manifest order.
pub const KEYS: &[&str] = &[
    "kg", "format", "question", "topic", "dataset", "backend", "fixtures", "target", "base_url", "model", "prompts",
    "H", "b", "K", "n", "alpha", "c", "depth", "uct_mode", "seed", "budget", "self_critic", "stack", "strategy",
    "strategies", "beam_width", "samples", "temperature", "noise", "axis", "values", "concurrency", "dump_tree",
    "out", "csv", "manifest",
];

pub type RawSettings = BTreeMap<String, Vec<String>>;

#[derive(Debug)]
pub struct SettingsError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, SettingsError> {
    Err(SettingsError(msg.into()))
}

/// Parses the flat `key = value` format.
pub fn parse_config(text: &str) -> Result<RawSettings, SettingsError> {
    let mut raw = RawSettings::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!("config line {}: expected `key = value`", i + 1));
        };
        let key = key.trim();
        if !KEYS.contains(&key) {
            return err(format!("config line {}: unknown key {key:?}", i + 1));
        }
        push(&mut raw, key, value.trim().to_string());
    }
    Ok(raw)
}

pub fn push(raw: &mut RawSettings, key: &str, value: String) {
    let slot = raw.entry(key.to_string()).or_default();
    if !LIST_KEYS.contains(&key) {
        slot.clear();
    }
    slot.push(value);
}

/// Flags win over the config file, key by key.
pub fn merge(config: RawSettings, flags: RawSettings) -> RawSettings {
    let mut out = config;
    for (k, v) in flags {
        out.insert(k, v);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Lexical,
    Replay,
    Remote,
}

impl FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lexical" => Ok(BackendKind::Lexical),
            "replay" => Ok(BackendKind::Replay),
            "remote" => Ok(BackendKind::Remote),
            other => Err(format!("unknown backend {other:?} (expected lexical, replay or remote)")),
        }
    }
}

impl BackendKind {
    fn as_str(self) -> &'static str {
        match self {
            BackendKind::Lexical => "lexical",
            BackendKind::Replay => "replay",
            BackendKind::Remote => "remote",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub kg: Option<PathBuf>,
    pub format: Option<TripleFormat>,
    pub question: Option<String>,
    pub topics: Vec<String>,
    pub dataset: Option<PathBuf>,
    pub backend: BackendKind,
    pub fixtures: Option<PathBuf>,
    pub targets: Vec<String>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub prompts: Option<PathBuf>,
    pub search: SearchConfig,
    pub budget: Option<u64>,
    pub use_stack: bool,
    pub strategy: Strategy,
    pub strategies: Vec<Strategy>,
    pub beam_width: usize,
    pub samples: usize,
    pub temperature: f64,
    pub noise: f64,
    pub axis: Option<SweepAxis>,
    pub values: Vec<usize>,
    pub concurrency: usize,
    pub dump_tree: bool,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            kg: None,
            format: None,
            question: None,
            topics: Vec::new(),
            dataset: None,
            backend: BackendKind::Lexical,
            fixtures: None,
            targets: Vec::new(),
            base_url: None,
            model: None,
            prompts: None,
            search: SearchConfig::default(),
            budget: None,
            use_stack: true,
            strategy: Strategy::RTSoG,
            strategies: Strategy::ALL.to_vec(),
            beam_width: 3,
            samples: 8,
            temperature: 0.1,
            noise: 0.0,
            axis: None,
            values: Vec::new(),
            concurrency: 0,
            dump_tree: false,
            out: None,
            csv: None,
            manifest: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, SettingsError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| SettingsError(format!("invalid value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, SettingsError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => err(format!("invalid boolean {value:?} for {key}")),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, SettingsError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

impl Settings {
    pub fn resolve(raw: &RawSettings) -> Result<Settings, SettingsError> {
        let mut s = Settings::default();
        for (key, values) in raw {
            let Some(v) = values.last() else { continue };
            let v = v.as_str();
            let k = key.as_str();
            match k {
                "kg" => s.kg = Some(v.into()),
                "format" => s.format = Some(parse(k, v)?),
                "question" => s.question = Some(v.to_string()),
                "topic" => s.topics = values.clone(),
                "dataset" => s.dataset = Some(v.into()),
                "backend" => s.backend = parse(k, v)?,
                "fixtures" => s.fixtures = Some(v.into()),
                "target" => s.targets = values.clone(),
                "base_url" => s.base_url = Some(v.to_string()),
                "model" => s.model = Some(v.to_string()),
                "prompts" => s.prompts = Some(v.into()),
                "H" => s.search.iterations = parse(k, v)?,
                "b" => s.search.width_cap = parse(k, v)?,
                "K" => s.search.top_k = parse(k, v)?,
                "n" => s.search.n_subquestions = parse(k, v)?,
                "alpha" => s.search.alpha = parse(k, v)?,
                "c" => s.search.exploration = parse(k, v)?,
                "depth" => s.search.depth_max = parse(k, v)?,
                "uct_mode" => s.search.uct_mode = parse::<UctMode>(k, v)?,
                "seed" => s.search.seed = parse(k, v)?,
                "budget" => s.budget = Some(parse(k, v)?),
                "self_critic" => s.search.self_critic = parse_bool(k, v)?,
                "stack" => s.use_stack = parse_bool(k, v)?,
                "strategy" => s.strategy = parse(k, v)?,
                "strategies" => s.strategies = parse_list(k, v)?,
                "beam_width" => s.beam_width = parse(k, v)?,
                "samples" => s.samples = parse(k, v)?,
                "temperature" => s.temperature = parse(k, v)?,
                "noise" => s.noise = parse(k, v)?,
                "axis" => s.axis = Some(parse(k, v)?),
                "values" => s.values = parse_list(k, v)?,
                "concurrency" => s.concurrency = parse(k, v)?,
                "dump_tree" => s.dump_tree = parse_bool(k, v)?,
                "out" => s.out = Some(v.into()),
                "csv" => s.csv = Some(v.into()),
                "manifest" => s.manifest = Some(v.into()),
                other => return err(format!("unknown setting {other:?}")),
            }
        }
        s.search.validate().map_err(|e| SettingsError(e.to_string()))?;
        if !(0.0..=1.0).contains(&s.noise) {
            return err("noise must lie in [0,1]");
        }
        Ok(s)
    }

    /// The triple format, from the setting or the file extension.
    pub fn kg_format(&self) -> TripleFormat {
        self.format.unwrap_or_else(|| match self.kg.as_ref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("nt") => TripleFormat::NTriples,
            _ => TripleFormat::Tsv,
        })
    }

    /// Every setting in config syntax. Feeding the result back through
    /// `--config` reproduces this run.
    pub fn to_config(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let path = |p: &PathBuf| p.display().to_string();
        if let Some(p) = &self.kg {
            line("kg", path(p));
        }
        line(
            "format",
            match self.kg_format() {
                TripleFormat::Tsv => "tsv".into(),
                TripleFormat::NTriples => "nt".into(),
            },
        );
        if let Some(q) = &self.question {
            line("question", q.clone());
        }
        for t in &self.topics {
            line("topic", t.clone());
        }
        if let Some(p) = &self.dataset {
            line("dataset", path(p));
        }
        line("backend", self.backend.as_str().into());
        if let Some(p) = &self.fixtures {
            line("fixtures", path(p));
        }
        for t in &self.targets {
            line("target", t.clone());
        }
        if let Some(u) = &self.base_url {
            line("base_url", u.clone());
        }
        if let Some(m) = &self.model {
            line("model", m.clone());
        }
        if let Some(p) = &self.prompts {
            line("prompts", path(p));
        }
        let c = &self.search;
        line("H", c.iterations.to_string());
        line("b", c.width_cap.to_string());
        line("K", c.top_k.to_string());
        line("n", c.n_subquestions.to_string());
        line("alpha", c.alpha.to_string());
        line("c", c.exploration.to_string());
        line("depth", c.depth_max.to_string());
        line("uct_mode", c.uct_mode.to_string());
        line("seed", c.seed.to_string());
        if let Some(b) = self.budget {
            line("budget", b.to_string());
        }
        line("self_critic", c.self_critic.to_string());
        line("stack", self.use_stack.to_string());
        line("strategy", self.strategy.to_string());
        line("strategies", self.strategies.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        line("beam_width", self.beam_width.to_string());
        line("samples", self.samples.to_string());
        line("temperature", self.temperature.to_string());
        line("noise", self.noise.to_string());
        if let Some(a) = self.axis {
            line("axis", a.to_string());
        }
        if !self.values.is_empty() {
            line("values", self.values.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        }
        line("concurrency", self.concurrency.to_string());
        line("dump_tree", self.dump_tree.to_string());
        if let Some(p) = &self.out {
            line("out", path(p));
        }
        if let Some(p) = &self.csv {
            line("csv", path(p));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_grammar() {
        let raw = parse_config("# c\n\nH = 6\ntopic = A\ntopic = B\nH=8\nstrategies = rtsog, beam\n").unwrap();
        let s = Settings::resolve(&raw).unwrap();
        assert_eq!(s.search.iterations, 8);
        assert_eq!(s.topics, vec!["A", "B"]);
        assert_eq!(s.strategies, vec![Strategy::RTSoG, Strategy::Beam]);
        assert!(parse_config("nonsense").is_err());
        assert!(parse_config("colour = red").is_err());
        assert!(Settings::resolve(&parse_config("alpha = 2").unwrap()).is_err());
    }

    #[test]
    fn flags_override_config() {
        let config = parse_config("H = 6\nK = 4\ntopic = A").unwrap();
        let mut flags = RawSettings::new();
        push(&mut flags, "H", "12".into());
        push(&mut flags, "topic", "B".into());
        let s = Settings::resolve(&merge(config, flags)).unwrap();
        assert_eq!((s.search.iterations, s.search.top_k), (12, 4));
        assert_eq!(s.topics, vec!["B"]);
        assert_eq!(s.search.width_cap, 7);
    }

    #[test]
    fn manifest_round_trips() {
        let raw = parse_config(
            "kg = a.tsv\nquestion = q?\ntopic = A\ntarget = T\nH = 3\nuct_mode = mean-value\nbudget = 50\nvalues = 1,2\naxis = K\nnoise = 0.2",
        )
        .unwrap();
        let s = Settings::resolve(&raw).unwrap();
        let again = Settings::resolve(&parse_config(&s.to_config()).unwrap()).unwrap();
        assert_eq!(s.to_config(), again.to_config());
        assert_eq!(again.search.uct_mode, UctMode::MeanValue);
        assert_eq!(again.budget, Some(50));
    }

    #[test]
    fn every_key_resolves() {
        for key in KEYS {
            let value = match *key {
                "format" => "tsv",
                "backend" => "lexical",
                "uct_mode" => "literal",
                "strategy" | "strategies" => "beam",
                "axis" => "H",
                "self_critic" | "stack" | "dump_tree" => "true",
                "alpha" | "c" | "temperature" | "noise" => "0.5",
                "H" | "b" | "K" | "n" | "depth" | "seed" | "budget" | "beam_width" | "samples" | "values"
                | "concurrency" => "2",
                _ => "x",
            };
            let raw = parse_config(&format!("{key} = {value}")).unwrap();
            assert!(Settings::resolve(&raw).is_ok(), "{key}");
        }
    }
}
