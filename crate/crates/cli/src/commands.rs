//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use log::info;
use rtsog_core::baselines::{answer_with_strategy, StrategyKind};
use rtsog_core::eval::{
    cost_report, lexical_gateway, load_dataset, run_eval, sweep, sweep_csv, DatasetRecord, EvalConfig, EvalReport,
    Strategy,
};
use rtsog_core::gateway::prompts::PromptSet;
use rtsog_core::gateway::{
    Backend, LexicalOracle, ModelGateway, PathNoise, RecordingBackend, RemoteBackend, RemoteConfig, ReplayBackend,
};
use rtsog_core::kg::{ingest_triples, EntityId, TripleStore};
use rtsog_core::pipeline::{answer_detailed, AnswerOptions};

use crate::settings::{merge, parse_config, BackendKind, RawSettings, Settings};
use crate::{Command, Opts};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime { kind: String, message: String },
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

fn runtime(kind: &str) -> impl Fn(String) -> CliError + '_ {
    move |message| CliError::Runtime { kind: kind.to_string(), message }
}

fn io_error(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Runtime { kind: "io".into(), message: format!("{}: {e}", path.display()) }
}

pub fn run(cmd: Command) -> Result<(), CliError> {
    let (name, opts) = match &cmd {
        Command::Ingest(o) => ("ingest", o),
        Command::Ask(o) => ("ask", o),
        Command::Eval(o) => ("eval", o),
        Command::Compare(o) => ("compare", o),
        Command::Sweep(o) => ("sweep", o),
        Command::Record(o) => ("record", o),
    };
    let settings = load_settings(opts)?;
    match cmd {
        Command::Ingest(_) => ingest(&settings)?,
        Command::Ask(_) => ask(&settings, None)?,
        Command::Eval(_) => eval(&settings, None)?,
        Command::Compare(_) => compare(&settings)?,
        Command::Sweep(_) => sweep_cmd(&settings)?,
        Command::Record(_) => record(&settings)?,
    }
    emit_manifest(name, &settings)
}

fn load_settings(opts: &Opts) -> Result<Settings, CliError> {
    let config = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_error(path))?;
            parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.0)))?
        }
        None => RawSettings::new(),
    };
    Settings::resolve(&merge(config, opts.raw())).map_err(|e| CliError::Usage(e.0))
}

/// Writes the resolved settings next to the output, to `--manifest`, or to
/// stderr when there is neither.
fn emit_manifest(command: &str, s: &Settings) -> Result<(), CliError> {
    let text = format!(
        "# rtsog {command} manifest\n# timestamp = {}\n{}",
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        s.to_config()
    );
    let target = s.manifest.clone().or_else(|| {
        s.out.as_ref().map(|o| {
            let mut p = o.clone().into_os_string();
            p.push(".manifest");
            p.into()
        })
    });
    match target {
        Some(path) => fs::write(&path, text).map_err(io_error(&path)),
        None => {
            eprint!("{text}");
            Ok(())
        }
    }
}

fn write_output(s: &Settings, text: &str) -> Result<(), CliError> {
    match &s.out {
        Some(path) => fs::write(path, text).map_err(io_error(path)),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).map_err(io_error(Path::new("<stdout>")))
        }
    }
}

fn write_csv(s: &Settings, csv: &str) -> Result<(), CliError> {
    match &s.csv {
        Some(path) => fs::write(path, csv).map_err(io_error(path)),
        None => Ok(()),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map(|j| j + "\n").map_err(|e| runtime("serialize")(e.to_string()))
}

fn load_store(s: &Settings) -> Result<TripleStore, CliError> {
    let Some(path) = &s.kg else {
        return usage("--kg is required");
    };
    let file = File::open(path).map_err(io_error(path))?;
    let ingested = ingest_triples(file, s.kg_format()).map_err(|e| runtime("kg")(format!("{}: {e}", path.display())))?;
    info!(
        "loaded {} triples ({} duplicates dropped) from {}",
        ingested.store.triple_count(),
        ingested.stats.duplicates_dropped,
        path.display()
    );
    Ok(ingested.store)
}

fn load_records(s: &Settings) -> Result<Vec<DatasetRecord>, CliError> {
    let Some(path) = &s.dataset else {
        return usage("--dataset is required");
    };
    let file = File::open(path).map_err(io_error(path))?;
    load_dataset(BufReader::new(file)).map_err(|e| runtime("dataset")(format!("{}: {e}", path.display())))
}

fn entity_ids(kind: &str, ids: &[String]) -> Result<Vec<EntityId>, CliError> {
    ids.iter()
        .map(|t| EntityId::new(t.clone()).map_err(|e| CliError::Usage(format!("invalid {kind} {t:?}: {e}"))))
        .collect()
}

fn noise(s: &Settings) -> Option<PathNoise> {
    (s.noise > 0.0).then_some(PathNoise { seed: s.search.seed, amplitude: s.noise })
}

fn lexical_oracle(s: &Settings, targets: Vec<EntityId>) -> LexicalOracle {
    let oracle = LexicalOracle::new(targets);
    match noise(s) {
        Some(n) => oracle.with_noise(n),
        None => oracle,
    }
}

fn remote_backend(s: &Settings) -> Result<RemoteBackend, CliError> {
    let mut config = RemoteConfig::default();
    if let Some(u) = &s.base_url {
        config.base_url = u.clone();
    }
    if let Some(m) = &s.model {
        config.model = m.clone();
    }
    let prompts = match &s.prompts {
        Some(dir) => PromptSet::load_dir(dir).map_err(io_error(dir))?,
        None => PromptSet::default(),
    };
    if std::env::var(&config.api_key_env).map_or(true, |k| k.is_empty()) {
        log::warn!("{} is not set; requests are sent without an API key", config.api_key_env);
    }
    Ok(RemoteBackend::new(config, prompts))
}

fn replay_backend(s: &Settings) -> Result<ReplayBackend, CliError> {
    let Some(path) = &s.fixtures else {
        return usage("--fixtures is required with the replay backend");
    };
    let file = File::open(path).map_err(io_error(path))?;
    ReplayBackend::from_reader(BufReader::new(file)).map_err(|e| runtime("fixtures")(e.to_string()))
}

/// Shared append-only fixture file for recording backends.
#[derive(Clone)]
struct SharedSink(Arc<Mutex<File>>);

impl Write for SharedSink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).write(buf)
    }

    fn write_all(&mut self, buf: &[u8]) -> io::Result<()> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).write_all(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).flush()
    }
}

/// Where model calls go. Lexical oracles are built per question because
/// their targets differ; the other backends are shared.
enum Source {
    Lexical,
    Shared(ModelGateway),
    /// Records every call to a fixture file. Proxies the remote backend when
    /// one is given, otherwise a per-question lexical oracle.
    Recording { remote: Option<Arc<dyn Backend>>, sink: SharedSink },
}

impl Source {
    fn open(s: &Settings) -> Result<Source, CliError> {
        Ok(match s.backend {
            BackendKind::Lexical => Source::Lexical,
            BackendKind::Replay => Source::Shared(ModelGateway::new(replay_backend(s)?)),
            BackendKind::Remote => Source::Shared(ModelGateway::new(remote_backend(s)?)),
        })
    }

    fn recording(s: &Settings) -> Result<Source, CliError> {
        let remote: Option<Arc<dyn Backend>> = match s.backend {
            BackendKind::Replay => return usage("record needs a lexical or remote backend to proxy"),
            BackendKind::Remote => Some(Arc::new(remote_backend(s)?)),
            BackendKind::Lexical => None,
        };
        let Some(path) = &s.fixtures else {
            return usage("--fixtures is required for record");
        };
        let file = File::create(path).map_err(io_error(path))?;
        Ok(Source::Recording { remote, sink: SharedSink(Arc::new(Mutex::new(file))) })
    }

    /// Gateway for a single question with the given lexical targets.
    fn gateway(&self, s: &Settings, targets: Vec<EntityId>) -> ModelGateway {
        match self {
            Source::Lexical => ModelGateway::new(lexical_oracle(s, targets)),
            Source::Shared(g) => g.fork(),
            Source::Recording { remote: Some(r), sink } => ModelGateway::new(RecordingBackend::new(r.clone(), sink.clone())),
            Source::Recording { remote: None, sink } => {
                ModelGateway::new(RecordingBackend::new(lexical_oracle(s, targets), sink.clone()))
            }
        }
    }

    /// Gateway for a dataset record; lexical targets come from its gold answers.
    fn record_gateway(&self, s: &Settings, record: &DatasetRecord) -> ModelGateway {
        match self {
            Source::Lexical => lexical_gateway(record, noise(s)),
            _ => {
                let targets =
                    record.gold_answers.iter().flatten().filter_map(|a| EntityId::new(a.clone()).ok()).collect();
                self.gateway(s, targets)
            }
        }
    }
}

fn ingest(s: &Settings) -> Result<(), CliError> {
    let Some(out) = &s.out else {
        return usage("ingest needs --out for the normalized graph");
    };
    let Some(path) = &s.kg else {
        return usage("--kg is required");
    };
    let file = File::open(path).map_err(io_error(path))?;
    let ingested = ingest_triples(file, s.kg_format()).map_err(|e| runtime("kg")(format!("{}: {e}", path.display())))?;
    let sink = File::create(out).map_err(io_error(out))?;
    ingested.store.write_tsv(io::BufWriter::new(sink)).map_err(|e| runtime("kg")(e.to_string()))?;
    let stats = serde_json::json!({
        "rows_read": ingested.stats.rows_read,
        "duplicates_dropped": ingested.stats.duplicates_dropped,
        "triples": ingested.store.triple_count(),
        "entities": ingested.store.entity_count(),
    });
    println!("{stats}");
    Ok(())
}

fn ask(s: &Settings, source: Option<Source>) -> Result<(), CliError> {
    let Some(question) = &s.question else {
        return usage("--question is required");
    };
    if s.topics.is_empty() {
        return usage("at least one --topic is required");
    }
    let topics = entity_ids("topic", &s.topics)?;
    let store = load_store(s)?;
    let source = match source {
        Some(src) => src,
        None => Source::open(s)?,
    };
    let gateway = source.gateway(s, entity_ids("target", &s.targets)?);
    let gateway = match s.budget {
        Some(cap) => gateway.with_budget(cap),
        None => gateway,
    };
    let result = match s.strategy {
        Strategy::RTSoG => {
            let options = AnswerOptions { keep_trees: s.dump_tree, use_stack: s.use_stack };
            answer_detailed(question, &topics, &store, &gateway, &s.search, options)
        }
        Strategy::Beam | Strategy::Greedy | Strategy::BestOfN => {
            let kind = match s.strategy {
                Strategy::Beam => StrategyKind::Beam,
                Strategy::Greedy => StrategyKind::Greedy,
                _ => StrategyKind::BestOfN,
            };
            let mut strategy = eval_config(s).strategy_config(kind);
            strategy.budget = None;
            answer_with_strategy(question, &topics, &store, &gateway, &s.search, &strategy)
        }
        Strategy::NoSearch => return usage("ask supports rtsog, beam, greedy and best-of-n"),
    }
    .map_err(|e| runtime("pipeline")(e.to_string()))?;
    write_output(s, &to_json(&result)?)
}

fn eval_config(s: &Settings) -> EvalConfig {
    EvalConfig {
        strategy: s.strategy,
        search: s.search.clone(),
        beam_width: s.beam_width,
        samples: s.samples,
        temperature: s.temperature,
        budget: s.budget,
        use_stack: s.use_stack,
        concurrency: s.concurrency,
    }
}

fn run_one(
    s: &Settings,
    records: &[DatasetRecord],
    store: &TripleStore,
    source: &Source,
    config: &EvalConfig,
) -> Result<EvalReport, CliError> {
    let factory = |r: &DatasetRecord| source.record_gateway(s, r);
    run_eval(records, store, &factory, config).map_err(|e| runtime("eval")(e.to_string()))
}

fn eval(s: &Settings, source: Option<Source>) -> Result<(), CliError> {
    let records = load_records(s)?;
    let store = load_store(s)?;
    let source = match source {
        Some(src) => src,
        None => Source::open(s)?,
    };
    let report = run_one(s, &records, &store, &source, &eval_config(s))?;
    write_csv(s, &report.to_csv())?;
    write_output(s, &to_json(&report)?)
}

fn compare(s: &Settings) -> Result<(), CliError> {
    if s.strategies.is_empty() {
        return usage("--strategies needs at least one strategy");
    }
    let records = load_records(s)?;
    let store = load_store(s)?;
    let source = Source::open(s)?;
    let mut reports = Vec::new();
    for &strategy in &s.strategies {
        let config = EvalConfig { strategy, ..eval_config(s) };
        reports.push(run_one(s, &records, &store, &source, &config)?);
    }
    let table = cost_report(&reports);
    write_csv(s, &table.to_csv())?;
    print!("{table}");
    if let Some(path) = &s.out {
        let doc = serde_json::json!({ "table": table, "reports": reports });
        fs::write(path, to_json(&doc)?).map_err(io_error(path))?;
    }
    Ok(())
}

fn sweep_cmd(s: &Settings) -> Result<(), CliError> {
    let Some(axis) = s.axis else {
        return usage("--axis is required (H, b, K or n)");
    };
    if s.values.is_empty() {
        return usage("--values needs at least one value");
    }
    let records = load_records(s)?;
    let store = load_store(s)?;
    let source = Source::open(s)?;
    let factory = |r: &DatasetRecord| source.record_gateway(s, r);
    let points = sweep(&records, &store, &factory, &eval_config(s), axis, &s.values)
        .map_err(|e| runtime("eval")(e.to_string()))?;
    let csv = sweep_csv(&points);
    write_csv(s, &csv)?;
    print!("{csv}");
    if let Some(path) = &s.out {
        fs::write(path, to_json(&points)?).map_err(io_error(path))?;
    }
    Ok(())
}

fn record(s: &Settings) -> Result<(), CliError> {
    let source = Source::recording(s)?;
    match (&s.question, &s.dataset) {
        (Some(_), None) => ask(s, Some(source)),
        (None, Some(_)) => eval(s, Some(source)),
        _ => usage("record needs exactly one of --question or --dataset"),
    }
}
