//! `rtsog` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::{push, RawSettings};

#[derive(Parser, Debug)]
#[command(name = "rtsog", version, about = "Knowledge-graph question answering by reward-guided tree search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a TSV or N-Triples graph and write it back as normalized TSV.
    Ingest(Opts),
    /// Answer one question and print the result as JSON.
    Ask(Opts),
    /// Evaluate one strategy on a dataset.
    Eval(Opts),
    /// Evaluate several strategies and print a cost/EM table.
    Compare(Opts),
    /// Evaluate one hyper-parameter at several values.
    Sweep(Opts),
    /// Proxy a backend and write replay fixtures for a question or dataset.
    Record(Opts),
}

/// Every option has a config-file key of the same name (with `_` for `-`).
#[derive(Args, Debug, Default)]
pub struct Opts {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Knowledge graph file.
    #[arg(long)]
    kg: Option<String>,
    /// Graph format: tsv or nt (default from the file extension).
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    question: Option<String>,
    /// Topic entity id; repeatable.
    #[arg(long)]
    topic: Vec<String>,
    /// JSONL dataset.
    #[arg(long)]
    dataset: Option<String>,
    /// lexical, replay or remote.
    #[arg(long)]
    backend: Option<String>,
    /// Replay fixture file (read by replay, written by record).
    #[arg(long)]
    fixtures: Option<String>,
    /// Known answer for the lexical oracle; repeatable.
    #[arg(long)]
    target: Vec<String>,
    /// Remote API base URL, e.g. https://api.openai.com/v1. The key is read
    /// from RTSOG_API_KEY.
    #[arg(long = "base-url")]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    prompts: Option<String>,
    /// Search iterations per topic entity.
    #[arg(long = "H")]
    h: Option<String>,
    /// Expansion width cap.
    #[arg(long = "b")]
    b: Option<String>,
    /// Weighted paths kept.
    #[arg(long = "K")]
    k: Option<String>,
    /// Most sub-questions.
    #[arg(long = "n")]
    n: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// UCT exploration constant.
    #[arg(long = "c")]
    c: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    /// literal or mean-value.
    #[arg(long = "uct-mode")]
    uct_mode: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Most gateway calls per question.
    #[arg(long)]
    budget: Option<String>,
    /// Skip the self-critic.
    #[arg(long = "no-self-critic")]
    no_self_critic: bool,
    /// Answer from the raw top-K paths instead of the stack.
    #[arg(long = "no-stack")]
    no_stack: bool,
    /// rtsog, beam, greedy, best-of-n or no-search.
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated strategies for compare.
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long = "beam-width")]
    beam_width: Option<String>,
    /// Best-of-N sample count.
    #[arg(long)]
    samples: Option<String>,
    /// Best-of-N softmax temperature.
    #[arg(long)]
    temperature: Option<String>,
    /// Seeded noise amplitude for lexical path scores.
    #[arg(long)]
    noise: Option<String>,
    /// Sweep axis: H, b, K or n.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long)]
    values: Option<String>,
    /// Worker threads for batch commands; 0 uses every core.
    #[arg(long)]
    concurrency: Option<String>,
    /// Attach search trees to ask output.
    #[arg(long = "dump-tree")]
    dump_tree: bool,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<String>,
    /// Also write a CSV table here.
    #[arg(long)]
    csv: Option<String>,
    /// Manifest file (default: <out>.manifest, or stderr).
    #[arg(long)]
    manifest: Option<String>,
}

impl Opts {
    fn raw(&self) -> RawSettings {
        let mut raw = RawSettings::new();
        let scalars: [(&str, &Option<String>); 30] = [
            ("kg", &self.kg),
            ("format", &self.format),
            ("question", &self.question),
            ("dataset", &self.dataset),
            ("backend", &self.backend),
            ("fixtures", &self.fixtures),
            ("base_url", &self.base_url),
            ("model", &self.model),
            ("prompts", &self.prompts),
            ("H", &self.h),
            ("b", &self.b),
            ("K", &self.k),
            ("n", &self.n),
            ("alpha", &self.alpha),
            ("c", &self.c),
            ("depth", &self.depth),
            ("uct_mode", &self.uct_mode),
            ("seed", &self.seed),
            ("budget", &self.budget),
            ("strategy", &self.strategy),
            ("strategies", &self.strategies),
            ("beam_width", &self.beam_width),
            ("samples", &self.samples),
            ("temperature", &self.temperature),
            ("noise", &self.noise),
            ("axis", &self.axis),
            ("values", &self.values),
            ("concurrency", &self.concurrency),
            ("out", &self.out),
            ("csv", &self.csv),
        ];
        for (key, value) in scalars {
            if let Some(v) = value {
                push(&mut raw, key, v.clone());
            }
        }
        if let Some(m) = &self.manifest {
            push(&mut raw, "manifest", m.clone());
        }
        for t in &self.topic {
            push(&mut raw, "topic", t.clone());
        }
        for t in &self.target {
            push(&mut raw, "target", t.clone());
        }
        if self.no_self_critic {
            push(&mut raw, "self_critic", "false".into());
        }
        if self.no_stack {
            push(&mut raw, "stack", "false".into());
        }
        if self.dump_tree {
            push(&mut raw, "dump_tree", "true".into());
        }
        raw
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("usage: rtsog <ingest|ask|eval|compare|sweep|record> [options]; see `rtsog help <command>`");
            ExitCode::from(1)
        }
        Err(commands::CliError::Runtime { kind, message }) => {
            let diag = serde_json::json!({ "error": { "kind": kind, "message": message } });
            eprintln!("{diag}");
            ExitCode::from(2)
        }
    }
}
