//! Prompt templates for the remote backend.
//!
//! Templates are plain text with `{name}` placeholders. Recognized names are
//! `question`, `subquestions`, `path`, `candidates`, `stack`, `topics`, `n`
//! and `b`; unknown placeholders are left as written. The defaults live in
//! `crates/core/prompts/` and can be overridden per file from a directory.

use std::fs;
use std::io;
use std::path::Path;

use super::ledger::CallKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub decompose: String,
    pub filter_relations: String,
    pub score_paths: String,
    pub self_critic: String,
    pub admit: String,
    pub answer: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            decompose: include_str!("../../prompts/decompose.txt").to_string(),
            filter_relations: include_str!("../../prompts/filter_relations.txt").to_string(),
            score_paths: include_str!("../../prompts/score_paths.txt").to_string(),
            self_critic: include_str!("../../prompts/self_critic.txt").to_string(),
            admit: include_str!("../../prompts/admit.txt").to_string(),
            answer: include_str!("../../prompts/answer.txt").to_string(),
        }
    }
}

impl PromptSet {
    /// Reads `<op>.txt` files from `dir`; missing files keep the default.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut set = PromptSet::default();
        for kind in CallKind::ALL {
            let file = dir.join(format!("{}.txt", kind.as_str()));
            match fs::read_to_string(&file) {
                Ok(text) => *set.template_mut(kind) = text,
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(set)
    }

    pub fn template(&self, kind: CallKind) -> &str {
        match kind {
            CallKind::Decompose => &self.decompose,
            CallKind::FilterRelations => &self.filter_relations,
            CallKind::ScorePaths => &self.score_paths,
            CallKind::SelfCritic => &self.self_critic,
            CallKind::Admit => &self.admit,
            CallKind::Answer => &self.answer,
        }
    }

    fn template_mut(&mut self, kind: CallKind) -> &mut String {
        match kind {
            CallKind::Decompose => &mut self.decompose,
            CallKind::FilterRelations => &mut self.filter_relations,
            CallKind::ScorePaths => &mut self.score_paths,
            CallKind::SelfCritic => &mut self.self_critic,
            CallKind::Admit => &mut self.admit,
            CallKind::Answer => &mut self.answer,
        }
    }
}

/// Substitutes `{name}` placeholders in a single pass, so values containing
/// braces are never re-expanded.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
