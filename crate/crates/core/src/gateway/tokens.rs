//! Tokenization shared by the lexical oracle.

use std::collections::BTreeSet;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Fraction of `item`'s tokens that appear in `context`; 0 for tokenless items.
pub fn overlap(item: &str, context: &BTreeSet<String>) -> f64 {
    let tokens = tokenize(item);
    if tokens.is_empty() {
        return 0.0;
    }
    let hits = tokens.iter().filter(|t| context.contains(*t)).count();
    hits as f64 / tokens.len() as f64
}
