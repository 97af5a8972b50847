use std::collections::HashMap;

use rand::Rng;

use super::{Grammar, ScfgError, Symbol};
use crate::corpus::Example;

/// Derivations nested deeper than this are rejected.
pub const DEFAULT_MAX_DEPTH: usize = 20;

type Yield = (Vec<String>, Vec<String>);

/// Samples one pair top-down from the root, choosing rules uniformly.
pub fn sample_example<R: Rng + ?Sized>(grammar: &Grammar, rng: &mut R) -> Result<Example, ScfgError> {
    sample_example_with_depth(grammar, rng, DEFAULT_MAX_DEPTH)
}

pub fn sample_example_with_depth<R: Rng + ?Sized>(
    grammar: &Grammar,
    rng: &mut R,
    max_depth: usize,
) -> Result<Example, ScfgError> {
    let (utterance, logical_form) = derive(grammar, grammar.root(), 0, max_depth, rng)?;
    Ok(Example { utterance, logical_form })
}

fn derive<R: Rng + ?Sized>(
    g: &Grammar,
    category: &str,
    depth: usize,
    max_depth: usize,
    rng: &mut R,
) -> Result<Yield, ScfgError> {
    if depth > max_depth {
        return Err(ScfgError::DepthExceeded(max_depth));
    }
    let choices = g.rules_for(category);
    if choices.is_empty() {
        return Err(ScfgError::Unproductive(category.to_owned()));
    }
    let rule = &g.rules()[choices[rng.gen_range(0..choices.len())]];

    // children are expanded in alpha order; beta reuses them by alignment id
    let mut children: HashMap<u32, Yield> = HashMap::new();
    for sym in &rule.alpha {
        if let Symbol::NonTerminal { category, id } = sym {
            children.insert(*id, derive(g, category, depth + 1, max_depth, rng)?);
        }
    }
    let mut x = Vec::new();
    for sym in &rule.alpha {
        match sym {
            Symbol::Terminal(t) => x.push(t.clone()),
            Symbol::NonTerminal { id, .. } => x.extend(children[id].0.iter().cloned()),
        }
    }
    let mut y = Vec::new();
    for sym in &rule.beta {
        match sym {
            Symbol::Terminal(t) => y.push(t.clone()),
            Symbol::NonTerminal { id, .. } => y.extend(children[id].1.iter().cloned()),
        }
    }
    Ok((x, y))
}
