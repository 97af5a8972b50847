//! Grammar induction strategies.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use super::{Grammar, Rule, ScfgError, Symbol, ROOT, SENT};
use crate::corpus::{Dataset, DomainConfig, EntityType, ENTITY_SLOT, SEP};

/// One `Root -> <x, y>` rule per example, in dataset order.
pub fn init_grammar(dataset: &Dataset) -> Result<Grammar, ScfgError> {
    if dataset.examples.is_empty() {
        return Err(ScfgError::EmptyDataset);
    }
    Ok(Grammar::new(ROOT, dataset.examples.iter().map(|e| Rule::terminal(ROOT, &e.utterance, &e.logical_form))))
}

/// An aligned occurrence of one entity on both sides of a rule.
#[derive(Debug, Clone)]
struct EntityMatch<'c> {
    etype: &'c EntityType,
    entity: String,
    beta_pos: usize,
    alpha_span: Range<usize>,
}

fn pattern_matches(side: &[Symbol], start: usize, pattern: &[String]) -> bool {
    start + pattern.len() <= side.len()
        && pattern.iter().zip(&side[start..]).all(|(p, s)| match s {
            Symbol::Terminal(t) => p == ENTITY_SLOT || p == t,
            Symbol::NonTerminal { .. } => false,
        })
}

fn find_terminal_run(side: &[Symbol], needle: &[String]) -> Vec<Range<usize>> {
    if needle.is_empty() || needle.len() > side.len() {
        return Vec::new();
    }
    (0..=side.len() - needle.len())
        .filter(|&i| needle.iter().zip(&side[i..]).all(|(n, s)| s.is_terminal_eq(n)))
        .map(|i| i..i + needle.len())
        .collect()
}

/// Every consistent (alpha span, beta entity) pairing in a rule.
fn entity_matches<'c>(rule: &Rule, config: &'c DomainConfig) -> Vec<EntityMatch<'c>> {
    let mut out = Vec::new();
    for etype in &config.entity_types {
        let Some(slot) = EntityType::slot_offset(&etype.pattern) else { continue };
        for start in 0..rule.beta.len() {
            if !pattern_matches(&rule.beta, start, &etype.pattern) {
                continue;
            }
            let beta_pos = start + slot;
            let entity = rule.beta[beta_pos].terminal().expect("matched terminal").to_owned();
            if !etype.slot_accepts(&entity) {
                continue;
            }
            for form in etype.utterance_forms(&entity) {
                for alpha_span in find_terminal_run(&rule.alpha, &form) {
                    out.push(EntityMatch { etype, entity: entity.clone(), beta_pos, alpha_span });
                }
            }
        }
    }
    out
}

fn splice(side: &[Symbol], span: Range<usize>, with: Symbol) -> Vec<Symbol> {
    let mut v = Vec::with_capacity(side.len() - span.len() + 1);
    v.extend_from_slice(&side[..span.start]);
    v.push(with);
    v.extend_from_slice(&side[span.end..]);
    v
}

/// Abstracts entities with their type: for each aligned entity pair emits
/// the abstracted rule and a `Type -> <entity, entity>` rule. Input rules
/// are kept.
pub fn abs_entities(g_in: &Grammar, config: &DomainConfig) -> Grammar {
    let mut out: Vec<Rule> = g_in.rules().to_vec();
    for rule in g_in.rules() {
        for m in entity_matches(rule, config) {
            let cat = &m.etype.category;
            let nt = Symbol::nt(cat, rule.next_id());
            let alpha = splice(&rule.alpha, m.alpha_span.clone(), nt.clone());
            let beta = splice(&rule.beta, m.beta_pos..m.beta_pos + 1, nt);
            out.push(Rule { lhs: rule.lhs.clone(), alpha, beta });
            out.push(Rule {
                lhs: cat.clone(),
                alpha: rule.alpha[m.alpha_span].to_vec(),
                beta: vec![Symbol::Terminal(m.entity)],
            });
        }
    }
    Grammar::new(g_in.root(), out)
}

fn strip_terminal_affixes<'a>(side: &'a [Symbol], prefix: &[String], suffix: &[String]) -> Option<&'a [Symbol]> {
    if prefix.len() + suffix.len() > side.len() {
        return None;
    }
    let pre_ok = prefix.iter().zip(side).all(|(p, s)| s.is_terminal_eq(p));
    let suf_ok = suffix.iter().zip(&side[side.len() - suffix.len()..]).all(|(p, s)| s.is_terminal_eq(p));
    (pre_ok && suf_ok).then(|| &side[prefix.len()..side.len() - suffix.len()])
}

fn strip_question<'a>(alpha: &'a [Symbol], config: &DomainConfig) -> &'a [Symbol] {
    let longest = |opts: &[Vec<String>], at_start: bool, side: &[Symbol]| {
        opts.iter()
            .filter(|o| o.len() <= side.len())
            .filter(|o| {
                let window = if at_start { &side[..o.len()] } else { &side[side.len() - o.len()..] };
                o.iter().zip(window).all(|(t, s)| s.is_terminal_eq(t))
            })
            .map(Vec::len)
            .max()
            .unwrap_or(0)
    };
    let pre = longest(&config.question.prefixes, true, alpha);
    let rest = &alpha[pre..];
    let suf = longest(&config.question.suffixes, false, rest);
    &rest[..rest.len() - suf]
}

/// Abstracts entities and whole phrases with their set types.
///
/// Per rule: (a) an entity pair whose type has a set category has its
/// enclosing set pattern replaced by that category; (b) if the whole logical
/// form is recognized as denoting a typed set, a rule mapping the type to the
/// question-stripped phrase is added. Input rules are kept; rules using a set
/// category that never got a phrase rule are pruned.
pub fn abs_whole_phrases(g_in: &Grammar, config: &DomainConfig) -> Grammar {
    let mut out: Vec<Rule> = g_in.rules().to_vec();
    for rule in g_in.rules() {
        for m in entity_matches(rule, config) {
            let Some(set_cat) = &m.etype.set_category else { continue };
            let set_pattern = m.etype.set_pattern();
            let Some(slot) = EntityType::slot_offset(set_pattern) else { continue };
            let Some(start) = m.beta_pos.checked_sub(slot) else { continue };
            if !pattern_matches(&rule.beta, start, set_pattern) {
                continue;
            }
            let nt = Symbol::nt(set_cat, rule.next_id());
            let alpha = splice(&rule.alpha, m.alpha_span.clone(), nt.clone());
            let beta = splice(&rule.beta, start..start + set_pattern.len(), nt);
            out.push(Rule { lhs: rule.lhs.clone(), alpha, beta });
        }
        for pt in &config.phrase_types {
            let Some(body) = strip_terminal_affixes(&rule.beta, &pt.lf_prefix, &pt.lf_suffix) else {
                continue;
            };
            if body.is_empty() || strip_terminal_affixes(body, &pt.body_prefix, &[]).is_none() {
                continue;
            }
            let alpha = strip_question(&rule.alpha, config);
            if alpha.is_empty() {
                continue;
            }
            let phrase = Rule { lhs: pt.category.clone(), alpha: alpha.to_vec(), beta: body.to_vec() };
            if phrase.is_aligned() {
                out.push(phrase);
            }
        }
    }
    Grammar::new(g_in.root(), out).prune_unproductive()
}

/// `Root -> <Sent_1 </s> ... </s> Sent_k, same>` plus `Sent -> <a, b>` for
/// each root rule. Non-root rules carry over.
pub fn concat_k(g_in: &Grammar, k: usize) -> Result<Grammar, ScfgError> {
    if k < 2 {
        return Err(ScfgError::BadConcat(k));
    }
    let mut side = Vec::with_capacity(2 * k - 1);
    for i in 1..=k {
        if i > 1 {
            side.push(Symbol::t(SEP));
        }
        side.push(Symbol::nt(SENT, i as u32));
    }
    let mut out = vec![Rule { lhs: g_in.root().to_owned(), alpha: side.clone(), beta: side }];
    for r in g_in.rules() {
        if r.lhs == g_in.root() {
            out.push(Rule { lhs: SENT.to_owned(), ..r.clone() });
        } else {
            out.push(r.clone());
        }
    }
    Ok(Grammar::new(g_in.root(), out))
}

/// A grammar-to-grammar transformation; strategies compose symbolically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    Identity,
    AbsEntities,
    AbsWholePhrases,
    Concat(usize),
    /// `Compose(f1, f2)` is `f1 ∘ f2`: apply `f2`, then `f1`.
    Compose(Box<Strategy>, Box<Strategy>),
}

impl Strategy {
    pub fn compose(f1: Strategy, f2: Strategy) -> Strategy {
        Strategy::Compose(Box::new(f1), Box::new(f2))
    }

    /// Strategies applied in the given order, first one first.
    pub fn pipeline(steps: impl IntoIterator<Item = Strategy>) -> Strategy {
        steps.into_iter().fold(Strategy::Identity, |acc, s| match acc {
            Strategy::Identity => s,
            acc => Strategy::compose(s, acc),
        })
    }

    /// The single steps in application order.
    pub fn steps(&self) -> Vec<&Strategy> {
        match self {
            Strategy::Compose(f1, f2) => {
                let mut v = f2.steps();
                v.extend(f1.steps());
                v
            }
            s => vec![s],
        }
    }

    pub fn apply(&self, g: &Grammar, config: &DomainConfig) -> Result<Grammar, ScfgError> {
        match self {
            Strategy::Identity => Ok(g.clone()),
            Strategy::AbsEntities => {
                self.require_entities(config)?;
                Ok(abs_entities(g, config))
            }
            Strategy::AbsWholePhrases => {
                self.require_entities(config)?;
                Ok(abs_whole_phrases(g, config))
            }
            Strategy::Concat(k) => concat_k(g, *k),
            Strategy::Compose(f1, f2) => f1.apply(&f2.apply(g, config)?, config),
        }
    }

    /// Checks that `config` carries what the strategy needs.
    pub fn validate(&self, config: &DomainConfig) -> Result<(), ScfgError> {
        for s in self.steps() {
            match s {
                Strategy::AbsEntities | Strategy::AbsWholePhrases => s.require_entities(config)?,
                Strategy::Concat(k) if *k < 2 => return Err(ScfgError::BadConcat(*k)),
                _ => {}
            }
        }
        Ok(())
    }

    fn require_entities(&self, config: &DomainConfig) -> Result<(), ScfgError> {
        let name = match self {
            Strategy::AbsEntities => "abs-entities",
            _ => "abs-whole-phrases",
        };
        if config.entity_types.is_empty() {
            return Err(ScfgError::MissingConfig { strategy: name, what: "entity_types" });
        }
        if matches!(self, Strategy::AbsWholePhrases) && config.phrase_types.is_empty() {
            return Err(ScfgError::MissingConfig { strategy: name, what: "phrase_types" });
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Identity => f.write_str("identity"),
            Strategy::AbsEntities => f.write_str("abs-entities"),
            Strategy::AbsWholePhrases => f.write_str("abs-whole-phrases"),
            Strategy::Concat(k) => write!(f, "concat:{k}"),
            Strategy::Compose(..) => {
                let names: Vec<String> = self.steps().iter().map(|s| s.to_string()).collect();
                f.write_str(&names.join(","))
            }
        }
    }
}

impl FromStr for Strategy {
    type Err = ScfgError;

    /// Parses one step, or a comma-separated pipeline in application order.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains(',') {
            let steps = s.split(',').map(str::parse).collect::<Result<Vec<_>, _>>()?;
            return Ok(Strategy::pipeline(steps));
        }
        match s.trim() {
            "identity" => Ok(Strategy::Identity),
            "abs-entities" | "ae" => Ok(Strategy::AbsEntities),
            "abs-whole-phrases" | "awp" => Ok(Strategy::AbsWholePhrases),
            other => {
                let k = other
                    .strip_prefix("concat:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| ScfgError::UnknownStrategy(other.to_owned()))?;
                if k < 2 {
                    return Err(ScfgError::BadConcat(k));
                }
                Ok(Strategy::Concat(k))
            }
        }
    }
}
