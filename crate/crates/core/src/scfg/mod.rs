//! Synchronous context-free grammars over utterance/logical-form pairs.
//!
//! A rule `X -> <alpha, beta>` rewrites category `X` into an utterance side
//! and a logical-form side whose nonterminals are paired by alignment id.
//! Grammars are induced from a dataset by composable [`Strategy`] values and
//! sampled top-down with uniform rule choice.

mod induce;
mod sample;

pub use induce::{abs_entities, abs_whole_phrases, concat_k, init_grammar, Strategy};
pub use sample::{sample_example, sample_example_with_depth, DEFAULT_MAX_DEPTH};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexSet;
use thiserror::Error;

pub const ROOT: &str = "Root";
pub const SENT: &str = "Sent";

const FORMAT_HEADER: &str = "# scfg v1";

#[derive(Debug, Error)]
pub enum ScfgError {
    #[error("rule {rule}: nonterminals of the two sides are not aligned")]
    Misaligned { rule: String },
    #[error("category {0} has no rules")]
    Unproductive(String),
    #[error("derivation deeper than {0}")]
    DepthExceeded(usize),
    #[error("cannot build grammar from an empty dataset")]
    EmptyDataset,
    #[error("grammar line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("concat needs k >= 2, got {0}")]
    BadConcat(usize),
    #[error("strategy {strategy} needs {what} in the domain config")]
    MissingConfig { strategy: &'static str, what: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Terminal(String),
    NonTerminal { category: String, id: u32 },
}

impl Symbol {
    pub fn t(tok: &str) -> Self {
        Symbol::Terminal(tok.to_owned())
    }

    pub fn nt(category: &str, id: u32) -> Self {
        Symbol::NonTerminal { category: category.to_owned(), id }
    }

    pub fn terminal(&self) -> Option<&str> {
        match self {
            Symbol::Terminal(t) => Some(t),
            Symbol::NonTerminal { .. } => None,
        }
    }

    pub fn is_terminal_eq(&self, tok: &str) -> bool {
        self.terminal() == Some(tok)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::NonTerminal { category, id } => write!(f, "@{category}:{id}"),
            Symbol::Terminal(t) => {
                if t.starts_with('@') || t.starts_with('\\') || t == "|||" || t == "->" {
                    write!(f, "\\{t}")
                } else {
                    f.write_str(t)
                }
            }
        }
    }
}

/// `lhs -> <alpha, beta>` with aligned nonterminals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rule {
    pub lhs: String,
    pub alpha: Vec<Symbol>,
    pub beta: Vec<Symbol>,
}

impl Rule {
    pub fn new(lhs: &str, alpha: Vec<Symbol>, beta: Vec<Symbol>) -> Result<Self, ScfgError> {
        let rule = Rule { lhs: lhs.to_owned(), alpha, beta };
        if !rule.is_aligned() {
            return Err(ScfgError::Misaligned { rule: rule.to_string() });
        }
        Ok(rule)
    }

    /// All-terminal rule from token slices.
    pub fn terminal(lhs: &str, alpha: &[String], beta: &[String]) -> Self {
        Rule {
            lhs: lhs.to_owned(),
            alpha: alpha.iter().map(|t| Symbol::Terminal(t.clone())).collect(),
            beta: beta.iter().map(|t| Symbol::Terminal(t.clone())).collect(),
        }
    }

    fn nonterminals(side: &[Symbol]) -> Vec<(&str, u32)> {
        side.iter()
            .filter_map(|s| match s {
                Symbol::NonTerminal { category, id } => Some((category.as_str(), *id)),
                Symbol::Terminal(_) => None,
            })
            .collect()
    }

    /// Each side has distinct alignment ids and both sides carry the same
    /// `(category, id)` set.
    pub fn is_aligned(&self) -> bool {
        let a = Self::nonterminals(&self.alpha);
        let b = Self::nonterminals(&self.beta);
        let ids_a: BTreeSet<u32> = a.iter().map(|x| x.1).collect();
        let ids_b: BTreeSet<u32> = b.iter().map(|x| x.1).collect();
        if ids_a.len() != a.len() || ids_b.len() != b.len() {
            return false;
        }
        let sa: BTreeSet<_> = a.into_iter().collect();
        let sb: BTreeSet<_> = b.into_iter().collect();
        sa == sb
    }

    /// Categories referenced on the right-hand side.
    pub fn rhs_categories(&self) -> impl Iterator<Item = &str> {
        self.alpha.iter().filter_map(|s| match s {
            Symbol::NonTerminal { category, .. } => Some(category.as_str()),
            Symbol::Terminal(_) => None,
        })
    }

    pub fn next_id(&self) -> u32 {
        self.alpha
            .iter()
            .chain(self.beta.iter())
            .filter_map(|s| match s {
                Symbol::NonTerminal { id, .. } => Some(*id),
                Symbol::Terminal(_) => None,
            })
            .max()
            .map_or(1, |m| m + 1)
    }

    pub fn is_all_terminal(&self) -> bool {
        self.alpha.iter().chain(self.beta.iter()).all(|s| s.terminal().is_some())
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 2 || toks[1] != "->" {
            return Err("expected `LHS -> alpha ||| beta`".into());
        }
        let lhs = toks[0];
        let rest = &toks[2..];
        let sep = rest.iter().position(|t| *t == "|||").ok_or("missing `|||`")?;
        let parse_side =
            |side: &[&str]| -> Result<Vec<Symbol>, String> { side.iter().map(|t| parse_symbol(t)).collect() };
        let alpha = parse_side(&rest[..sep])?;
        let beta = parse_side(&rest[sep + 1..])?;
        Rule::new(lhs, alpha, beta).map_err(|e| e.to_string())
    }
}

fn parse_symbol(tok: &str) -> Result<Symbol, String> {
    if let Some(esc) = tok.strip_prefix('\\') {
        return Ok(Symbol::Terminal(esc.to_owned()));
    }
    if let Some(nt) = tok.strip_prefix('@') {
        let (cat, id) = nt.rsplit_once(':').ok_or_else(|| format!("bad nonterminal {tok}"))?;
        let id = id.parse().map_err(|_| format!("bad alignment id in {tok}"))?;
        if cat.is_empty() {
            return Err(format!("bad nonterminal {tok}"));
        }
        return Ok(Symbol::nt(cat, id));
    }
    Ok(Symbol::Terminal(tok.to_owned()))
}

fn join_symbols(side: &[Symbol]) -> String {
    side.iter().map(Symbol::to_string).collect::<Vec<_>>().join(" ")
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {} ||| {}", self.lhs, join_symbols(&self.alpha), join_symbols(&self.beta))
    }
}

/// A deduplicated, ordered rule set with a distinguished root category.
#[derive(Debug, Clone)]
pub struct Grammar {
    root: String,
    rules: Vec<Rule>,
    by_lhs: HashMap<String, Vec<usize>>,
}

impl PartialEq for Grammar {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.rules == other.rules
    }
}

impl Grammar {
    /// Builds a grammar, dropping duplicate rules but keeping first-seen order.
    pub fn new(root: &str, rules: impl IntoIterator<Item = Rule>) -> Self {
        let rules: IndexSet<Rule> = rules.into_iter().collect();
        let rules: Vec<Rule> = rules.into_iter().collect();
        let mut by_lhs: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in rules.iter().enumerate() {
            by_lhs.entry(r.lhs.clone()).or_default().push(i);
        }
        Grammar { root: root.to_owned(), rules, by_lhs }
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules_for(&self, category: &str) -> &[usize] {
        self.by_lhs.get(category).map_or(&[], Vec::as_slice)
    }

    pub fn rule_set(&self) -> BTreeSet<Rule> {
        self.rules.iter().cloned().collect()
    }

    pub fn count_by_lhs(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for r in &self.rules {
            *m.entry(r.lhs.as_str()).or_insert(0) += 1;
        }
        m
    }

    /// Every referenced category has a rule, and the root has rules.
    pub fn check_productive(&self) -> Result<(), ScfgError> {
        if self.rules_for(&self.root).is_empty() {
            return Err(ScfgError::Unproductive(self.root.clone()));
        }
        for r in &self.rules {
            for cat in r.rhs_categories() {
                if self.rules_for(cat).is_empty() {
                    return Err(ScfgError::Unproductive(cat.to_owned()));
                }
            }
        }
        Ok(())
    }

    /// Whether some category can derive itself.
    pub fn has_cycle(&self) -> bool {
        let edges: BTreeMap<&str, BTreeSet<&str>> = self.rules.iter().fold(BTreeMap::new(), |mut m, r| {
            m.entry(r.lhs.as_str()).or_default().extend(r.rhs_categories());
            m
        });
        // 0 = unvisited, 1 = on stack, 2 = done
        fn visit<'a>(
            n: &'a str,
            edges: &BTreeMap<&'a str, BTreeSet<&'a str>>,
            state: &mut HashMap<&'a str, u8>,
        ) -> bool {
            match state.get(n) {
                Some(1) => return true,
                Some(2) => return false,
                _ => {}
            }
            state.insert(n, 1);
            if let Some(next) = edges.get(n) {
                for m in next {
                    if visit(m, edges, state) {
                        return true;
                    }
                }
            }
            state.insert(n, 2);
            false
        }
        let mut state = HashMap::new();
        edges.keys().any(|n| visit(n, &edges, &mut state))
    }

    /// Drops rules that mention categories which can never finish a derivation.
    pub fn prune_unproductive(&self) -> Grammar {
        let mut productive: BTreeSet<&str> = BTreeSet::new();
        loop {
            let before = productive.len();
            for r in &self.rules {
                if r.rhs_categories().all(|c| productive.contains(c)) {
                    productive.insert(&r.lhs);
                }
            }
            if productive.len() == before {
                break;
            }
        }
        Grammar::new(
            &self.root,
            self.rules.iter().filter(|r| r.rhs_categories().all(|c| productive.contains(c))).cloned(),
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{FORMAT_HEADER}\n# root {}\n", self.root);
        for r in &self.rules {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ScfgError> {
        let mut root = ROOT.to_owned();
        let mut rules = Vec::new();
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if comment == FORMAT_HEADER.trim_start_matches('#').trim() {
                    saw_header = true;
                } else if let Some(r) = comment.strip_prefix("root ") {
                    root = r.trim().to_owned();
                } else if comment.starts_with("scfg ") {
                    return Err(ScfgError::Parse { line: i + 1, message: format!("unsupported format {comment:?}") });
                }
                continue;
            }
            let rule = Rule::parse(line).map_err(|message| ScfgError::Parse { line: i + 1, message })?;
            rules.push(rule);
        }
        if !saw_header {
            return Err(ScfgError::Parse { line: 1, message: format!("missing `{FORMAT_HEADER}` header") });
        }
        Ok(Grammar::new(&root, rules))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScfgError> {
        Grammar::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScfgError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}
