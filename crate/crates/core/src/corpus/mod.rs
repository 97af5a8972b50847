//! Utterance/logical-form pairs, vocabularies and singleton handling.

mod domain;

pub use domain::{
    is_copyable_token, DomainConfig, EntityAlias, EntityType, PhraseType, QuestionIdentifiers, DOMAIN_CONFIG_VERSION,
    ENTITY_SLOT,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved token standing in for rare and unseen words.
pub const UNK: &str = "<unk>";
/// Reserved separator between concatenated sentences.
pub const SEP: &str = "</s>";
/// Reserved end-of-sequence write token, output side only.
pub const EOS: &str = "<eos>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid example: {0}")]
    InvalidExample(String),
    #[error("invalid domain config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A tokenized utterance paired with its tokenized logical form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Example {
    pub utterance: Vec<String>,
    pub logical_form: Vec<String>,
}

impl Example {
    pub fn new(utterance: Vec<String>, logical_form: Vec<String>) -> Result<Self, CorpusError> {
        if utterance.is_empty() || logical_form.is_empty() {
            return Err(CorpusError::InvalidExample("both sides must be nonempty".into()));
        }
        for tok in utterance.iter().chain(logical_form.iter()) {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(CorpusError::InvalidExample(format!("bad token {tok:?}")));
            }
        }
        Ok(Example { utterance, logical_form })
    }

    /// Builds an example from two space-separated strings.
    pub fn parse(utterance: &str, logical_form: &str) -> Result<Self, CorpusError> {
        Example::new(split_tokens(utterance), split_tokens(logical_form))
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let (x, y) = line.split_once('\t').ok_or("missing tab separator")?;
        if y.contains('\t') {
            return Err("more than one tab".into());
        }
        let utterance = split_tokens(x);
        let logical_form = split_tokens(y);
        if utterance.is_empty() {
            return Err("empty utterance".into());
        }
        if logical_form.is_empty() {
            return Err("empty logical form".into());
        }
        Ok(Example { utterance, logical_form })
    }

    pub fn to_line(&self) -> String {
        format!("{}\t{}", self.utterance.join(" "), self.logical_form.join(" "))
    }
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

pub fn split_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

/// Dense bijection between tokens and ids. Reserved tokens come first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::from_tokens([UNK, SEP])
    }
}

impl Vocabulary {
    /// Vocabulary holding `<unk>`, `</s>` and then `tokens` in first-seen order.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Self {
        let mut v = Vocabulary::default();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    /// Exactly the given tokens, deduplicated, in order.
    pub fn from_tokens<S: AsRef<str>, I: IntoIterator<Item = S>>(tokens: I) -> Self {
        let mut v = Vocabulary { tokens: Vec::new(), index: HashMap::new() };
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Id of `token`, falling back to `<unk>`.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.get(token).or_else(|| self.get(UNK)).expect("vocabulary without <unk>")
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Ordered training examples plus their vocabularies.
///
/// `input_vocab` is the lookup vocabulary for embeddings: after
/// [`Dataset::replace_singletons`] it no longer holds tokens seen exactly once,
/// so those (and any unseen test word) resolve to `<unk>`. Examples always
/// keep their surface forms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub input_vocab: Vocabulary,
    pub output_vocab: Vocabulary,
    replaced: BTreeSet<String>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Result<Self, CorpusError> {
        if examples.is_empty() {
            return Err(CorpusError::Empty);
        }
        let input_vocab = Vocabulary::build(examples.iter().flat_map(|e| e.utterance.iter().map(String::as_str)));
        let output_vocab = Vocabulary::build(examples.iter().flat_map(|e| e.logical_form.iter().map(String::as_str)));
        Ok(Dataset { examples, input_vocab, output_vocab, replaced: BTreeSet::new() })
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut examples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            let ex = Example::from_line(line).map_err(|message| CorpusError::Parse { line: i + 1, message })?;
            examples.push(ex);
        }
        Dataset::new(examples)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&ex.to_line());
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_frequencies(&self) -> BTreeMap<&str, usize> {
        let mut freq = BTreeMap::new();
        for tok in self.examples.iter().flat_map(|e| e.utterance.iter()) {
            *freq.entry(tok.as_str()).or_insert(0) += 1;
        }
        freq
    }

    /// Maps input tokens occurring exactly once to `<unk>` for embedding
    /// lookup. Output tokens are never touched.
    pub fn replace_singletons(&self) -> Dataset {
        let freq = self.input_frequencies();
        let replaced: BTreeSet<String> = freq.iter().filter(|(_, &c)| c == 1).map(|(t, _)| (*t).to_owned()).collect();
        let input_vocab = Vocabulary::build(
            self.examples
                .iter()
                .flat_map(|e| e.utterance.iter().map(String::as_str))
                .filter(|t| !replaced.contains(*t)),
        );
        Dataset { examples: self.examples.clone(), input_vocab, output_vocab: self.output_vocab.clone(), replaced }
    }

    /// Tokens mapped to `<unk>` by singleton replacement.
    pub fn replaced(&self) -> &BTreeSet<String> {
        &self.replaced
    }

    /// The utterance as seen by the embedding table.
    pub fn lookup_view<'a>(&self, utterance: &'a [String]) -> Vec<&'a str> {
        utterance.iter().map(|t| if self.input_vocab.contains(t) { t.as_str() } else { UNK }).collect()
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    Dataset::parse(&fs::read_to_string(path)?)
}

pub fn write_examples(path: impl AsRef<Path>, examples: &[Example]) -> std::io::Result<()> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&ex.to_line());
        out.push('\n');
    }
    fs::write(path, out)
}
