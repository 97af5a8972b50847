use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Current schema version of domain config files.
pub const DOMAIN_CONFIG_VERSION: u32 = 1;

/// Marks the entity slot inside a logical-form pattern.
pub const ENTITY_SLOT: &str = "$E";

/// Domain knowledge used by grammar induction and the copy mask.
///
/// Stored as TOML. A minimal file:
///
/// ```toml
/// version = 1
///
/// [[entity_types]]
/// category = "StateId"
/// set_category = "State"
/// pattern = ["stateid", "(", "$E", ")"]
/// set_pattern = ["const", "(", "V0", ",", "stateid", "(", "$E", ")", ")"]
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub version: u32,
    #[serde(default)]
    pub entity_types: Vec<EntityType>,
    #[serde(default)]
    pub phrase_types: Vec<PhraseType>,
    #[serde(default)]
    pub question: QuestionIdentifiers,
    /// Output tokens starting with one of these are never produced by copying.
    #[serde(default = "default_non_copyable")]
    pub non_copyable_prefixes: Vec<String>,
}

fn default_non_copyable() -> Vec<String> {
    vec!["_".to_owned()]
}

/// How an entity of one type shows up in a logical form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityType {
    /// Category abstracting the entity itself, e.g. `StateId`.
    pub category: String,
    /// Category for whole phrases denoting sets of this type, e.g. `State`.
    #[serde(default)]
    pub set_category: Option<String>,
    /// Logical-form token pattern with one `$E` slot, e.g. `stateid ( $E )`.
    pub pattern: Vec<String>,
    /// Span replaced by `set_category` during whole-phrase abstraction.
    /// Defaults to `pattern`.
    #[serde(default)]
    pub set_pattern: Option<Vec<String>>,
    /// Optional restriction on the slot token.
    #[serde(default)]
    pub slot_regex: Option<String>,
    /// Prefix the logical form puts in front of the utterance word.
    #[serde(default)]
    pub lf_prefix: String,
    /// Multi-word utterance phrases for entity tokens.
    #[serde(default)]
    pub aliases: Vec<EntityAlias>,
    #[serde(skip)]
    compiled: Option<Regex>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityAlias {
    pub entity: String,
    pub phrase: Vec<String>,
}

/// Declares when an entire logical form denotes a set of some type.
///
/// A logical form `lf_prefix BODY lf_suffix` whose BODY starts with
/// `body_prefix` denotes a `category` set; BODY becomes the phrase's
/// logical form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhraseType {
    pub category: String,
    #[serde(default)]
    pub lf_prefix: Vec<String>,
    #[serde(default)]
    pub lf_suffix: Vec<String>,
    #[serde(default)]
    pub body_prefix: Vec<String>,
}

/// Utterance prefixes/suffixes stripped from whole phrases ("what", "?").
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionIdentifiers {
    #[serde(default)]
    pub prefixes: Vec<Vec<String>>,
    #[serde(default)]
    pub suffixes: Vec<Vec<String>>,
}

impl EntityType {
    pub fn new(category: &str, pattern: &[&str]) -> Self {
        EntityType {
            category: category.to_owned(),
            set_category: None,
            pattern: pattern.iter().map(|s| s.to_string()).collect(),
            set_pattern: None,
            slot_regex: None,
            lf_prefix: String::new(),
            aliases: Vec::new(),
            compiled: None,
        }
    }

    pub fn set_pattern(&self) -> &[String] {
        self.set_pattern.as_deref().unwrap_or(&self.pattern)
    }

    pub fn slot_offset(pattern: &[String]) -> Option<usize> {
        pattern.iter().position(|t| t == ENTITY_SLOT)
    }

    pub fn slot_accepts(&self, token: &str) -> bool {
        match (&self.compiled, &self.slot_regex) {
            (Some(re), _) => re.is_match(token),
            (None, Some(src)) => Regex::new(src).map(|re| re.is_match(token)).unwrap_or(false),
            (None, None) => true,
        }
    }

    /// Utterance renderings of a logical-form entity token.
    pub fn utterance_forms(&self, entity: &str) -> Vec<Vec<String>> {
        let mut forms: Vec<Vec<String>> =
            self.aliases.iter().filter(|a| a.entity == entity).map(|a| a.phrase.clone()).collect();
        if let Some(word) = entity.strip_prefix(self.lf_prefix.as_str()) {
            if !word.is_empty() {
                forms.push(vec![word.to_owned()]);
            }
        }
        forms.dedup();
        forms
    }
}

impl DomainConfig {
    pub fn empty() -> Self {
        DomainConfig {
            version: DOMAIN_CONFIG_VERSION,
            entity_types: Vec::new(),
            phrase_types: Vec::new(),
            question: QuestionIdentifiers::default(),
            non_copyable_prefixes: default_non_copyable(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CorpusError> {
        let mut cfg: DomainConfig = toml::from_str(text).map_err(|e| CorpusError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("domain config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        DomainConfig::from_toml(&fs::read_to_string(path)?)
    }

    /// Checks the schema and compiles slot regexes.
    pub fn validate(&mut self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Config(m));
        if self.version != DOMAIN_CONFIG_VERSION {
            return err(format!("unsupported version {} (expected {DOMAIN_CONFIG_VERSION})", self.version));
        }
        let reserved = ["Root", "Sent"];
        let mut seen: Vec<&str> = Vec::new();
        for et in &mut self.entity_types {
            for pat in [Some(&et.pattern), et.set_pattern.as_ref()].into_iter().flatten() {
                if pat.iter().filter(|t| *t == ENTITY_SLOT).count() != 1 {
                    return err(format!("{}: pattern needs exactly one {ENTITY_SLOT}", et.category));
                }
            }
            if let Some(src) = &et.slot_regex {
                et.compiled = Some(Regex::new(src).map_err(|e| CorpusError::Config(e.to_string()))?);
            }
        }
        for et in &self.entity_types {
            if reserved.contains(&et.category.as_str()) || seen.contains(&et.category.as_str()) {
                return err(format!("entity category {} clashes", et.category));
            }
            seen.push(&et.category);
        }
        for et in &self.entity_types {
            if let Some(sc) = &et.set_category {
                if reserved.contains(&sc.as_str()) || self.entity_types.iter().any(|o| &o.category == sc) {
                    return err(format!("set category {sc} clashes"));
                }
            }
        }
        for pt in &self.phrase_types {
            if reserved.contains(&pt.category.as_str()) || self.entity_types.iter().any(|o| o.category == pt.category) {
                return err(format!("phrase category {} clashes", pt.category));
            }
        }
        for cat in self.all_categories() {
            if cat.is_empty() || cat.contains(char::is_whitespace) || cat.contains(':') {
                return err(format!("bad category name {cat:?}"));
            }
        }
        Ok(())
    }

    fn all_categories(&self) -> impl Iterator<Item = &str> {
        self.entity_types
            .iter()
            .flat_map(|e| std::iter::once(e.category.as_str()).chain(e.set_category.as_deref()))
            .chain(self.phrase_types.iter().map(|p| p.category.as_str()))
    }

    /// Whether an output token may be produced by a copy action.
    pub fn is_copyable(&self, token: &str) -> bool {
        is_copyable_token(token, &self.non_copyable_prefixes)
    }

    /// Strips the longest matching question prefix and suffix.
    pub fn strip_question<'a>(&self, tokens: &'a [String]) -> &'a [String] {
        let pre = longest_match(&self.question.prefixes, |p| tokens.starts_with(p));
        let rest = &tokens[pre..];
        let suf = longest_match(&self.question.suffixes, |s| rest.ends_with(s));
        &rest[..rest.len() - suf]
    }
}

fn longest_match(options: &[Vec<String>], hit: impl Fn(&[String]) -> bool) -> usize {
    options.iter().filter(|o| hit(o)).map(Vec::len).max().unwrap_or(0)
}

pub fn is_copyable_token(token: &str, non_copyable_prefixes: &[String]) -> bool {
    !matches!(token, super::UNK | super::SEP | super::EOS)
        && !non_copyable_prefixes.iter().any(|p| !p.is_empty() && token.starts_with(p.as_str()))
}
