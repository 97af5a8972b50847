//! A synthetic relational world, depth-n compositional examples, an
//! executor, and the experiments run on them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Dataset, DomainConfig, EntityType, Example, PhraseType};
use crate::decoding::{evaluate, EvalMode, Executor};
use crate::neural::{ModelConfig, NeuralError};
use crate::rng::{substream, DATA_GEN, GRAMMAR_SAMPLING, WORLD_GEN};
use crate::scfg::{abs_entities, abs_whole_phrases, init_grammar, sample_example, Grammar, ScfgError};
use crate::training::{init_model, train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ArtificialError {
    #[error("requested {requested} distinct examples but only {available} exist")]
    Exhausted { requested: u128, available: u128 },
    #[error("could not draw {requested} distinct recombinant examples (got {got})")]
    GrammarExhausted { requested: usize, got: usize },
    #[error("invalid world: {0}")]
    World(String),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Grammar(#[from] ScfgError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("unknown symbol {0:?}")]
    Unknown(String),
    #[error("malformed logical form: {0}")]
    Malformed(String),
}

/// How entities are spelled in logical forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityStyle {
    /// `_ent:14`, like relations. Never copyable.
    Prefixed,
    /// `ent:14`, identical to the utterance word, so copyable.
    #[default]
    Bare,
}

impl FromStr for EntityStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prefixed" => Ok(EntityStyle::Prefixed),
            "bare" => Ok(EntityStyle::Bare),
            other => Err(format!("unknown entity style {other:?} (expected prefixed or bare)")),
        }
    }
}

impl fmt::Display for EntityStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityStyle::Prefixed => "prefixed",
            EntityStyle::Bare => "bare",
        })
    }
}

/// Entities and binary relations, each relation stored as its image map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WorldFile", into = "WorldFile")]
pub struct World {
    entities: BTreeSet<String>,
    relations: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    entities: Vec<String>,
    relations: BTreeMap<String, Vec<(String, String)>>,
}

impl TryFrom<WorldFile> for World {
    type Error = String;
    fn try_from(f: WorldFile) -> Result<Self, String> {
        World::new(f.entities, f.relations).map_err(|e| e.to_string())
    }
}

impl From<World> for WorldFile {
    fn from(w: World) -> Self {
        WorldFile {
            entities: w.entities.iter().cloned().collect(),
            relations: w.relations.keys().map(|r| (r.clone(), w.pairs(r))).collect(),
        }
    }
}

impl World {
    pub fn new(
        entities: impl IntoIterator<Item = String>,
        relations: impl IntoIterator<Item = (String, Vec<(String, String)>)>,
    ) -> Result<Self, ArtificialError> {
        let entities: BTreeSet<String> = entities.into_iter().collect();
        let mut rels = BTreeMap::new();
        for (name, pairs) in relations {
            if entities.contains(&name) {
                return Err(ArtificialError::World(format!("{name} is both an entity and a relation")));
            }
            if pairs.is_empty() {
                return Err(ArtificialError::World(format!("relation {name} is empty")));
            }
            let mut image: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            for (a, b) in pairs {
                for e in [&a, &b] {
                    if !entities.contains(e) {
                        return Err(ArtificialError::World(format!("relation {name} mentions unknown entity {e}")));
                    }
                }
                image.entry(a).or_default().insert(b);
            }
            rels.insert(name, image);
        }
        Ok(World { entities, relations: rels })
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(String::as_str)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Ordered pairs of `relation`, sorted.
    pub fn pairs(&self, relation: &str) -> Vec<(String, String)> {
        self.relations
            .get(relation)
            .map(|img| img.iter().flat_map(|(a, bs)| bs.iter().map(move |b| (a.clone(), b.clone()))).collect())
            .unwrap_or_default()
    }

    /// Every entity has at least one image under every relation.
    pub fn is_left_total(&self) -> bool {
        self.relations.values().all(|img| self.entities.iter().all(|e| img.get(e).is_some_and(|s| !s.is_empty())))
    }

    pub fn image(&self, relation: &str, of: &BTreeSet<String>) -> Option<BTreeSet<String>> {
        let img = self.relations.get(relation)?;
        Some(of.iter().filter_map(|e| img.get(e)).flatten().cloned().collect())
    }

    /// Denotation of a nested logical form `( _r ( _q _e ) )`. A leading
    /// underscore on any symbol is ignored.
    pub fn execute(&self, logical_form: &[String]) -> Result<BTreeSet<String>, ExecError> {
        let (set, used) = self.eval_at(logical_form, 0, 0)?;
        if used != logical_form.len() {
            return Err(ExecError::Malformed(format!("trailing tokens from position {used}")));
        }
        Ok(set)
    }

    fn eval_at(&self, t: &[String], pos: usize, depth: usize) -> Result<(BTreeSet<String>, usize), ExecError> {
        if depth > 256 {
            return Err(ExecError::Malformed("nesting too deep".into()));
        }
        let tok = t.get(pos).ok_or_else(|| ExecError::Malformed("unexpected end".into()))?;
        if tok == "(" {
            let rel = t.get(pos + 1).ok_or_else(|| ExecError::Malformed("missing relation".into()))?;
            let name = strip_underscore(rel);
            if !self.relations.contains_key(name) {
                return Err(ExecError::Unknown(rel.clone()));
            }
            let (arg, next) = self.eval_at(t, pos + 2, depth + 1)?;
            if t.get(next).map(String::as_str) != Some(")") {
                return Err(ExecError::Malformed(format!("expected ) at position {next}")));
            }
            Ok((self.image(name, &arg).expect("relation checked"), next + 1))
        } else if tok == ")" {
            Err(ExecError::Malformed(format!("unexpected ) at position {pos}")))
        } else {
            let name = strip_underscore(tok);
            if !self.entities.contains(name) {
                return Err(ExecError::Unknown(tok.clone()));
            }
            Ok((BTreeSet::from([name.to_owned()]), pos + 1))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ArtificialError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ArtificialError> {
        World::from_json(&std::fs::read_to_string(path)?)
    }
}

fn strip_underscore(s: &str) -> &str {
    s.strip_prefix('_').unwrap_or(s)
}

impl Executor for World {
    type Denotation = BTreeSet<String>;
    type Error = ExecError;
    fn execute(&self, logical_form: &[String]) -> Result<Self::Denotation, ExecError> {
        World::execute(self, logical_form)
    }
}

fn padded(prefix: &str, i: usize, n: usize) -> String {
    let width = (n.saturating_sub(1)).to_string().len().max(2);
    format!("{prefix}{i:0width$}")
}

/// Entities `ent:00..`, relations `rel:00..`. Each relation maps every
/// entity to between 1 and 3 distinct entities, chosen uniformly.
pub fn generate_world<R: Rng + ?Sized>(
    num_entities: usize,
    num_relations: usize,
    rng: &mut R,
) -> Result<World, ArtificialError> {
    if num_entities == 0 || num_relations == 0 {
        return Err(ArtificialError::World("need at least one entity and one relation".into()));
    }
    let entities: Vec<String> = (0..num_entities).map(|i| padded("ent:", i, num_entities)).collect();
    let max_out = num_entities.min(3);
    let mut relations = Vec::with_capacity(num_relations);
    for r in 0..num_relations {
        let mut pairs = Vec::new();
        for a in &entities {
            let k = rng.gen_range(1..=max_out);
            let mut targets: Vec<usize> = sample(rng, num_entities, k).into_vec();
            targets.sort_unstable();
            pairs.extend(targets.into_iter().map(|b| (a.clone(), entities[b].clone())));
        }
        relations.push((padded("rel:", r, num_relations), pairs));
    }
    World::new(entities, relations)
}

/// `rel:a of rel:b of ent:x` paired with `( _rel:a ( _rel:b ent:x ) )`.
pub fn make_example(relations: &[&str], entity: &str, style: EntityStyle) -> Example {
    let mut utterance = Vec::with_capacity(2 * relations.len() + 1);
    let mut lf = Vec::with_capacity(3 * relations.len() + 1);
    for r in relations {
        utterance.push((*r).to_owned());
        utterance.push("of".to_owned());
        lf.push("(".to_owned());
        lf.push(format!("_{r}"));
    }
    utterance.push(entity.to_owned());
    lf.push(match style {
        EntityStyle::Prefixed => format!("_{entity}"),
        EntityStyle::Bare => entity.to_owned(),
    });
    lf.extend(std::iter::repeat_n(")".to_owned(), relations.len()));
    Example { utterance, logical_form: lf }
}

/// Relations and entity of a well-formed utterance.
pub fn parse_utterance(utterance: &[String]) -> Option<(Vec<&str>, &str)> {
    let (entity, rest) = utterance.split_last()?;
    if rest.len() % 2 != 0 {
        return None;
    }
    let mut rels = Vec::new();
    for pair in rest.chunks(2) {
        if pair[1] != "of" || pair[0] == "of" {
            return None;
        }
        rels.push(pair[0].as_str());
    }
    (entity != "of").then_some((rels, entity.as_str()))
}

/// Relations and entity of a well-formed logical form, underscores removed.
pub fn parse_logical_form(lf: &[String]) -> Option<(Vec<&str>, &str)> {
    let mut rels = Vec::new();
    let mut i = 0;
    while lf.get(i).map(String::as_str) == Some("(") {
        let r = lf.get(i + 1)?;
        rels.push(r.strip_prefix('_')?);
        i += 2;
    }
    let entity = strip_underscore(lf.get(i)?);
    if entity == "(" || entity == ")" {
        return None;
    }
    let closes = &lf[i + 1..];
    (closes.len() == rels.len() && closes.iter().all(|t| t == ")")).then_some((rels, entity))
}

/// Number of `of` tokens.
pub fn depth_of(example: &Example) -> usize {
    example.utterance.iter().filter(|t| *t == "of").count()
}

/// `count` distinct depth-`depth` examples, each drawing its relations and
/// entity uniformly, skipping anything in `exclude`.
pub fn generate_examples_excluding<R: Rng + ?Sized>(
    world: &World,
    depth: usize,
    count: usize,
    style: EntityStyle,
    exclude: &HashSet<Example>,
    rng: &mut R,
) -> Result<Vec<Example>, ArtificialError> {
    let rels: Vec<&str> = world.relations().collect();
    let ents: Vec<&str> = world.entities().collect();
    let total = (rels.len() as u128).checked_pow(depth as u32).and_then(|r| r.checked_mul(ents.len() as u128));
    let available = total.unwrap_or(u128::MAX).saturating_sub(exclude.len() as u128);
    if count as u128 > available {
        return Err(ArtificialError::Exhausted { requested: count as u128, available });
    }
    let mut seen: HashSet<Example> = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    if (count as u128).saturating_mul(2) <= available {
        while out.len() < count {
            let chosen: Vec<&str> = (0..depth).map(|_| rels[rng.gen_range(0..rels.len())]).collect();
            let ex = make_example(&chosen, ents[rng.gen_range(0..ents.len())], style);
            if !exclude.contains(&ex) && seen.insert(ex.clone()) {
                out.push(ex);
            }
        }
    } else {
        // dense request: enumerate the (small) space and shuffle
        let mut all = Vec::new();
        let mut idx = vec![0usize; depth];
        loop {
            for e in &ents {
                let chosen: Vec<&str> = idx.iter().map(|&i| rels[i]).collect();
                let ex = make_example(&chosen, e, style);
                if !exclude.contains(&ex) {
                    all.push(ex);
                }
            }
            let mut k = 0;
            while k < depth {
                idx[k] += 1;
                if idx[k] < rels.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == depth {
                break;
            }
        }
        all.shuffle(rng);
        all.truncate(count);
        out = all;
    }
    Ok(out)
}

pub fn generate_examples<R: Rng + ?Sized>(
    world: &World,
    depth: usize,
    count: usize,
    style: EntityStyle,
    rng: &mut R,
) -> Result<Vec<Example>, ArtificialError> {
    if depth == 0 || count == 0 {
        return Err(ArtificialError::Config("depth and count must be at least 1".into()));
    }
    generate_examples_excluding(world, depth, count, style, &HashSet::new(), rng)
}

/// Entities of type `Ent`; any whole logical form starting with `(` is a
/// `Set` phrase, and an entity slot can be replaced by a `Set`.
pub fn domain_config(style: EntityStyle) -> DomainConfig {
    let mut ent = EntityType::new("Ent", &[crate::corpus::ENTITY_SLOT]);
    ent.set_category = Some("Set".into());
    ent.slot_regex = Some("^_?ent:".into());
    ent.lf_prefix = match style {
        EntityStyle::Prefixed => "_".into(),
        EntityStyle::Bare => String::new(),
    };
    let mut cfg = DomainConfig::empty();
    cfg.entity_types.push(ent);
    cfg.phrase_types.push(PhraseType {
        category: "Set".into(),
        lf_prefix: Vec::new(),
        lf_suffix: Vec::new(),
        body_prefix: vec!["(".into()],
    });
    cfg.validate().expect("built-in artificial config is valid");
    cfg
}

/// Draws distinct samples of the given depth not in `exclude`.
pub fn sample_distinct<R: Rng + ?Sized>(
    grammar: &Grammar,
    count: usize,
    depth: usize,
    exclude: &HashSet<Example>,
    rng: &mut R,
) -> Result<Vec<Example>, ArtificialError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let budget = 1000 * count.max(1) + 10_000;
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let ex = sample_example(grammar, rng)?;
        if depth_of(&ex) == depth && !exclude.contains(&ex) && seen.insert(ex.clone()) {
            out.push(ex);
        }
    }
    if out.len() < count {
        return Err(ArtificialError::GrammarExhausted { requested: count, got: out.len() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    SameIndependent,
    LongerIndependent,
    SameRecombinant,
    LongerRecombinant,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::SameIndependent,
        Condition::LongerIndependent,
        Condition::SameRecombinant,
        Condition::LongerRecombinant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::SameIndependent => "same-length-independent",
            Condition::LongerIndependent => "longer-independent",
            Condition::SameRecombinant => "same-length-recombinant",
            Condition::LongerRecombinant => "longer-recombinant",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Condition::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown condition {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed_size: usize,
    pub test_size: usize,
    pub counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub num_entities: usize,
    pub num_relations: usize,
    pub style: EntityStyle,
    pub model: ModelConfig,
    /// Training settings; `seed` is replaced by each run's seed.
    pub train: TrainConfig,
    pub beam: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed_size: 100,
            test_size: 500,
            counts: vec![0, 50, 100, 150, 200, 250, 300],
            seeds: (0..5).collect(),
            num_entities: 20,
            num_relations: 40,
            style: EntityStyle::Bare,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            beam: 5,
        }
    }
}

impl ExperimentConfig {
    /// Smaller network for quick runs.
    pub fn reduced() -> Self {
        ExperimentConfig {
            model: ModelConfig { embed_dim: 25, hidden: 50, ..ModelConfig::default() },
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ArtificialError> {
        if self.seed_size == 0 || self.test_size == 0 {
            return Err(ArtificialError::Config("seed and test sets must be nonempty".into()));
        }
        if self.seeds.is_empty() || self.counts.is_empty() {
            return Err(ArtificialError::Config("need at least one seed and one count".into()));
        }
        if self.beam == 0 {
            return Err(ArtificialError::Config("beam must be at least 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub condition: Condition,
    pub added: usize,
    pub seed: u64,
    pub exact_acc: f64,
    pub denotation_acc: f64,
}

/// Everything one seed's runs share.
pub struct SeedData {
    pub world: World,
    pub seed_set: Vec<Example>,
    pub test_set: Vec<Example>,
    pools: BTreeMap<Condition, Vec<Example>>,
}

impl SeedData {
    pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self, ArtificialError> {
        let max_added = cfg.counts.iter().copied().max().unwrap_or(0);
        let world = generate_world(cfg.num_entities, cfg.num_relations, &mut substream(seed, WORLD_GEN))?;
        let mut data_rng = substream(seed, DATA_GEN);
        let mut depth2 =
            generate_examples(&world, 2, cfg.seed_size + cfg.test_size + max_added, cfg.style, &mut data_rng)?;
        let same_pool = depth2.split_off(cfg.seed_size + cfg.test_size);
        let test_set = depth2.split_off(cfg.seed_size);
        let seed_set = depth2;
        let longer_pool =
            if max_added > 0 { generate_examples(&world, 4, max_added, cfg.style, &mut data_rng)? } else { Vec::new() };

        let domain = domain_config(cfg.style);
        let base = init_grammar(&Dataset::new(seed_set.clone())?)?;
        let same_grammar = abs_entities(&base, &domain);
        let longer_grammar = abs_entities(&abs_whole_phrases(&base, &domain), &domain);
        let seen: HashSet<Example> = seed_set.iter().cloned().collect();
        let mut g_rng = substream(seed, GRAMMAR_SAMPLING);
        let same_recomb = sample_distinct(&same_grammar, max_added, 2, &seen, &mut g_rng)?;
        let longer_recomb = sample_distinct(&longer_grammar, max_added, 4, &seen, &mut g_rng)?;

        let pools = BTreeMap::from([
            (Condition::SameIndependent, same_pool),
            (Condition::LongerIndependent, longer_pool),
            (Condition::SameRecombinant, same_recomb),
            (Condition::LongerRecombinant, longer_recomb),
        ]);
        Ok(SeedData { world, seed_set, test_set, pools })
    }

    /// The first `count` additions for `condition`.
    pub fn added(&self, condition: Condition, count: usize) -> &[Example] {
        &self.pools[&condition][..count]
    }

    pub fn training_set(&self, condition: Condition, count: usize) -> Vec<Example> {
        let mut v = self.seed_set.clone();
        v.extend_from_slice(self.added(condition, count));
        v
    }
}

/// Trains on `train_set` and reports (exact, denotation) accuracy on `test`.
pub fn train_and_score(
    train_set: Vec<Example>,
    test: &[Example],
    world: &World,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    beam: usize,
) -> Result<(f64, f64), ArtificialError> {
    let ds = Dataset::new(train_set)?;
    let mut model = init_model(model_cfg.clone(), &ds, train_cfg.seed);
    train(&mut model, &ds, None, train_cfg)?;
    let exact = evaluate(&model, test, beam, EvalMode::Exact, Some(world))?;
    let denot = evaluate(&model, test, beam, EvalMode::Denotation, Some(world))?;
    Ok((exact.accuracy, denot.accuracy))
}

/// Every (condition, count, seed) cell. A count of zero is the seed-only
/// baseline, trained once per seed and reported under every condition.
pub fn run_longer_examples_experiment<F: FnMut(&ExperimentRow)>(
    cfg: &ExperimentConfig,
    mut progress: F,
) -> Result<Vec<ExperimentRow>, ArtificialError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let data = SeedData::build(cfg, seed)?;
        let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
        let mut baseline = None;
        for &count in &cfg.counts {
            for condition in Condition::ALL {
                let (exact_acc, denotation_acc) = if count == 0 {
                    match baseline {
                        Some(b) => b,
                        None => {
                            let b = train_and_score(
                                data.seed_set.clone(),
                                &data.test_set,
                                &data.world,
                                &cfg.model,
                                &train_cfg,
                                cfg.beam,
                            )?;
                            baseline = Some(b);
                            b
                        }
                    }
                } else {
                    train_and_score(
                        data.training_set(condition, count),
                        &data.test_set,
                        &data.world,
                        &cfg.model,
                        &train_cfg,
                        cfg.beam,
                    )?
                };
                let row = ExperimentRow { condition, added: count, seed, exact_acc, denotation_acc };
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// CSV `condition,added,seed,exact_acc,denotation_acc`.
pub fn write_experiment_csv<W: Write>(rows: &[ExperimentRow], w: W) -> Result<(), ArtificialError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["condition", "added", "seed", "exact_acc", "denotation_acc"])?;
    for r in rows {
        out.write_record([
            r.condition.name().to_owned(),
            r.added.to_string(),
            r.seed.to_string(),
            r.exact_acc.to_string(),
            r.denotation_acc.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub condition: Condition,
    pub added: usize,
    pub seeds: usize,
    pub mean_exact_acc: f64,
    pub mean_denotation_acc: f64,
}

/// Mean over seeds per (condition, count).
pub fn aggregate(rows: &[ExperimentRow]) -> Vec<AggregateRow> {
    let mut acc: BTreeMap<(usize, Condition), (usize, f64, f64)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.added, r.condition)).or_default();
        e.0 += 1;
        e.1 += r.exact_acc;
        e.2 += r.denotation_acc;
    }
    acc.into_iter()
        .map(|((added, condition), (n, ex, de))| AggregateRow {
            condition,
            added,
            seeds: n,
            mean_exact_acc: ex / n as f64,
            mean_denotation_acc: de / n as f64,
        })
        .collect()
}

/// Whitespace-separated table, one line per count and one column per
/// condition (mean exact accuracy), for plotting.
pub fn write_aggregate_table<W: Write>(agg: &[AggregateRow], mut w: W) -> std::io::Result<()> {
    write!(w, "# added")?;
    for c in Condition::ALL {
        write!(w, " {}", c.name())?;
    }
    writeln!(w)?;
    let counts: BTreeSet<usize> = agg.iter().map(|a| a.added).collect();
    for n in counts {
        write!(w, "{n}")?;
        for c in Condition::ALL {
            match agg.iter().find(|a| a.added == n && a.condition == c) {
                Some(a) => write!(w, " {:.4}", a.mean_exact_acc)?,
                None => write!(w, " nan")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyAblationConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub seeds: Vec<u64>,
    pub num_entities: usize,
    pub num_relations: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub beam: usize,
}

impl Default for CopyAblationConfig {
    fn default() -> Self {
        CopyAblationConfig {
            train_size: 100,
            test_size: 200,
            seeds: (0..5).collect(),
            num_entities: 200,
            num_relations: 10,
            model: ModelConfig { embed_dim: 25, hidden: 50, ..ModelConfig::default() },
            train: TrainConfig::default(),
            beam: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyAblationRow {
    pub copy: bool,
    pub seed: u64,
    pub exact_acc: f64,
    pub denotation_acc: f64,
}

/// Same data and initialization with copying on and off.
pub fn run_copy_ablation<F: FnMut(&CopyAblationRow)>(
    cfg: &CopyAblationConfig,
    mut progress: F,
) -> Result<Vec<CopyAblationRow>, ArtificialError> {
    if cfg.seeds.is_empty() || cfg.train_size == 0 || cfg.test_size == 0 || cfg.beam == 0 {
        return Err(ArtificialError::Config("copy ablation needs seeds, data and a beam".into()));
    }
    cfg.train.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let world = generate_world(cfg.num_entities, cfg.num_relations, &mut substream(seed, WORLD_GEN))?;
        let mut data = generate_examples(
            &world,
            2,
            cfg.train_size + cfg.test_size,
            EntityStyle::Bare,
            &mut substream(seed, DATA_GEN),
        )?;
        let test = data.split_off(cfg.train_size);
        let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
        for copy in [true, false] {
            let model_cfg = ModelConfig { copy, ..cfg.model.clone() };
            let (exact_acc, denotation_acc) =
                train_and_score(data.clone(), &test, &world, &model_cfg, &train_cfg, cfg.beam)?;
            let row = CopyAblationRow { copy, seed, exact_acc, denotation_acc };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// CSV `copy,seed,exact_acc,denotation_acc`.
pub fn write_copy_ablation_csv<W: Write>(rows: &[CopyAblationRow], w: W) -> Result<(), ArtificialError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["copy", "seed", "exact_acc", "denotation_acc"])?;
    for r in rows {
        out.write_record([
            u8::from(r.copy).to_string(),
            r.seed.to_string(),
            r.exact_acc.to_string(),
            r.denotation_acc.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
