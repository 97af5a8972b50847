mod manifest;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use recomb::artificial::{
    aggregate, generate_examples, generate_world, run_copy_ablation, run_longer_examples_experiment,
    write_aggregate_table, write_copy_ablation_csv, write_experiment_csv, CopyAblationConfig, EntityStyle,
    ExperimentConfig, World,
};
use recomb::corpus::{load_dataset, write_examples, Dataset, DomainConfig};
use recomb::decoding::{evaluate, write_report_csv, EvalMode, EvalReport, NoExecutor};
use recomb::neural::{load_checkpoint, save_checkpoint, ModelConfig};
use recomb::rng::{substream, DATA_GEN, GRAMMAR_SAMPLING, WORLD_GEN};
use recomb::scfg::{init_grammar, sample_example, Grammar, Strategy};
use recomb::training::{init_model_with_grammar, train_with, write_metrics_csv, TrainConfig};

use manifest::ManifestBuilder;

#[derive(Parser)]
#[command(name = "recomb", version, about = "Data recombination for neural semantic parsing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Induce a grammar from training pairs.
    Induce(InduceArgs),
    /// Sample pairs from a grammar.
    Sample(SampleArgs),
    /// Train a model, optionally on recombinant data.
    Train(TrainArgs),
    /// Decode a test file and score it.
    Eval(EvalArgs),
    /// Artificial-data tools and experiments.
    #[command(subcommand)]
    Artificial(ArtificialCommand),
}

#[derive(Subcommand)]
enum ArtificialCommand {
    GenWorld(GenWorldArgs),
    GenData(GenDataArgs),
    Experiment(ExperimentArgs),
    CopyAblation(CopyAblationArgs),
}

#[derive(Args, Serialize)]
struct InduceArgs {
    #[arg(long)]
    train: PathBuf,
    /// Domain config (TOML); required by abs-entities and abs-whole-phrases.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated, applied in the order listed.
    #[arg(long, value_delimiter = ',', required = true)]
    strategies: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SampleArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct ModelFlags {
    #[arg(long, default_value_t = 200)]
    hidden: usize,
    #[arg(long, default_value_t = 100)]
    embed: usize,
    /// Disable copy actions entirely.
    #[arg(long)]
    no_copy: bool,
}

impl ModelFlags {
    fn config(&self) -> anyhow::Result<ModelConfig> {
        if self.hidden == 0 || self.embed == 0 {
            bail!("--hidden and --embed must be positive");
        }
        Ok(ModelConfig { embed_dim: self.embed, hidden: self.hidden, copy: !self.no_copy, ..ModelConfig::default() })
    }
}

#[derive(Args, Serialize, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Recombinant examples per epoch; defaults to the training-set size.
    #[arg(long)]
    recombinant_per_epoch: Option<usize>,
    /// Global gradient-norm cap; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    grad_clip: f64,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> anyhow::Result<TrainConfig> {
        if self.grad_clip < 0.0 || !self.grad_clip.is_finite() {
            bail!("--grad-clip must be a non-negative number");
        }
        let cfg = TrainConfig {
            epochs: self.epochs,
            initial_lr: self.lr,
            recombinant_per_epoch: self.recombinant_per_epoch,
            seed,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Grammar to draw fresh recombinant examples from each epoch.
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    schedule: TrainFlags,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch metrics CSV; defaults to `<out>.metrics.csv`.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Exact,
    Denotation,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
    mode: ModeArg,
    /// Artificial world used as executor in denotation mode.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args, Serialize)]
struct GenWorldArgs {
    #[arg(long, default_value_t = 20)]
    entities: usize,
    #[arg(long, default_value_t = 40)]
    relations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `bare` (copyable entities) or `prefixed` (`_ent:NN`).
    #[arg(long, default_value_t = EntityStyle::Bare)]
    #[serde(serialize_with = "display")]
    style: EntityStyle,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    /// H=50, d=25.
    Reduced,
    /// H=200, d=100.
    Full,
}

#[derive(Args, Serialize)]
struct ExperimentArgs {
    #[arg(long, value_enum, default_value_t = Preset::Reduced)]
    preset: Preset,
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    no_copy: bool,
    /// Per-run CSV.
    #[arg(long)]
    out: PathBuf,
    /// Mean-over-seeds table for plotting.
    #[arg(long)]
    aggregate: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CopyAblationArgs {
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    relations: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Bad input (exit 1) versus failure while running (exit 2).
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Stage<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Induce(a) => cmd_induce(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Artificial(ArtificialCommand::GenWorld(a)) => cmd_gen_world(a),
        Command::Artificial(ArtificialCommand::GenData(a)) => cmd_gen_data(a),
        Command::Artificial(ArtificialCommand::Experiment(a)) => cmd_experiment(a),
        Command::Artificial(ArtificialCommand::CopyAblation(a)) => cmd_copy_ablation(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn check_output(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("output directory {} does not exist", dir.display())
        }
        _ => Ok(()),
    }
}

fn check_outputs(paths: &[&Path]) -> Result<(), Failure> {
    for p in paths {
        check_output(p).invalid()?;
    }
    Ok(())
}

fn load_train(path: &Path) -> anyhow::Result<Dataset> {
    let ds = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    if ds.is_empty() {
        bail!("{} has no examples", path.display());
    }
    Ok(ds)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn cmd_induce(a: &InduceArgs) -> Result<(), Failure> {
    let steps = a.strategies.iter().map(|s| s.parse::<Strategy>()).collect::<Result<Vec<_>, _>>().invalid()?;
    if steps.is_empty() {
        return Err(Failure::Invalid(anyhow!("--strategies needs at least one strategy")));
    }
    let config = match &a.config {
        Some(p) => DomainConfig::load(p).with_context(|| format!("loading {}", p.display())).invalid()?,
        None => DomainConfig::empty(),
    };
    for s in &steps {
        s.validate(&config).invalid()?;
    }
    let ds = load_train(&a.train).invalid()?;
    check_outputs(&[&a.out])?;

    let mut manifest = ManifestBuilder::new("induce", a, None).runtime()?;
    manifest.input(&a.train).runtime()?;
    if let Some(p) = &a.config {
        manifest.input(p).runtime()?;
    }

    let mut g = init_grammar(&ds).runtime()?;
    report_stage("init", &g, None);
    for s in &steps {
        let next = s.apply(&g, &config).runtime()?;
        report_stage(&s.to_string(), &next, Some(&g));
        g = next;
    }
    g.save(&a.out).runtime()?;
    manifest.finish(&a.out, &[&a.out]).runtime()?;
    Ok(())
}

fn report_stage(name: &str, g: &Grammar, prev: Option<&Grammar>) {
    let by_lhs: Vec<String> = g.count_by_lhs().iter().map(|(k, v)| format!("{k} {v}")).collect();
    match prev {
        Some(prev) => {
            let old = prev.rule_set();
            let new = g.rules().iter().filter(|r| !old.contains(r)).count();
            println!("{name}: {} rules ({}), {new} new", g.len(), by_lhs.join(", "));
        }
        None => println!("{name}: {} rules ({})", g.len(), by_lhs.join(", ")),
    }
}

fn cmd_sample(a: &SampleArgs) -> Result<(), Failure> {
    let g = Grammar::load(&a.grammar).with_context(|| format!("loading {}", a.grammar.display())).invalid()?;
    g.check_productive().invalid()?;
    check_outputs(&[&a.out])?;
    let mut manifest = ManifestBuilder::new("sample", a, Some(a.seed)).runtime()?;
    manifest.input(&a.grammar).runtime()?;

    let mut rng = substream(a.seed, GRAMMAR_SAMPLING);
    let examples = (0..a.count).map(|_| sample_example(&g, &mut rng)).collect::<Result<Vec<_>, _>>().runtime()?;
    write_examples(&a.out, &examples).runtime()?;
    manifest.finish(&a.out, &[&a.out]).runtime()?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let model_cfg = a.model.config().invalid()?;
    let train_cfg = a.schedule.config(a.seed).invalid()?;
    let ds = load_train(&a.train).invalid()?;
    let grammar = match &a.grammar {
        Some(p) => {
            let g = Grammar::load(p).with_context(|| format!("loading {}", p.display())).invalid()?;
            g.check_productive().invalid()?;
            Some(g)
        }
        None => None,
    };
    let metrics_path = a.metrics.clone().unwrap_or_else(|| {
        let mut name = a.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".metrics.csv");
        a.out.with_file_name(name)
    });
    check_outputs(&[&a.out, &metrics_path])?;

    let mut manifest = ManifestBuilder::new("train", a, Some(a.seed)).runtime()?;
    manifest.input(&a.train).runtime()?;
    if let Some(p) = &a.grammar {
        manifest.input(p).runtime()?;
    }

    let mut model = init_model_with_grammar(model_cfg, &ds, grammar.as_ref(), a.seed);
    let metrics = train_with(&mut model, &ds, grammar.as_ref(), &train_cfg, |m, _| {
        println!("epoch {:>3}  lr {:.5}  mean loglik {:.4}  {:.1}s", m.epoch, m.lr, m.mean_train_loglik, m.seconds);
        Ok(())
    })
    .runtime()?;
    save_checkpoint(&model, &a.out).runtime()?;
    write_metrics_csv(&metrics, create(&metrics_path).runtime()?).runtime()?;
    manifest.finish(&a.out, &[&a.out, &metrics_path]).runtime()?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    if a.beam == 0 {
        return Err(Failure::Invalid(anyhow!("--beam must be at least 1")));
    }
    let world = match (&a.world, a.mode) {
        (Some(p), _) => Some(World::load(p).with_context(|| format!("loading {}", p.display())).invalid()?),
        (None, ModeArg::Denotation) => {
            return Err(Failure::Invalid(anyhow!("denotation mode needs --world")));
        }
        (None, ModeArg::Exact) => None,
    };
    let model =
        load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display())).invalid()?;
    let test = load_dataset(&a.test).with_context(|| format!("loading {}", a.test.display())).invalid()?;
    check_outputs(&[&a.report])?;

    let mut manifest = ManifestBuilder::new("eval", a, None).runtime()?;
    manifest.input(&a.checkpoint).runtime()?;
    manifest.input(&a.test).runtime()?;
    if let Some(p) = &a.world {
        manifest.input(p).runtime()?;
    }

    let report: EvalReport = match (a.mode, &world) {
        (ModeArg::Exact, _) => evaluate::<NoExecutor>(&model, &test.examples, a.beam, EvalMode::Exact, None),
        (ModeArg::Denotation, w) => evaluate(&model, &test.examples, a.beam, EvalMode::Denotation, w.as_ref()),
    }
    .runtime()?;
    println!("accuracy {:.4} ({}/{})", report.accuracy, report.correct(), report.records.len());
    write_report_csv(&report, create(&a.report).runtime()?).runtime()?;
    manifest.finish(&a.report, &[&a.report]).runtime()?;
    Ok(())
}

fn cmd_gen_world(a: &GenWorldArgs) -> Result<(), Failure> {
    if a.entities == 0 || a.relations == 0 {
        return Err(Failure::Invalid(anyhow!("--entities and --relations must be positive")));
    }
    check_outputs(&[&a.out])?;
    let manifest = ManifestBuilder::new("artificial gen-world", a, Some(a.seed)).runtime()?;
    let world = generate_world(a.entities, a.relations, &mut substream(a.seed, WORLD_GEN)).runtime()?;
    fs::write(&a.out, world.to_json()).runtime()?;
    manifest.finish(&a.out, &[&a.out]).runtime()?;
    Ok(())
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<(), Failure> {
    if a.depth == 0 {
        return Err(Failure::Invalid(anyhow!("--depth must be at least 1")));
    }
    let world = World::load(&a.world).with_context(|| format!("loading {}", a.world.display())).invalid()?;
    check_outputs(&[&a.out])?;
    let mut manifest = ManifestBuilder::new("artificial gen-data", a, Some(a.seed)).runtime()?;
    manifest.input(&a.world).runtime()?;
    // Too few distinct examples is a property of the request, so it is reported before writing.
    let examples = generate_examples(&world, a.depth, a.count, a.style, &mut substream(a.seed, DATA_GEN)).invalid()?;
    write_examples(&a.out, &examples).runtime()?;
    manifest.finish(&a.out, &[&a.out]).runtime()?;
    Ok(())
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<(), Failure> {
    let mut cfg = match a.preset {
        Preset::Reduced => ExperimentConfig::reduced(),
        Preset::Full => ExperimentConfig::default(),
    };
    if let Some(c) = &a.counts {
        cfg.counts = c.clone();
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.beam {
        cfg.beam = b;
    }
    cfg.model.copy = !a.no_copy;
    cfg.validate().invalid()?;
    let mut outs: Vec<&Path> = vec![&a.out];
    if let Some(p) = &a.aggregate {
        outs.push(p);
    }
    check_outputs(&outs)?;

    let manifest = ManifestBuilder::new("artificial experiment", &(a, &cfg), None).runtime()?;
    let rows = run_longer_examples_experiment(&cfg, |r| {
        println!(
            "seed {} {:<26} +{:<4} exact {:.4} denotation {:.4}",
            r.seed,
            r.condition.name(),
            r.added,
            r.exact_acc,
            r.denotation_acc
        );
    })
    .runtime()?;
    write_experiment_csv(&rows, create(&a.out).runtime()?).runtime()?;
    if let Some(p) = &a.aggregate {
        write_aggregate_table(&aggregate(&rows), create(p).runtime()?).runtime()?;
    }
    manifest.finish(&a.out, &outs).runtime()?;
    Ok(())
}

fn cmd_copy_ablation(a: &CopyAblationArgs) -> Result<(), Failure> {
    let mut cfg = CopyAblationConfig::default();
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(n) = a.entities {
        cfg.num_entities = n;
    }
    if let Some(n) = a.relations {
        cfg.num_relations = n;
    }
    if let Some(n) = a.train_size {
        cfg.train_size = n;
    }
    if let Some(n) = a.test_size {
        cfg.test_size = n;
    }
    if let Some(n) = a.epochs {
        cfg.train.epochs = n;
    }
    if let Some(n) = a.hidden {
        cfg.model.hidden = n;
    }
    if let Some(n) = a.embed {
        cfg.model.embed_dim = n;
    }
    if let Some(n) = a.beam {
        cfg.beam = n;
    }
    if cfg.seeds.is_empty() || cfg.train_size == 0 || cfg.test_size == 0 || cfg.beam == 0 {
        return Err(Failure::Invalid(anyhow!("copy ablation needs seeds, data and a beam")));
    }
    if cfg.num_entities == 0 || cfg.num_relations == 0 || cfg.model.hidden == 0 || cfg.model.embed_dim == 0 {
        return Err(Failure::Invalid(anyhow!("sizes must be positive")));
    }
    cfg.train.validate().invalid()?;
    check_outputs(&[&a.out])?;

    let manifest = ManifestBuilder::new("artificial copy-ablation", &(a, &cfg), None).runtime()?;
    let rows = run_copy_ablation(&cfg, |r| {
        println!("seed {} copy {:<5} exact {:.4} denotation {:.4}", r.seed, r.copy, r.exact_acc, r.denotation_acc);
    })
    .runtime()?;
    write_copy_ablation_csv(&rows, create(&a.out).runtime()?).runtime()?;
    manifest.finish(&a.out, &[&a.out]).runtime()?;
    Ok(())
}
