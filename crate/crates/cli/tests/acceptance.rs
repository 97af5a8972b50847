//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the report always reaches the console.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recomb::artificial::{
    run_copy_ablation, run_longer_examples_experiment, Condition, CopyAblationConfig, ExperimentConfig, SeedData, World,
};
use recomb::corpus::{Dataset, DomainConfig};
use recomb::decoding::{beam_search, evaluate, EvalMode};
use recomb::neural::{action_distribution, encode, token_log_prob};
use recomb::scfg::{abs_entities, abs_whole_phrases, concat_k, init_grammar, sample_example, Grammar, Rule};
use recomb::training::{init_model, train, TrainConfig};
use support::*;

struct Outcome {
    pass: bool,
    detail: String,
}

/// Runs one criterion, turning a panic into a failure.
fn run(id: usize, name: &str, f: fn() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Outcome { pass: false, detail: "panicked".into() });
    println!(
        "[{}] criterion {id}: {name} ({}; {:.1}s)",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        start.elapsed().as_secs_f64()
    );
    outcome.pass
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: (f64, String) = (0.0, String::new());
    let models = 24;
    for _ in 0..models {
        let model = tiny_model(2, 3, 0.5, &mut rng);
        assert!(model.output_vocab.len() <= 4);
        let x = random_utterance(3, &mut rng);
        let y = random_logical_form(&x, 3, &mut rng);
        let r = gradient_check(&model, &x, &y, 1e-3, 1e-8);
        if r.0 >= worst.0 {
            worst = r;
        }
    }
    Outcome { pass: worst.0 < 1e-4, detail: format!("{models} models, max rel err {:.2e} at {}", worst.0, worst.1) }
}

fn marginalization_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..1000 {
        let model = tiny_model(2, 3, 1.0, &mut rng);
        let x = random_utterance(4, &mut rng);
        let input = model.prepare_input(&x);
        let enc = encode(&model.params, &input.ids).unwrap();
        let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dist = action_distribution(&model.params, &s, &enc, &input.copy_mask).unwrap();
        let (pw, pc) = naive_actions(&model.params, &s, &enc, &input.copy_mask);
        let y = random_logical_form(&x, 1, &mut rng);
        let want = brute_force_token_prob(&pw, &pc, &model.output_vocab, &x, &y[0]).ln();
        let got = token_log_prob(&dist, &model.output_vocab, &y[0], &input.surface).unwrap();
        worst = worst.max((got - want).abs());
        checked += 1;
    }
    Outcome { pass: worst < 1e-12, detail: format!("{checked} instances, max abs err {worst:.2e}") }
}

fn geo_grammar() -> (Grammar, DomainConfig) {
    let ds = Dataset::parse(GEO_EXAMPLES).unwrap();
    let cfg = DomainConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/geo.toml")).unwrap();
    (init_grammar(&ds).unwrap(), cfg)
}

fn rules(lines: &[&str]) -> BTreeSet<Rule> {
    lines.iter().map(|l| Rule::parse(l).unwrap()).collect()
}

fn created(before: &Grammar, after: &Grammar) -> BTreeSet<Rule> {
    after.rule_set().difference(&before.rule_set()).cloned().collect()
}

fn grammar_golden() -> Outcome {
    let (g, cfg) = geo_grammar();
    let ae = rules(&[
        "Root -> what states border @StateId:1 ? ||| answer ( NV , ( state ( V0 ) , next_to ( V0 , NV ) , const ( V0 , stateid ( @StateId:1 ) ) ) )",
        "StateId -> texas ||| texas",
        "Root -> what is the highest mountain in @StateId:1 ? ||| answer ( NV , highest ( V0 , ( mountain ( V0 ) , loc ( V0 , NV ) , const ( V0 , stateid ( @StateId:1 ) ) ) ) )",
        "StateId -> ohio ||| ohio",
    ]);
    let awp = rules(&[
        "Root -> what states border @State:1 ? ||| answer ( NV , ( state ( V0 ) , next_to ( V0 , NV ) , @State:1 ) )",
        "State -> states border texas ||| state ( V0 ) , next_to ( V0 , NV ) , const ( V0 , stateid ( texas ) )",
        "Root -> what is the highest mountain in @State:1 ? ||| answer ( NV , highest ( V0 , ( mountain ( V0 ) , loc ( V0 , NV ) , @State:1 ) ) )",
    ]);
    let c2 = rules(&[
        "Root -> @Sent:1 </s> @Sent:2 ||| @Sent:1 </s> @Sent:2",
        "Sent -> what states border texas ? ||| answer ( NV , ( state ( V0 ) , next_to ( V0 , NV ) , const ( V0 , stateid ( texas ) ) ) )",
        "Sent -> what is the highest mountain in ohio ? ||| answer ( NV , highest ( V0 , ( mountain ( V0 ) , loc ( V0 , NV ) , const ( V0 , stateid ( ohio ) ) ) ) )",
    ]);
    let ae_ok = created(&g, &abs_entities(&g, &cfg)) == ae;
    let awp_ok = created(&g, &abs_whole_phrases(&g, &cfg)) == awp;
    let c2_ok = concat_k(&g, 2).unwrap().rule_set() == c2;
    Outcome { pass: ae_ok && awp_ok && c2_ok, detail: format!("AE {ae_ok}, AWP {awp_ok}, C2 {c2_ok}") }
}

fn sampling_distribution() -> Outcome {
    let (g, cfg) = geo_grammar();
    let g = abs_entities(&g, &cfg);
    let target = (
        toks("what states border ohio ?"),
        toks("answer ( NV , ( state ( V0 ) , next_to ( V0 , NV ) , const ( V0 , stateid ( ohio ) ) ) )"),
    );
    let p = derivation_distribution(&g)[&target];
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hits = (0..n)
        .filter(|_| {
            let ex = sample_example(&g, &mut rng).unwrap();
            (ex.utterance, ex.logical_form) == target
        })
        .count() as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let z = (hits - n as f64 * p) / sigma;
    Outcome {
        pass: z.abs() < 5.0 && (p - 0.125).abs() < 1e-15,
        detail: format!("enumerated p = {p}, observed {hits}/{n}, z = {z:.2}"),
    }
}

fn overfit() -> Outcome {
    let cfg = ExperimentConfig { counts: vec![0], ..ExperimentConfig::default() };
    let data = SeedData::build(&cfg, 0).unwrap();
    let ds = Dataset::new(data.seed_set.clone()).unwrap();
    let train_cfg = TrainConfig::default();
    let mut model = init_model(cfg.model.clone(), &ds, train_cfg.seed);
    train(&mut model, &ds, None, &train_cfg).unwrap();
    let report = evaluate(&model, &data.seed_set, 5, EvalMode::Exact, None::<&World>).unwrap();
    Outcome {
        pass: report.accuracy == 1.0,
        detail: format!(
            "H={} d={} epochs={}, train exact match {}/{}",
            cfg.model.hidden,
            cfg.model.embed_dim,
            train_cfg.epochs,
            report.correct(),
            report.records.len()
        ),
    }
}

fn artificial_orderings() -> Outcome {
    let cfg = ExperimentConfig { counts: vec![0, 300], ..ExperimentConfig::reduced() };
    let rows = run_longer_examples_experiment(&cfg, |_| {}).unwrap();
    let mean = |c: Condition, added: usize| {
        let v: Vec<f64> = rows.iter().filter(|r| r.condition == c && r.added == added).map(|r| r.exact_acc).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let base = mean(Condition::SameIndependent, 0);
    let m: BTreeMap<Condition, f64> = Condition::ALL.into_iter().map(|c| (c, mean(c, 300))).collect();
    let tol = 0.01;
    let (si, li, sr, lr) = (
        m[&Condition::SameIndependent],
        m[&Condition::LongerIndependent],
        m[&Condition::SameRecombinant],
        m[&Condition::LongerRecombinant],
    );
    let a = m.values().all(|&v| v > base);
    let b = li >= lr - tol && si >= sr - tol;
    let c = lr >= sr - tol && li >= si - tol;
    Outcome {
        pass: a && b && c,
        detail: format!(
            "{} seeds; baseline {base:.3}, same-indep {si:.3}, longer-indep {li:.3}, same-recomb {sr:.3}, longer-recomb {lr:.3}; (a) {a} (b) {b} (c) {c}",
            cfg.seeds.len()
        ),
    }
}

fn beam_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut agree = 0;
    let trials = 100;
    for trial in 0..trials {
        let model = tiny_model(2, 3, 2.0, &mut rng);
        let x = random_utterance(3, &mut rng);
        let max_len = 1 + trial % 2;
        let all = enumerate_outputs(&model, &x, max_len);
        let best = all.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        let beam = beam_search(&model, &x, all.len(), max_len).unwrap();
        if beam[0].tokens == best.0 && beam[0].ended_with_eos == best.1 && (beam[0].score - best.2).abs() < 1e-10 {
            agree += 1;
        }
    }
    Outcome { pass: agree == trials, detail: format!("{agree}/{trials} models agree with exhaustive argmax") }
}

fn cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_recomb")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// The metrics CSV with its wall-clock column removed.
fn mask_seconds(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

fn pipeline(dir: &Path) {
    let s = ["--seed", "3"];
    cli(
        dir,
        &[&["artificial", "gen-world", "--entities", "10", "--relations", "4", "--out", "world.json"][..], &s].concat(),
    );
    cli(
        dir,
        &[&["artificial", "gen-data", "--world", "world.json", "--count", "30", "--out", "train.tsv"][..], &s].concat(),
    );
    cli(
        dir,
        &[
            &["artificial", "gen-data", "--world", "world.json", "--count", "20", "--depth", "3", "--out", "test.tsv"]
                [..],
            &s,
        ]
        .concat(),
    );
    fs::write(dir.join("domain.toml"), recomb::artificial::domain_config(Default::default()).to_toml()).unwrap();
    cli(
        dir,
        &[
            "induce",
            "--train",
            "train.tsv",
            "--config",
            "domain.toml",
            "--strategies",
            "abs-whole-phrases,abs-entities",
            "--out",
            "g.txt",
        ],
    );
    cli(dir, &[&["sample", "--grammar", "g.txt", "--count", "40", "--out", "samples.tsv"][..], &s].concat());
    cli(
        dir,
        &[
            &["train", "--train", "train.tsv", "--grammar", "g.txt", "--epochs", "3", "--hidden", "12", "--embed", "6"]
                [..],
            &["--out", "model.ckpt", "--metrics", "metrics.csv"],
            &s,
        ]
        .concat(),
    );
    cli(
        dir,
        &[
            "eval",
            "--checkpoint",
            "model.ckpt",
            "--test",
            "test.tsv",
            "--mode",
            "denotation",
            "--world",
            "world.json",
            "--report",
            "report.csv",
        ],
    );
    cli(
        dir,
        &[
            "artificial",
            "experiment",
            "--counts",
            "0,10",
            "--seeds",
            "1",
            "--epochs",
            "1",
            "--out",
            "exp.csv",
            "--aggregate",
            "exp.dat",
        ],
    );
    cli(
        dir,
        &[
            "artificial",
            "copy-ablation",
            "--seeds",
            "2",
            "--entities",
            "12",
            "--relations",
            "3",
            "--train-size",
            "10",
            "--test-size",
            "5",
            "--epochs",
            "1",
            "--hidden",
            "8",
            "--embed",
            "4",
            "--out",
            "copy.csv",
        ],
    );
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let files = [
        "world.json",
        "train.tsv",
        "test.tsv",
        "g.txt",
        "samples.tsv",
        "model.ckpt",
        "report.csv",
        "exp.csv",
        "exp.dat",
        "copy.csv",
    ];
    let mut differ: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(a.path().join(f)).unwrap() != fs::read(b.path().join(f)).unwrap())
        .collect();
    let ma = mask_seconds(&fs::read_to_string(a.path().join("metrics.csv")).unwrap());
    let mb = mask_seconds(&fs::read_to_string(b.path().join("metrics.csv")).unwrap());
    if ma != mb {
        differ.push("metrics.csv");
    }
    Outcome {
        pass: differ.is_empty(),
        detail: if differ.is_empty() {
            format!("{} artifacts byte-identical (metrics seconds column masked)", files.len() + 1)
        } else {
            format!("differ: {differ:?}")
        },
    }
}

fn copy_ablation() -> Outcome {
    let cfg = CopyAblationConfig::default();
    let rows = run_copy_ablation(&cfg, |_| {}).unwrap();
    let mean = |c: bool| {
        let v: Vec<f64> = rows.iter().filter(|r| r.copy == c).map(|r| r.exact_acc).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (with, without) = (mean(true), mean(false));
    Outcome {
        pass: with >= without,
        detail: format!(
            "{} seeds, {} entities: copy {with:.3} vs no-copy {without:.3}",
            cfg.seeds.len(),
            cfg.num_entities
        ),
    }
}

type Criterion = (usize, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    (1, "gradient oracle", gradient_oracle),
    (2, "marginalization oracle", marginalization_oracle),
    (3, "grammar golden test", grammar_golden),
    (4, "sampling distribution", sampling_distribution),
    (5, "overfit sanity", overfit),
    (6, "artificial experiment orderings (reduced preset)", artificial_orderings),
    (7, "beam search oracle", beam_oracle),
    (8, "CLI determinism", determinism),
    (9, "copy ablation direction", copy_ablation),
];

/// Free arguments select criteria whose name contains them; flags passed
/// through by `cargo test` are ignored.
fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let selected: Vec<_> = CRITERIA
        .iter()
        .filter(|(_, name, _)| args.is_empty() || args.iter().any(|a| name.contains(a.as_str())))
        .collect();
    let mut failed = Vec::new();
    for &&(id, name, f) in &selected {
        if !run(id, name, f) {
            failed.push(id);
        }
    }
    println!("{}/{} criteria passed", selected.len() - failed.len(), selected.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
