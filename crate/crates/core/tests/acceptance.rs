//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails. Tolerances are fixed here, not tuned.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use common::oracles::{brute_force_auc, max_relative_gradient_error, Setup};
use common::MockServer;
use gallon::chemgraph::ScaffoldKey;
use gallon::datasets::{load_csv, scaffold_keys, scaffold_split, MoleculeDataset, SplitMode, SplitRatios, TaskKind, TaskSpec};
use gallon::distillation::losses::probabilities;
use gallon::distillation::{
    label_distill_loss, perfect_teacher_logits, pred_loss, total_loss, train_gnn_teacher, train_plain_mlp, train_student,
    DistillConfig, TeacherArtifacts, TrainConfig, TrainOutcome,
};
use gallon::evaluation::{bench_inference, rocauc, MetricError};
use gallon::models::{mlp_forward, NetConfig, PreparedGraphs};
use gallon::teacherlm::{
    build_prompt, embedding_input, hashed_trigram_embedding, ClientConfig, LlmClient, ModalityFlags, ResponseCache,
};
use gallon::tensorcore::rng::seeded;
use gallon::tensorcore::{Tape, Tensor};
use rand::Rng as _;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const GCN_TARGET: f64 = 73.47;
const MLP_TARGET: f64 = 73.11;
const REPRO_TOLERANCE: f64 = 5.0;
const MAX_SECONDS_PER_SEED: f64 = 300.0;
/// Distillation weights for the trend check, chosen on seeds disjoint from
/// `SEEDS`.
const TREND_ALPHA: f64 = 0.5;
const TREND_BETA: f64 = 0.0;
const PERFECT_MARGIN: f64 = 20.0;
const BENCH_REPEATS: usize = 100;

/// Training budget chosen on BACE validation ROCAUC.
fn bace_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 200,
        lr: 3e-3,
        patience: 50,
        seed,
        ..TrainConfig::default()
    }
}

struct Verdicts(BTreeMap<usize, bool>);

impl Verdicts {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.0.insert(n, pass);
    }
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// The bundled ClinTox copy carries only the CT_TOX label.
fn load(preset: &str) -> MoleculeDataset {
    let mut task = TaskSpec::preset(preset).unwrap();
    if preset == "clintox" {
        task.label_columns = vec!["CT_TOX".into()];
    }
    load_csv(data_dir().join(&task.file_name), &task).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

struct SeedRun {
    gcn: TrainOutcome,
    gcn_secs: f64,
    gnn_artifacts: TeacherArtifacts,
    mlp: TrainOutcome,
}

/// Largest scaffold group among `indices`.
fn largest_group(keys: &[ScaffoldKey], indices: &[usize]) -> usize {
    let mut counts: BTreeMap<&ScaffoldKey, usize> = BTreeMap::new();
    for &i in indices {
        *counts.entry(&keys[i]).or_default() += 1;
    }
    counts.values().copied().max().unwrap_or(0)
}

fn split_fidelity(v: &mut Verdicts) {
    let expected = [
        ("bace", 1513),
        ("bbbp", 2050),
        ("clintox", 1484),
        ("hiv", 41127),
        ("esol", 1128),
        ("freesolv", 642),
        ("lipo", 4200),
    ];
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (name, count) in expected {
        let ds = load(name);
        let n = ds.len();
        if (n as f64 - count as f64).abs() > 0.01 * count as f64 {
            failures.push(format!("{name}: {n} molecules, expected {count} ± 1%"));
        }
        let split = scaffold_split(&ds, SplitRatios::default(), SplitMode::Scaffold, 0).unwrap();
        if split != scaffold_split(&ds, SplitRatios::default(), SplitMode::Scaffold, 0).unwrap() {
            failures.push(format!("{name}: split not deterministic"));
        }
        let keys = scaffold_keys(&ds);
        let sets: Vec<HashSet<&ScaffoldKey>> =
            [&split.train, &split.valid, &split.test].iter().map(|p| p.iter().map(|&i| &keys[i]).collect()).collect();
        if !sets[0].is_disjoint(&sets[1]) || !sets[0].is_disjoint(&sets[2]) || !sets[1].is_disjoint(&sets[2]) {
            failures.push(format!("{name}: a scaffold spans two partitions"));
        }
        let mut all: Vec<usize> = split.train.iter().chain(&split.valid).chain(&split.test).copied().collect();
        all.sort_unstable();
        if all != (0..n).collect::<Vec<_>>() {
            failures.push(format!("{name}: partitions do not cover every molecule once"));
        }
        let nf = n as f64;
        let (tr, va) = (split.train.len() as f64, split.valid.len() as f64);
        let slack_train = largest_group(&keys, &split.train) as f64;
        let slack_valid = slack_train.max(largest_group(&keys, &split.valid) as f64);
        if (tr - 0.8 * nf).abs() > slack_train || (tr + va - 0.9 * nf).abs() > slack_valid {
            failures.push(format!("{name}: {} / {} / {} is not 80/10/10 within one scaffold group", split.train.len(), split.valid.len(), split.test.len()));
        }
        summary.push(format!("{name} {n}"));
    }
    let detail = if failures.is_empty() {
        format!("split fidelity on 7 datasets ({})", summary.join(", "))
    } else {
        failures.join("; ")
    };
    v.record(5, failures.is_empty(), detail);
}

fn metric_oracle(v: &mut Verdicts) {
    let mut rng = seeded(7);
    let mut checked = 0;
    let mut mismatches = 0;
    while checked < 1000 {
        let len = rng.random_range(2..150);
        let levels = rng.random_range(1..25);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64 / 3.0).collect();
        let labels: Vec<f64> = (0..len).map(|_| rng.random_range(0..2) as f64).collect();
        match rocauc(&scores, &labels) {
            Ok(auc) => {
                mismatches += (auc != brute_force_auc(&scores, &labels)) as usize;
                checked += 1;
            }
            Err(MetricError::UndefinedAuc { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }
    let example = rocauc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap();
    v.record(
        6,
        mismatches == 0 && example == 0.75,
        format!("rocauc vs pairwise count: {mismatches} mismatches in 1000; worked example {example}"),
    );
}

fn gradient_suite(v: &mut Verdicts) {
    let mut rng = seeded(2718);
    let worst = (0..20)
        .map(|_| {
            let s = Setup::random(&mut rng);
            max_relative_gradient_error(&s, 12, &mut rng)
        })
        .fold(0.0, f64::max);
    v.record(7, worst < 1e-4, format!("combined objective vs central differences: worst relative error {worst:.2e} (limit 1e-4)"));
}

fn llm_path(v: &mut Verdicts) {
    let server = MockServer::start(vec![]);
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::new(dir.path().join("cache"));
    let ds = load("bace");
    let mols = &ds.molecules[..5];
    let prompts: Vec<_> = mols.iter().map(|m| build_prompt(m, &ds.task, ModalityFlags::default()).unwrap()).collect();
    let client = |offline| {
        LlmClient::new(ClientConfig {
            endpoint: server.url.clone(),
            api_key_env: "GALLON_TEST_UNSET_KEY".into(),
            offline,
            ..ClientConfig::default()
        })
    };
    let texts = |c: &LlmClient| -> Vec<String> {
        c.query_all(&prompts, &cache)
            .into_iter()
            .zip(mols)
            .map(|(r, m)| embedding_input(&r.unwrap().text, &m.smiles))
            .collect()
    };
    let cold = client(false);
    let first = texts(&cold);
    let cold_calls = cold.network_calls();
    let warm = client(true);
    let second = texts(&warm);
    let same_vectors = first.iter().zip(&second).all(|(a, b)| hashed_trigram_embedding(a) == hashed_trigram_embedding(b));
    let distinct_arms = mols.iter().all(|m| {
        let digests: HashSet<String> = ModalityFlags::ALL
            .iter()
            .map(|&f| build_prompt(m, &ds.task, f).unwrap().digest(&ds.task.llm_model))
            .collect();
        digests.len() == 4
    });
    let pass = cold_calls == 5 && warm.network_calls() == 0 && server.hits() == 5 && first == second && same_vectors && distinct_arms;
    v.record(
        9,
        pass,
        format!(
            "cold run {cold_calls} calls, warm run {} calls, identical text inputs: {}, 4 distinct digests per molecule: {distinct_arms}",
            warm.network_calls(),
            first == second && same_vectors
        ),
    );
}

fn loss_identities(v: &mut Verdicts) {
    let mut rng = seeded(31);
    let mut self_kl: f64 = 0.0;
    for _ in 0..100 {
        let g = rng.random_range(1..8);
        let z = Tensor {
            shape: [g, 2],
            data: (0..2 * g).map(|_| rng.random_range(-6.0..6.0)).collect(),
        };
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone()).unwrap();
        let kl = tape.bernoulli_kl(zv, Arc::new(probabilities(&z)), None).unwrap();
        self_kl = self_kl.max(tape.value(kl).item().abs());
    }
    let mut tape = Tape::new();
    let half = tape.constant(Tensor::scalar(0.0)).unwrap();
    let kl = tape.bernoulli_kl(half, Arc::new(Tensor::scalar(0.75)), None).unwrap();
    let kl_val = tape.value(kl).item();
    let closed_form = 0.75 * (0.75f64 / 0.5).ln() + 0.25 * (0.25f64 / 0.5).ln();

    let mut worst_sum: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let mut s = Setup::random(&mut rng);
        if s.kind != TaskKind::Classification {
            continue;
        }
        s.config.mode = None;
        let mut tape = Tape::new();
        let vars = s.params.register(&mut tape).unwrap();
        let out = mlp_forward(&mut tape, &s.batch, &vars).unwrap();
        let parts = total_loss(&mut tape, out, &s.batch, &s.teachers, None, &s.config, s.kind).unwrap();
        let l0 = pred_loss(&mut tape, out.y, s.batch.labels.clone(), s.batch.mask.clone(), s.kind).unwrap();
        let ld = label_distill_loss(&mut tape, out.y, &s.teachers, s.config.alpha, s.config.beta, s.kind).unwrap();
        let expected = tape.value(l0).item() + ld.map_or(0.0, |v| tape.value(v).item());
        let total = tape.value(parts.total).item();
        worst_sum = worst_sum.max((total - expected).abs() / expected.abs().max(1.0));
        done += 1;
    }
    let pass = self_kl <= 1e-12 && (kl_val - 0.1308).abs() < 1e-4 && (kl_val - closed_form).abs() < 1e-12 && worst_sum <= 4.0 * f64::EPSILON;
    v.record(
        10,
        pass,
        format!("max KL(p||p) {self_kl:.1e}; KL(0.75||0.5) = {kl_val:.6}; total vs sum of parts {worst_sum:.1e} relative"),
    );
}

#[test]
fn acceptance() {
    let mut v = Verdicts(BTreeMap::new());
    let ds = load("bace");
    let split = scaffold_split(&ds, SplitRatios::default(), SplitMode::Scaffold, 0).unwrap();
    let data = PreparedGraphs::from_dataset(&ds);
    let kind = ds.task.kind;

    let runs: Vec<SeedRun> = SEEDS
        .iter()
        .map(|&seed| {
            let train = bace_train(seed);
            let start = Instant::now();
            let (gcn, gnn_artifacts) = train_gnn_teacher(&data, &split, kind, &train).unwrap();
            let gcn_secs = start.elapsed().as_secs_f64();
            let mlp = train_plain_mlp(&data, &split, kind, &train).unwrap();
            SeedRun {
                gcn,
                gcn_secs,
                gnn_artifacts,
                mlp,
            }
        })
        .collect();

    let gcn_tests: Vec<f64> = runs.iter().map(|r| 100.0 * r.gcn.test_at_best.mean).collect();
    let gcn_mean = mean(&gcn_tests);
    let slowest = runs.iter().map(|r| r.gcn_secs).fold(0.0, f64::max);
    v.record(
        1,
        (gcn_mean - GCN_TARGET).abs() <= REPRO_TOLERANCE && slowest <= MAX_SECONDS_PER_SEED,
        format!(
            "GCN mean test ROCAUC {gcn_mean:.2} over seeds {gcn_tests:.2?} (target {GCN_TARGET} ± {REPRO_TOLERANCE}); slowest seed {slowest:.1} s (limit {MAX_SECONDS_PER_SEED} s)"
        ),
    );

    let mlp_tests: Vec<f64> = runs.iter().map(|r| 100.0 * r.mlp.test_at_best.mean).collect();
    let mlp_mean = mean(&mlp_tests);
    v.record(
        2,
        (mlp_mean - MLP_TARGET).abs() <= REPRO_TOLERANCE,
        format!("MLP mean test ROCAUC {mlp_mean:.2} over seeds {mlp_tests:.2?} (target {MLP_TARGET} ± {REPRO_TOLERANCE})"),
    );

    let perfect_lm = TeacherArtifacts {
        y_lm: Some(perfect_teacher_logits(&data, PERFECT_MARGIN)),
        ..TeacherArtifacts::default()
    };
    let trend = DistillConfig {
        alpha: TREND_ALPHA,
        beta: TREND_BETA,
        ..DistillConfig::default()
    };
    let mut students = Vec::new();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for (run, &seed) in runs.iter().zip(&SEEDS) {
        let teachers = perfect_lm.merged(&run.gnn_artifacts);
        let s = train_student(&data, &split, kind, &teachers, &trend, &bace_train(seed)).unwrap();
        wins += (s.best_val.mean >= run.mlp.best_val.mean) as usize;
        pairs.push(format!("{:.4}/{:.4}", s.best_val.mean, run.mlp.best_val.mean));
        students.push(s);
    }
    v.record(
        3,
        wins >= 4,
        format!(
            "distilled >= plain validation ROCAUC on {wins} of 5 seeds (need 4); distilled/plain {} with alpha {TREND_ALPHA}, beta {TREND_BETA}",
            pairs.join(", ")
        ),
    );

    let zero = DistillConfig {
        alpha: 0.0,
        beta: 0.0,
        ..DistillConfig::default()
    };
    let teachers = perfect_lm.merged(&runs[0].gnn_artifacts);
    let reduced = train_student(&data, &split, kind, &teachers, &zero, &bace_train(SEEDS[0])).unwrap();
    let identical = reduced.network.params == runs[0].mlp.network.params && reduced.history == runs[0].mlp.history;
    v.record(4, identical, format!("zero-weight student parameters bit-identical to plain MLP: {identical}"));

    split_fidelity(&mut v);
    metric_oracle(&mut v);
    gradient_suite(&mut v);

    let student_bench = bench_inference(&students[0].network, &data, BENCH_REPEATS).unwrap();
    let gcn_bench = bench_inference(&runs[0].gcn.network, &data, BENCH_REPEATS).unwrap();
    let cfg = NetConfig::new(data.feature_width(), ds.task.output_dim());
    let (f, h, l, o) = (cfg.in_dim, cfg.hidden, cfg.n_layers, cfg.out_dim);
    let closed_form = f * h + h + (l - 1) * (h * h + h) + h * o + o;
    let counts_ok = student_bench.n_params == closed_form && gcn_bench.n_params == closed_form;
    v.record(
        8,
        student_bench.mean_ms < gcn_bench.mean_ms && counts_ok,
        format!(
            "full-BACE inference over {BENCH_REPEATS} repeats: MLP {:.2} ms, GCN {:.2} ms; parameters {} / {} (closed form {closed_form})",
            student_bench.mean_ms, gcn_bench.mean_ms, student_bench.n_params, gcn_bench.n_params
        ),
    );

    llm_path(&mut v);
    loss_identities(&mut v);

    let failed: Vec<usize> = v.0.iter().filter(|(_, &p)| !p).map(|(&n, _)| n).collect();
    println!("acceptance: {} of {} criteria pass", v.0.len() - failed.len(), v.0.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
