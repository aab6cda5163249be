//! One function per subcommand. Each reads its declared inputs from the
//! output directory, writes `<out>/<stage>/` and a manifest there.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gallon::chemgraph::FEATURE_WIDTH;
use gallon::datasets::{dataset_stats, load_csv, scaffold_split, MoleculeDataset, SplitIndices, TaskKind};
use gallon::distillation::{grid_search, train_gnn_teacher, train_student, TeacherArtifacts, TrainOutcome};
use gallon::evaluation::{bench_inference, evaluate_split, plot_csv, Labels};
use gallon::models::{Architecture, NetConfig, Network, PreparedGraphs, StackParams};
use gallon::tensorcore::checkpoint;
use gallon::tensorcore::rng::derive_seed;
use gallon::tensorcore::Tensor;
use gallon::teacherlm::{
    build_prompt, stack, train_lm_head, EmbeddingProvider, LlmClient, Prompt, RemoteEmbeddingConfig, ResponseCache,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Config, EmbeddingKind};
use crate::error::CliError;
use crate::manifest::{file_digest, sha256_hex, write_bytes, write_json, Input, Stage, StageStatus};

pub struct Ctx {
    pub config: Config,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

#[derive(Serialize, Deserialize)]
struct PromptLine {
    index: usize,
    digest: String,
    text: String,
    has_image: bool,
}

#[derive(Serialize, Deserialize)]
struct ResponseLine {
    index: usize,
    digest: String,
    smiles: String,
    response: String,
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(other)?;
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data_err(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| data_err(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn outcome_json(o: &TrainOutcome) -> Value {
    json!({
        "best_epoch": o.best_epoch,
        "best_val": o.best_val,
        "test_at_best": o.test_at_best,
        "test_at_final": o.test_at_final,
        "n_params": o.network.n_params(),
        "history": o.history,
    })
}

impl Ctx {
    fn dir(&self, stage: &str) -> PathBuf {
        self.out_dir.join(stage)
    }

    fn artifact(&self, stage: &str, file: &str) -> PathBuf {
        self.dir(stage).join(file)
    }

    fn dataset_input(&self) -> Input {
        Input::external(
            "dataset",
            self.config.dataset_path(),
            "see data/README.md for where to download the CSV files",
        )
    }

    fn load_dataset(&self) -> Result<MoleculeDataset, CliError> {
        let ds = load_csv(self.config.dataset_path(), &self.config.task())?;
        if !ds.dropped.is_empty() {
            log::warn!("{}: dropped {} unparsable rows", ds.task.name, ds.dropped.len());
        }
        Ok(ds)
    }

    fn load_split(&self) -> Result<SplitIndices, CliError> {
        let path = self.artifact("split", "split.json");
        let text = std::fs::read_to_string(&path).map_err(|e| data_err(&path, e))?;
        SplitIndices::from_json(&text).map_err(|e| data_err(&path, e))
    }

    fn net_config(&self) -> NetConfig {
        NetConfig {
            in_dim: FEATURE_WIDTH,
            hidden: self.config.model.hidden,
            n_layers: self.config.model.layers,
            out_dim: self.config.task().output_dim(),
        }
    }

    fn load_network(&self, arch: Architecture, path: &Path) -> Result<Network, CliError> {
        let params = StackParams::load(path, self.net_config()).map_err(|e| data_err(path, e))?;
        Ok(Network { arch, params })
    }

    fn student_model_path(&self) -> (PathBuf, &'static str) {
        let stage = if self.config.distill.search { "grid" } else { "distill" };
        (self.artifact(stage, "model.gmx"), stage)
    }

    fn load_teachers(&self) -> Result<TeacherArtifacts, CliError> {
        let gnn = TeacherArtifacts::load(&self.artifact("train-gnn", "teacher.gmx"))?;
        let lm = TeacherArtifacts::load(&self.artifact("train-lm-head", "teacher.gmx"))?;
        Ok(lm.merged(&gnn))
    }

    fn stage(&self, name: &'static str, config: Value, inputs: Vec<Input>) -> Stage<'static> {
        Stage {
            name,
            dir: self.dir(name),
            config,
            seeds: BTreeMap::new(),
            inputs,
            extra_inputs: BTreeMap::new(),
        }
    }

    fn seeded(&self, name: &'static str, config: Value, inputs: Vec<Input>, seeds: &[(&str, u64)]) -> Stage<'static> {
        let mut s = self.stage(name, config, inputs);
        s.seeds = seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        s
    }

    fn split_input(&self) -> Input {
        Input::stage("split", self.artifact("split", "split.json"), "split")
    }

    fn prompts(&self, ds: &MoleculeDataset) -> Result<Vec<Prompt>, CliError> {
        let flags = self.config.flags();
        ds.molecules
            .iter()
            .map(|m| build_prompt(m, &ds.task, flags).map_err(|e| CliError::Other(format!("{}: {e}", m.smiles))))
            .collect()
    }

    /// Settings that change the prompts or the model answering them.
    fn llm_slice(&self) -> Value {
        let c = &self.config;
        json!({
            "task": c.task(),
            "model": c.client_config().model,
            "endpoint": c.llm.endpoint,
            "flags": c.flags(),
            "skip": c.llm.skip,
        })
    }
}

pub fn featurize(ctx: &Ctx) -> Result<StageStatus, CliError> {
    let config = json!({ "task": ctx.config.task() });
    ctx.stage("featurize", config, vec![ctx.dataset_input()]).run(|dir| {
        let ds = ctx.load_dataset()?;
        write_json(&dir.join("stats.json"), &json!({ "stats": dataset_stats(&ds), "dropped": ds.dropped }))
    })
}

pub fn split(ctx: &Ctx) -> Result<StageStatus, CliError> {
    let c = &ctx.config;
    let seed = derive_seed(c.seed, "split");
    let config = json!({ "task": c.task(), "split": c.split });
    ctx.seeded("split", config, vec![ctx.dataset_input()], &[("split", seed)]).run(|dir| {
        let ds = ctx.load_dataset()?;
        let s = scaffold_split(&ds, c.ratios(), c.split.mode, seed)?;
        log::info!("split: train {} valid {} test {}", s.train.len(), s.valid.len(), s.test.len());
        write_bytes(&dir.join("split.json"), s.to_json().as_bytes())
    })
}

pub fn prompt(ctx: &Ctx) -> Result<StageStatus, CliError> {
    ctx.stage("prompt", ctx.llm_slice(), vec![ctx.dataset_input()]).run(|dir| {
        let ds = ctx.load_dataset()?;
        let model = ctx.config.client_config().model;
        let lines: Vec<PromptLine> = ctx
            .prompts(&ds)?
            .iter()
            .enumerate()
            .map(|(index, p)| PromptLine {
                index,
                digest: p.digest(&model),
                text: p.text(),
                has_image: p.image.is_some(),
            })
            .collect();
        write_jsonl(&dir.join("prompts.jsonl"), &lines)
    })
}

/// Digest over the cache entries for `digests`, absent entries included.
fn cache_state(cache: &ResponseCache, digests: &[String]) -> String {
    let mut acc = Vec::new();
    for d in digests {
        acc.extend_from_slice(d.as_bytes());
        match file_digest(&cache.path(d)) {
            Ok(h) => acc.extend_from_slice(h.as_bytes()),
            Err(_) => acc.push(b'-'),
        }
    }
    sha256_hex(&acc)
}

pub fn query(ctx: &Ctx) -> Result<StageStatus, CliError> {
    let c = &ctx.config;
    let prompts_path = ctx.artifact("prompt", "prompts.jsonl");
    let cache = ResponseCache::new(&c.llm.cache_dir);
    let mut stage = ctx.stage(
        "query",
        ctx.llm_slice(),
        vec![ctx.dataset_input(), Input::stage("prompts", prompts_path.clone(), "prompt")],
    );
    if let Ok(lines) = read_jsonl::<PromptLine>(&prompts_path) {
        let digests: Vec<String> = lines.into_iter().map(|l| l.digest).collect();
        stage.extra_inputs.insert("cache_state".into(), cache_state(&cache, &digests));
    }
    stage.run(|dir| {
        let ds = ctx.load_dataset()?;
        let prompts = ctx.prompts(&ds)?;
        let client = LlmClient::new(c.client_config());
        let results = client.query_all(&prompts, &cache);
        let mut lines = Vec::with_capacity(results.len());
        let mut hits = 0;
        for (index, r) in results.into_iter().enumerate() {
            let r = r?;
            hits += r.cache_hit as usize;
            lines.push(ResponseLine {
                index,
                digest: r.prompt_digest,
                smiles: ds.molecules[index].smiles.clone(),
                response: r.text,
            });
        }
        log::info!("query: {} cache hits, {} network calls", hits, client.network_calls());
        write_jsonl(&dir.join("responses.jsonl"), &lines)
    })
}

pub fn embed(ctx: &Ctx) -> Result<StageStatus, CliError> {
    let c = &ctx.config;
    let t = &c.teachers;
    let responses_path = ctx.artifact("query", "responses.jsonl");
    let mut inputs = vec![ctx.dataset_input()];
    if !c.llm.skip {
        inputs.push(Input::stage("responses", responses_path.clone(), "query"));
    }
    if let (EmbeddingKind::File, Some(p)) = (&t.embedding, &t.embedding_file) {
        inputs.push(Input::external("embedding_file", p.clone(), "set teachers.embedding_file"));
    }
    let config = json!({
        "llm": ctx.llm_slice(),
        "embedding": t.embedding,
        "embedding_endpoint": t.embedding_endpoint,
        "embedding_model": t.embedding_model,
        "embedding_dim": t.embedding_dim,
    });
    ctx.stage("embed", config, inputs).run(|dir| {
        let ds = ctx.load_dataset()?;
        let responses: Vec<String> = if c.llm.skip {
            vec![String::new(); ds.len()]
        } else {
            let lines: Vec<ResponseLine> = read_jsonl(&responses_path)?;
            if lines.len() != ds.len() {
                return Err(data_err(
                    &responses_path,
                    format!("{} responses for {} molecules", lines.len(), ds.len()),
                ));
            }
            lines.into_iter().map(|l| l.response).collect()
        };
        let provider = match t.embedding {
            EmbeddingKind::Hashed => EmbeddingProvider::Hashed,
            EmbeddingKind::File => EmbeddingProvider::from_file(t.embedding_file.as_deref().expect("validated"))?,
            EmbeddingKind::Remote => EmbeddingProvider::remote(RemoteEmbeddingConfig {
                endpoint: t.embedding_endpoint.clone().expect("validated"),
                model: t.embedding_model.clone().unwrap_or_default(),
                api_key_env: c.llm.api_key_env.clone(),
                dim: t.embedding_dim,
                max_tries: c.llm.max_tries,
                timeout_secs: c.llm.timeout_secs,
            }),
        };
        let embeddings = ds
            .molecules
            .iter()
            .zip(&responses)
            .enumerate()
            .map(|(i, (m, r))| provider.embed(i, r, &m.smiles))
            .collect::<Result<Vec<_>, _>>()?;
        log::info!("embed: {} vectors of width {} from {}", embeddings.len(), provider.dim(), provider.id());
        let h = stack(&embeddings);
        checkpoint::write_matrices(&dir.join("embeddings.gmx"), &[("h_lm", &h)]).map_err(other)
    })
}

fn training_slice(c: &Config, section: &impl Serialize) -> Value {
    json!({ "task": c.task(), "split": c.split, "model": c.model, "train": section })
}

pub fn train_gnn(ctx: &Ctx) -> Result<StageStatus, CliError> {
    let c = &ctx.config;
    let train = c.gnn_train();
    let inputs = vec![ctx.dataset_input(), ctx.split_input()];
    ctx.seeded("train-gnn", training_slice(c, &c.teachers.gnn), inputs, &[("gnn", train.seed)]).run(|dir| {
        let ds = ctx.load_dataset()?;
        let split = ctx.load_split()?;
        let data = PreparedGraphs::from_dataset(&ds);
        let (outcome, artifacts) = train_gnn_teacher(&data, &split, ds.task.kind, &train)?;
        log::info!("train-gnn: best epoch {}, valid {:.4}", outcome.best_epoch, outcome.best_val.mean);
        outcome.network.params.save(&dir.join("model.gmx")).map_err(other)?;
        artifacts.save(&dir.join("teacher.gmx"))?;
        write_json(&dir.join("metrics.json"), &outcome_json(&outcome))
    })
}

pub fn train_lm_head_stage(ctx: &Ctx) -> Result<StageStatus, CliError> {
    let c = &ctx.config;
    let train = c.lm_head_train();
    let emb_path = ctx.artifact("embed", "embeddings.gmx");
    let inputs = vec![ctx.dataset_input(), ctx.split_input(), Input::stage("embeddings", emb_path.clone(), "embed")];
    let config = json!({ "train": training_slice(c, &c.teachers.lm_head), "hidden": c.teachers.lm_head_hidden });
    ctx.seeded("train-lm-head", config, inputs, &[("lm-head", train.seed)]).run(|dir| {
        let ds = ctx.load_dataset()?;
        let split = ctx.load_split()?;
        let entries = checkpoint::read_matrices(&emb_path).map_err(|e| data_err(&emb_path, e))?;
        let h: &Tensor = entries
            .iter()
            .find(|(n, _)| n == "h_lm")
            .map(|(_, t)| t)
            .ok_or_else(|| data_err(&emb_path, "no h_lm matrix"))?;
        let labels = Labels {
            values: &ds.labels,
            mask: &ds.mask,
            n_tasks: ds.n_tasks(),
        };
        let hidden = (c.teachers.lm_head_hidden > 0).then_some(c.teachers.lm_head_hidden);
        let outcome = train_lm_head(h, labels, &split, ds.task.kind, hidden, &train)?;
        artifacts_with_provider(&outcome.artifacts, &emb_path)?.save(&dir.join("teacher.gmx"))?;
        write_json(
            &dir.join("metrics.json"),
            &json!({ "best_epoch": outcome.best_epoch, "best_val": outcome.best_val }),
        )
    })
}

fn artifacts_with_provider(a: &TeacherArtifacts, emb_path: &Path) -> Result<TeacherArtifacts, CliError> {
    let mut a = a.clone();
    a.provenance.insert("embeddings".into(), file_digest(emb_path).map_err(|e| data_err(emb_path, e))?);
    Ok(a)
}

fn teacher_inputs(ctx: &Ctx) -> Vec<Input> {
    vec![
        ctx.dataset_input(),
        ctx.split_input(),
        Input::stage("gnn_teacher", ctx.artifact("train-gnn", "teacher.gmx"), "train-gnn"),
        Input::stage("lm_teacher", ctx.artifact("train-lm-head", "teacher.gmx"), "train-lm-head"),
    ]
}

pub fn distill(ctx: &Ctx) -> Result<StageStatus, CliError> {
    let c = &ctx.config;
    let train = c.student_train();
    let d = c.distill_config();
    let config = json!({ "train": training_slice(c, &c.student), "distill": d });
    ctx.seeded("distill", config, teacher_inputs(ctx), &[("student", train.seed)]).run(|dir| {
        let ds = ctx.load_dataset()?;
        let split = ctx.load_split()?;
        let teachers = ctx.load_teachers()?;
        let data = PreparedGraphs::from_dataset(&ds);
        let outcome = train_student(&data, &split, ds.task.kind, &teachers, &d, &train)?;
        log::info!("distill: best epoch {}, valid {:.4}", outcome.best_epoch, outcome.best_val.mean);
        outcome.network.params.save(&dir.join("model.gmx")).map_err(other)?;
        write_json(&dir.join("metrics.json"), &outcome_json(&outcome))
    })
}

pub fn grid(ctx: &Ctx) -> Result<StageStatus, CliError> {
    let c = &ctx.config;
    let train = c.student_train();
    let d = c.distill_config();
    let config = json!({ "train": training_slice(c, &c.student), "distill": d, "grid": c.distill.grid });
    ctx.seeded("grid", config, teacher_inputs(ctx), &[("student", train.seed)]).run(|dir| {
        let ds = ctx.load_dataset()?;
        let split = ctx.load_split()?;
        let teachers = ctx.load_teachers()?;
        let data = PreparedGraphs::from_dataset(&ds);
        let g = &c.distill.grid;
        let result = grid_search(&data, &split, ds.task.kind, &teachers, &d, &train, g, g, ctx.jobs)?;
        let best = result.best_row();
        log::info!("grid: best alpha {} beta {}, valid {:.4}", best.alpha, best.beta, best.val_metric);
        write_bytes(&dir.join("grid.csv"), result.to_csv().as_bytes())?;
        result.best_outcome.network.params.save(&dir.join("model.gmx")).map_err(other)?;
        write_json(
            &dir.join("metrics.json"),
            &json!({ "best": best, "outcome": outcome_json(&result.best_outcome) }),
        )
    })
}

fn split_reports(net: &Network, data: &PreparedGraphs, split: &SplitIndices, kind: TaskKind, seed: u64) -> Result<Value, CliError> {
    let mut out = serde_json::Map::new();
    for (name, idx) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        let v = match evaluate_split(net, data, idx, kind, name, seed) {
            Ok(r) => serde_json::to_value(r).map_err(other)?,
            Err(e) => json!({ "error": e.to_string() }),
        };
        out.insert(name.into(), v);
    }
    Ok(Value::Object(out))
}

pub fn eval(ctx: &Ctx) -> Result<StageStatus, CliError> {
    let c = &ctx.config;
    let (student_path, producer) = ctx.student_model_path();
    let gnn_path = ctx.artifact("train-gnn", "model.gmx");
    let inputs = vec![
        ctx.dataset_input(),
        ctx.split_input(),
        Input::stage("student_model", student_path.clone(), producer),
        Input::stage("gnn_model", gnn_path.clone(), "train-gnn"),
    ];
    let config = json!({ "task": c.task(), "model": c.model });
    ctx.seeded("eval", config, inputs, &[("eval", c.seed)]).run(|dir| {
        let ds = ctx.load_dataset()?;
        let split = ctx.load_split()?;
        let data = PreparedGraphs::from_dataset(&ds);
        let student = ctx.load_network(Architecture::Mlp, &student_path)?;
        let gnn = ctx.load_network(Architecture::Gcn, &gnn_path)?;
        let report = json!({
            "student": split_reports(&student, &data, &split, ds.task.kind, c.seed)?,
            "gnn": split_reports(&gnn, &data, &split, ds.task.kind, c.seed)?,
        });
        write_json(&dir.join("metrics.json"), &report)
    })
}

pub fn bench(ctx: &Ctx) -> Result<StageStatus, CliError> {
    let c = &ctx.config;
    let (student_path, producer) = ctx.student_model_path();
    let gnn_path = ctx.artifact("train-gnn", "model.gmx");
    let metrics_path = ctx.artifact("eval", "metrics.json");
    let inputs = vec![
        ctx.dataset_input(),
        Input::stage("student_model", student_path.clone(), producer),
        Input::stage("gnn_model", gnn_path.clone(), "train-gnn"),
        Input::stage("eval_metrics", metrics_path.clone(), "eval"),
    ];
    let config = json!({ "repeats": c.eval.bench_repeats, "model": c.model });
    ctx.stage("bench", config, inputs).run(|dir| {
        let ds = ctx.load_dataset()?;
        let data = PreparedGraphs::from_dataset(&ds);
        let metrics: Value = serde_json::from_slice(&std::fs::read(&metrics_path)?).map_err(|e| data_err(&metrics_path, e))?;
        let mut rows = Vec::new();
        for (key, arch, path) in [("student", Architecture::Mlp, &student_path), ("gnn", Architecture::Gcn, &gnn_path)] {
            let net = ctx.load_network(arch, path)?;
            let report = bench_inference(&net, &data, c.eval.bench_repeats).map_err(other)?;
            log::info!("bench: {key} {:.3} ms per pass, {} parameters", report.mean_ms, report.n_params);
            let test = metrics[key]["test"]["mean"].as_f64().unwrap_or(f64::NAN);
            rows.push((report, test));
        }
        write_bytes(&dir.join("plot.csv"), plot_csv(&rows).as_bytes())?;
        let reports: Vec<_> = rows.into_iter().map(|(r, _)| r).collect();
        write_json(&dir.join("bench.json"), &reports)
    })
}

/// Every stage in order; up-to-date stages are skipped.
pub fn pipeline(ctx: &Ctx) -> Result<Vec<(&'static str, StageStatus)>, CliError> {
    type StageFn = fn(&Ctx) -> Result<StageStatus, CliError>;
    let mut stages: Vec<(&'static str, StageFn)> = vec![("featurize", featurize), ("split", split)];
    if !ctx.config.llm.skip {
        stages.push(("prompt", prompt));
        stages.push(("query", query));
    }
    stages.extend([
        ("embed", embed as StageFn),
        ("train-gnn", train_gnn),
        ("train-lm-head", train_lm_head_stage),
    ]);
    stages.push(if ctx.config.distill.search { ("grid", grid) } else { ("distill", distill) });
    stages.extend([("eval", eval as StageFn), ("bench", bench)]);
    let mut done = Vec::new();
    for (name, f) in stages {
        done.push((name, f(ctx)?));
    }
    Ok(done)
}
