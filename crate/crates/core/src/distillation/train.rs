//! Mini-batch training loops with best-validation checkpointing.

use rand::seq::SliceRandom;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::losses::{label_distill_loss, pred_loss, repr_distill_loss, TeacherBatch};
use super::{DistillConfig, DistillError, DistillMode, TeacherArtifacts, TrainConfig};
use crate::datasets::{SplitIndices, TaskKind};
use crate::evaluation::{predict_all, score, MetricReport};
use crate::models::{
    gcn_forward, mlp_forward, Architecture, ForwardOut, GraphBatch, HeadVars, NamedParams, NetConfig, Network,
    PreparedGraphs, ProjectionHeads, StackParams,
};
use crate::tensorcore::checkpoint;
use crate::tensorcore::rng::{derive_seed, seeded};
use crate::tensorcore::{AdamConfig, AdamState, Tape, Tensor, TensorError, Var};

/// Recorded pieces of one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub pred: Var,
    pub distill: Option<Var>,
    pub total: Var,
}

/// Prediction loss plus the distillation term selected by `config.mode`.
/// With `α = β = 0` the total is the prediction loss node itself.
pub fn total_loss(
    tape: &mut Tape,
    out: ForwardOut,
    batch: &GraphBatch,
    teachers: &TeacherBatch,
    heads: Option<&HeadVars>,
    config: &DistillConfig,
    kind: TaskKind,
) -> Result<LossParts, DistillError> {
    let pred = pred_loss(tape, out.y, batch.labels.clone(), batch.mask.clone(), kind)?;
    let distill = match config.mode_for(kind) {
        DistillMode::Label => label_distill_loss(tape, out.y, teachers, config.alpha, config.beta, kind)?,
        DistillMode::Representation => {
            if config.alpha == 0.0 && config.beta == 0.0 {
                None
            } else {
                let heads = heads.ok_or(DistillError::MissingTeacher("projection heads"))?;
                repr_distill_loss(tape, out.h, teachers, heads, config.alpha, config.beta)?
            }
        }
    };
    let total = match distill {
        Some(d) => tape.add(pred, d)?,
        None => pred,
    };
    Ok(LossParts { pred, distill, total })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over optimized batches.
    pub train_loss: f64,
    pub train_pred_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub network: Network,
    pub heads: Option<ProjectionHeads>,
    pub history: Vec<EpochRecord>,
    /// 1-based; 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_val: MetricReport,
    pub test_at_best: MetricReport,
    /// Test metric of the last epoch's parameters.
    pub test_at_final: MetricReport,
}

impl TrainOutcome {
    /// SHA-256 of the serialized best parameters.
    pub fn digest(&self) -> String {
        let named = self.network.params.named();
        let entries: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        let bytes = checkpoint::encode(&entries).expect("parameter names are unique");
        hex::encode(Sha256::digest(bytes))
    }
}

struct Student<'a> {
    teachers: &'a TeacherArtifacts,
    config: &'a DistillConfig,
}

fn better(kind: TaskKind, candidate: f64, best: f64) -> bool {
    match kind {
        TaskKind::Classification => candidate > best,
        TaskKind::Regression => candidate < best,
    }
}

fn evaluate(net: &Network, data: &PreparedGraphs, indices: &[usize], kind: TaskKind, split: &str, seed: u64) -> Result<MetricReport, DistillError> {
    let (_, y) = predict_all(net, data, indices)?;
    Ok(score(kind, &y, data, indices, split, seed)?)
}

fn no_teachers() -> TeacherBatch {
    TeacherBatch {
        y_lm: None,
        h_lm: None,
        y_gnn: None,
        h_gnn: None,
    }
}

fn run(
    arch: Architecture,
    data: &PreparedGraphs,
    split: &SplitIndices,
    kind: TaskKind,
    train: &TrainConfig,
    student: Option<Student<'_>>,
) -> Result<TrainOutcome, DistillError> {
    if split.train.is_empty() {
        return Err(DistillError::EmptySplit);
    }
    if train.batch_size == 0 {
        return Err(DistillError::Config("batch_size must be positive".into()));
    }
    let seed = train.seed;
    let out_dim = match kind {
        TaskKind::Classification => data.n_tasks,
        TaskKind::Regression => 1,
    };
    let net_config = NetConfig {
        in_dim: data.feature_width(),
        hidden: train.hidden,
        n_layers: train.n_layers,
        out_dim,
    };
    let mut params = StackParams::init(net_config, &mut seeded(derive_seed(seed, "init")))?;

    let mut heads = None;
    if let Some(s) = &student {
        s.config.validate()?;
        s.teachers.check_rows(data.len())?;
        let c = s.config;
        if c.mode_for(kind) == DistillMode::Representation && (c.alpha > 0.0 || c.beta > 0.0) {
            let width = |t: &Option<Tensor>, w: f64, what| match t {
                Some(t) => Ok(t.cols()),
                None if w == 0.0 => Ok(1),
                None => Err(DistillError::MissingTeacher(what)),
            };
            let lm = width(&s.teachers.h_lm, c.alpha, "LM teacher representations")?;
            let gnn = width(&s.teachers.h_gnn, c.beta, "GNN teacher representations")?;
            heads = Some(ProjectionHeads::init(
                params.config.hidden,
                lm,
                gnn,
                c.latent_dim,
                c.teacher_heads_trainable,
                &mut seeded(derive_seed(seed, "heads")),
            )?);
        }
    }

    let adam_config = AdamConfig {
        lr: train.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_config, &params.named().iter().map(|(_, t)| *t).collect::<Vec<_>>());
    let mut head_adam = heads
        .as_ref()
        .map(|h: &ProjectionHeads| AdamState::new(adam_config, &h.named().iter().map(|(_, t)| *t).collect::<Vec<_>>()));
    let mut batch_rng = seeded(derive_seed(seed, "batches"));

    let mut order = split.train.clone();
    let mut history = Vec::with_capacity(train.epochs);
    let mut best: Option<(usize, StackParams, Option<ProjectionHeads>, MetricReport)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=train.epochs {
        order.shuffle(&mut batch_rng);
        let (mut loss_sum, mut pred_sum, mut n_batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(train.batch_size) {
            let batch = data.batch(chunk);
            if !batch.mask.iter().any(|&m| m) {
                continue;
            }
            let diverged = |source: TensorError| DistillError::Diverged { epoch, source };
            let mut tape = Tape::new();
            let vars = params.register(&mut tape)?;
            let out = match arch {
                Architecture::Gcn => gcn_forward(&mut tape, &batch, &vars)?,
                Architecture::Mlp => mlp_forward(&mut tape, &batch, &vars)?,
            };
            let head_vars = match &heads {
                Some(h) => Some(h.register(&mut tape)?),
                None => None,
            };
            let parts = match &student {
                Some(s) => total_loss(&mut tape, out, &batch, &s.teachers.batch(chunk), head_vars.as_ref(), s.config, kind),
                None => total_loss(&mut tape, out, &batch, &no_teachers(), None, &DistillConfig::default(), kind),
            }
            .map_err(|e| match e {
                DistillError::Tensor(t @ TensorError::NonFinite { .. }) => diverged(t),
                e => e,
            })?;
            let grads = tape.backward(parts.total).map_err(diverged)?;
            let g: Vec<Tensor> = vars
                .all()
                .into_iter()
                .map(|v| grads.get_or_zeros(v, tape.value(v)))
                .collect();
            adam.step(&mut params.tensors_mut(), &g).map_err(diverged)?;
            if let (Some(h), Some(hv), Some(ha)) = (heads.as_mut(), head_vars, head_adam.as_mut()) {
                let g: Vec<Tensor> = hv
                    .trainable(h.teacher_heads_trainable)
                    .into_iter()
                    .map(|v| grads.get_or_zeros(v, tape.value(v)))
                    .collect();
                ha.step(&mut h.tensors_mut(), &g).map_err(diverged)?;
            }
            loss_sum += tape.value(parts.total).item();
            pred_sum += tape.value(parts.pred).item();
            n_batches += 1;
        }
        let net = Network {
            arch,
            params: params.clone(),
        };
        let val = evaluate(&net, data, &split.valid, kind, "valid", seed)?;
        let denom = n_batches.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / denom,
            train_pred_loss: pred_sum / denom,
            val_metric: val.mean,
        });
        log::debug!("epoch {epoch}: loss {:.5} val {:.5}", loss_sum / denom, val.mean);
        let improved = match &best {
            None => true,
            Some((_, _, _, b)) => better(kind, val.mean, b.mean),
        };
        if improved {
            best = Some((epoch, params.clone(), heads.clone(), val));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let final_net = Network {
        arch,
        params: params.clone(),
    };
    let test_at_final = evaluate(&final_net, data, &split.test, kind, "test", seed)?;
    let (best_epoch, best_params, best_heads, best_val) = match best {
        Some(b) => b,
        None => {
            let val = evaluate(&final_net, data, &split.valid, kind, "valid", seed)?;
            (0, params, heads, val)
        }
    };
    let network = Network {
        arch,
        params: best_params,
    };
    let test_at_best = evaluate(&network, data, &split.test, kind, "test", seed)?;
    Ok(TrainOutcome {
        network,
        heads: best_heads,
        history,
        best_epoch,
        best_val,
        test_at_best,
        test_at_final,
    })
}

/// Trains the GCN on labels and emits its predictions and pooled
/// representations for every molecule.
pub fn train_gnn_teacher(
    data: &PreparedGraphs,
    split: &SplitIndices,
    kind: TaskKind,
    train: &TrainConfig,
) -> Result<(TrainOutcome, TeacherArtifacts), DistillError> {
    let outcome = run(Architecture::Gcn, data, split, kind, train, None)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let (h, y) = predict_all(&outcome.network, data, &all)?;
    let mut artifacts = TeacherArtifacts {
        y_gnn: Some(y),
        h_gnn: Some(h),
        ..TeacherArtifacts::default()
    };
    artifacts.provenance.insert("gnn".into(), outcome.digest());
    Ok((outcome, artifacts))
}

/// Label-only MLP baseline.
pub fn train_plain_mlp(
    data: &PreparedGraphs,
    split: &SplitIndices,
    kind: TaskKind,
    train: &TrainConfig,
) -> Result<TrainOutcome, DistillError> {
    run(Architecture::Mlp, data, split, kind, train, None)
}

/// Student MLP under the combined objective. Teacher rows are read for
/// training molecules only.
pub fn train_student(
    data: &PreparedGraphs,
    split: &SplitIndices,
    kind: TaskKind,
    teachers: &TeacherArtifacts,
    distill: &DistillConfig,
    train: &TrainConfig,
) -> Result<TrainOutcome, DistillError> {
    run(
        Architecture::Mlp,
        data,
        split,
        kind,
        train,
        Some(Student {
            teachers,
            config: distill,
        }),
    )
}
