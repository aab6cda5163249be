//! Prediction head on frozen text embeddings.

use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::datasets::{SplitIndices, TaskKind};
use crate::distillation::{pred_loss, DistillError, TeacherArtifacts, TrainConfig};
use crate::evaluation::{score, Labels, MetricError, MetricReport};
use crate::models::{Linear, LinearVars};
use crate::tensorcore::rng::{derive_seed, seeded};
use crate::tensorcore::{AdamConfig, AdamState, Tape, Tensor, TensorError, Var};

/// Linear map `H_LM → d`, optionally behind one ReLU hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LmHead {
    pub hidden: Option<Linear>,
    pub out: Linear,
}

struct HeadVars {
    hidden: Option<LinearVars>,
    out: LinearVars,
}

impl LmHead {
    /// The output layer starts at zero, so an untrained head predicts its
    /// bias (zero) everywhere.
    pub fn init(in_dim: usize, out_dim: usize, hidden: Option<usize>, seed: u64) -> LmHead {
        let mut rng = seeded(derive_seed(seed, "lm-head"));
        match hidden {
            Some(h) => LmHead {
                hidden: Some(Linear::glorot(in_dim, h, &mut rng)),
                out: Linear::glorot(h, out_dim, &mut rng),
            },
            None => LmHead {
                hidden: None,
                out: Linear::zeros(in_dim, out_dim),
            },
        }
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.extend([&h.w, &h.b]);
        }
        out.extend([&self.out.w, &self.out.b]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(h) = &mut self.hidden {
            out.extend([&mut h.w, &mut h.b]);
        }
        out.extend([&mut self.out.w, &mut self.out.b]);
        out
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> Result<HeadVars, TensorError> {
        Ok(HeadVars {
            hidden: self.hidden.as_ref().map(|h| h.register(tape, trainable)).transpose()?,
            out: self.out.register(tape, trainable)?,
        })
    }

    fn forward(vars: &HeadVars, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let x = match &vars.hidden {
            Some(h) => {
                let z = h.apply(tape, x)?;
                tape.relu(z)?
            }
            None => x,
        };
        vars.out.apply(tape, x)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false)?;
        let xv = tape.constant(x.clone())?;
        let y = Self::forward(&vars, &mut tape, xv)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Clone, Debug)]
pub struct LmHeadOutcome {
    pub head: LmHead,
    pub best_epoch: usize,
    /// `None` when validation labels hold a single class.
    pub best_val: Option<MetricReport>,
    /// Teacher outputs for every molecule: `h_lm` = embeddings, `y_lm` =
    /// head predictions.
    pub artifacts: TeacherArtifacts,
}

/// Fits the head on training rows of `embeddings` (`N × H_LM`) with the
/// task's prediction loss, keeping the best validation epoch.
pub fn train_lm_head(
    embeddings: &Tensor,
    labels: Labels<'_>,
    split: &SplitIndices,
    kind: TaskKind,
    hidden: Option<usize>,
    train: &TrainConfig,
) -> Result<LmHeadOutcome, DistillError> {
    let n = embeddings.rows();
    if labels.values.len() != n * labels.n_tasks {
        return Err(DistillError::TeacherRows {
            name: "h_lm",
            found: n,
            expected: labels.values.len() / labels.n_tasks.max(1),
        });
    }
    if split.train.is_empty() {
        return Err(DistillError::EmptySplit);
    }
    let t = labels.n_tasks;
    let out_dim = match kind {
        TaskKind::Classification => t,
        TaskKind::Regression => 1,
    };
    let train_labels: Vec<f64> = split.train.iter().flat_map(|&i| labels.values[i * t..(i + 1) * t].iter().copied()).collect();
    if kind == TaskKind::Classification {
        let pos = train_labels.iter().filter(|&&y| y > 0.5).count();
        if pos == 0 || pos == train_labels.iter().filter(|y| !y.is_nan()).count() {
            log::warn!("training labels hold a single class; ROCAUC is undefined for the LM head");
        }
    }

    let mut head = LmHead::init(embeddings.cols(), out_dim, hidden, train.seed);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: train.lr,
            ..AdamConfig::default()
        },
        &head.tensors(),
    );
    let mut rng = seeded(derive_seed(train.seed, "lm-batches"));
    let mut order = split.train.clone();
    let mut best: Option<(usize, LmHead, Option<MetricReport>)> = None;
    let mut since_best = 0;

    let validate = |head: &LmHead| -> Result<Option<MetricReport>, DistillError> {
        if split.valid.is_empty() {
            return Ok(None);
        }
        let preds = head.predict(&embeddings.select_rows(&split.valid))?;
        let local: Vec<usize> = (0..split.valid.len()).collect();
        let values: Vec<f64> = split.valid.iter().flat_map(|&i| labels.values[i * t..(i + 1) * t].iter().copied()).collect();
        let mask: Vec<bool> = split.valid.iter().flat_map(|&i| labels.mask[i * t..(i + 1) * t].iter().copied()).collect();
        let view = Labels {
            values: &values,
            mask: &mask,
            n_tasks: t,
        };
        match score(kind, &preds, view, &local, "valid", train.seed) {
            Ok(r) => Ok(Some(r)),
            Err(MetricError::UndefinedAuc { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    };

    for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(train.batch_size.max(1)) {
            let y: Vec<f64> = chunk
                .iter()
                .flat_map(|&i| (0..t).map(move |k| (i, k)))
                .map(|(i, k)| if labels.mask[i * t + k] { labels.values[i * t + k] } else { 0.0 })
                .collect();
            let mask: Vec<bool> = chunk.iter().flat_map(|&i| labels.mask[i * t..(i + 1) * t].iter().copied()).collect();
            if !mask.iter().any(|&m| m) {
                continue;
            }
            let diverged = |source: TensorError| DistillError::Diverged { epoch, source };
            let mut tape = Tape::new();
            let vars = head.register(&mut tape, true)?;
            let x = tape.constant(embeddings.select_rows(chunk))?;
            let out = LmHead::forward(&vars, &mut tape, x).map_err(diverged)?;
            let labels_t = Tensor {
                shape: [chunk.len(), t],
                data: y,
            };
            let loss = pred_loss(&mut tape, out, Arc::new(labels_t), Arc::new(mask), kind).map_err(diverged)?;
            let grads = tape.backward(loss).map_err(diverged)?;
            let mut vs = Vec::new();
            if let Some(h) = &vars.hidden {
                vs.extend([h.w, h.b]);
            }
            vs.extend([vars.out.w, vars.out.b]);
            let g: Vec<Tensor> = vs.into_iter().map(|v| grads.get_or_zeros(v, tape.value(v))).collect();
            adam.step(&mut head.tensors_mut(), &g).map_err(diverged)?;
        }
        let val = validate(&head)?;
        let improved = match (&best, &val) {
            (None, _) => true,
            (Some((_, _, Some(b))), Some(v)) => match kind {
                TaskKind::Classification => v.mean > b.mean,
                TaskKind::Regression => v.mean < b.mean,
            },
            // without a defined validation metric the latest epoch is kept
            (Some((_, _, _)), _) => val.is_none(),
        };
        if improved {
            best = Some((epoch, head.clone(), val));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train.patience {
                break;
            }
        }
    }

    let (best_epoch, head, best_val) = match best {
        Some(b) => b,
        None => {
            let v = validate(&head)?;
            (0, head, v)
        }
    };
    let mut artifacts = TeacherArtifacts {
        y_lm: Some(head.predict(embeddings)?),
        h_lm: Some(embeddings.clone()),
        ..TeacherArtifacts::default()
    };
    let bytes: Vec<u8> = head.tensors().iter().flat_map(|t| t.data.iter().flat_map(|x| x.to_le_bytes())).collect();
    artifacts.provenance.insert("lm_head".into(), hex::encode(<sha2::Sha256 as sha2::Digest>::digest(bytes)));
    Ok(LmHeadOutcome {
        head,
        best_epoch,
        best_val,
        artifacts,
    })
}
