//! Prediction and distillation objectives, recorded on a [`Tape`].

use std::sync::Arc;

use crate::datasets::TaskKind;
use crate::models::HeadVars;
use super::DistillError;
use crate::tensorcore::{Tape, Tensor, TensorError, Var};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise sigmoid of teacher logits, as Bernoulli targets.
pub fn probabilities(logits: &Tensor) -> Tensor {
    Tensor {
        shape: logits.shape,
        data: logits.data.iter().map(|&z| sigmoid(z)).collect(),
    }
}

/// Masked BCE on per-task logits for classification; masked RMSE for
/// regression.
pub fn pred_loss(
    tape: &mut Tape,
    y: Var,
    labels: Arc<Tensor>,
    mask: Arc<Vec<bool>>,
    kind: TaskKind,
) -> Result<Var, TensorError> {
    match kind {
        TaskKind::Classification => tape.bce_with_logits(y, labels, mask),
        TaskKind::Regression => {
            let target = tape.constant((*labels).clone())?;
            tape.rmse(y, target, Some(mask))
        }
    }
}

/// Teacher predictions for the molecules of one batch.
#[derive(Clone, Debug)]
pub struct TeacherBatch {
    pub y_lm: Option<Tensor>,
    pub h_lm: Option<Tensor>,
    pub y_gnn: Option<Tensor>,
    pub h_gnn: Option<Tensor>,
}

fn missing(what: &'static str) -> DistillError {
    DistillError::MissingTeacher(what)
}

fn weighted(tape: &mut Tape, term: Var, w: f64) -> Result<Var, TensorError> {
    if w == 1.0 {
        Ok(term)
    } else {
        tape.scale(term, w)
    }
}

fn add_opt(tape: &mut Tape, acc: Option<Var>, term: Var) -> Result<Option<Var>, TensorError> {
    Ok(Some(match acc {
        Some(a) => tape.add(a, term)?,
        None => term,
    }))
}

/// `α·D(ŷ_LM, ŷ) + β·D(ŷ_GNN, ŷ)` with `D` the Bernoulli KL (teacher first)
/// for classification and RMSE for regression. Terms with zero weight are
/// not recorded; `None` when both weights are zero.
pub fn label_distill_loss(
    tape: &mut Tape,
    y: Var,
    teachers: &TeacherBatch,
    alpha: f64,
    beta: f64,
    kind: TaskKind,
) -> Result<Option<Var>, DistillError> {
    let mut acc = None;
    for (w, t, name) in [
        (alpha, &teachers.y_lm, "LM teacher predictions"),
        (beta, &teachers.y_gnn, "GNN teacher predictions"),
    ] {
        if w == 0.0 {
            continue;
        }
        let t = t.as_ref().ok_or_else(|| missing(name))?;
        let term = match kind {
            TaskKind::Classification => tape.bernoulli_kl(y, Arc::new(probabilities(t)), None)?,
            TaskKind::Regression => {
                let c = tape.constant(t.clone())?;
                tape.rmse(y, c, None)?
            }
        };
        let term = weighted(tape, term, w)?;
        acc = add_opt(tape, acc, term)?;
    }
    Ok(acc)
}

/// `α·RMSE(U_MLP h, U_LM h_LM) + β·RMSE(U_MLP h, U_GNN h_GNN)`, skipping
/// zero-weight terms.
pub fn repr_distill_loss(
    tape: &mut Tape,
    h: Var,
    teachers: &TeacherBatch,
    heads: &HeadVars,
    alpha: f64,
    beta: f64,
) -> Result<Option<Var>, DistillError> {
    if alpha == 0.0 && beta == 0.0 {
        return Ok(None);
    }
    let student = heads.u_mlp.apply(tape, h)?;
    let mut acc = None;
    for (w, t, head, name) in [
        (alpha, &teachers.h_lm, heads.u_lm, "LM teacher representations"),
        (beta, &teachers.h_gnn, heads.u_gnn, "GNN teacher representations"),
    ] {
        if w == 0.0 {
            continue;
        }
        let t = t.as_ref().ok_or_else(|| missing(name))?;
        let tv = tape.constant(t.clone())?;
        let projected = head.apply(tape, tv)?;
        let term = tape.rmse(student, projected, None)?;
        let term = weighted(tape, term, w)?;
        acc = add_opt(tape, acc, term)?;
    }
    Ok(acc)
}
