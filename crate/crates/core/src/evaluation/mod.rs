//! ROCAUC / RMSE, split evaluation and the inference-time benchmark.

mod metrics;

pub use metrics::{rmse, rocauc, MetricError, MetricReport};

use std::time::Instant;

use serde::Serialize;

use crate::datasets::{Metric, TaskKind};
use crate::models::{ModelError, Network, PreparedGraphs};
use crate::tensorcore::Tensor;

pub const EVAL_BATCH: usize = 256;

/// Predictions `N × d` for the molecules at `indices`, in order.
pub fn predict_all(net: &Network, data: &PreparedGraphs, indices: &[usize]) -> Result<(Tensor, Tensor), ModelError> {
    let mut h = Vec::new();
    let mut y = Vec::new();
    let (mut hc, mut yc) = (net.params.config.hidden, net.params.config.out_dim);
    for chunk in indices.chunks(EVAL_BATCH) {
        let (hb, yb) = net.predict(&data.batch(chunk))?;
        hc = hb.cols();
        yc = yb.cols();
        h.extend(hb.data);
        y.extend(yb.data);
    }
    Ok((
        Tensor {
            shape: [indices.len(), hc],
            data: h,
        },
        Tensor {
            shape: [indices.len(), yc],
            data: y,
        },
    ))
}

/// Row-major `N × n_tasks` labels and validity mask.
#[derive(Clone, Copy, Debug)]
pub struct Labels<'a> {
    pub values: &'a [f64],
    pub mask: &'a [bool],
    pub n_tasks: usize,
}

impl<'a> From<&'a PreparedGraphs> for Labels<'a> {
    fn from(p: &'a PreparedGraphs) -> Labels<'a> {
        Labels {
            values: &p.labels,
            mask: &p.mask,
            n_tasks: p.n_tasks,
        }
    }
}

/// Scores predictions `preds` (`N × d`) against the labels of `indices`.
pub fn score<'a>(
    kind: TaskKind,
    preds: &Tensor,
    data: impl Into<Labels<'a>>,
    indices: &[usize],
    split: &str,
    seed: u64,
) -> Result<MetricReport, MetricError> {
    let data: Labels<'a> = data.into();
    let t = data.n_tasks;
    match kind {
        TaskKind::Classification => {
            let mut per_task = Vec::with_capacity(t);
            let mut skipped = Vec::new();
            for task in 0..t {
                let (mut s, mut l) = (Vec::new(), Vec::new());
                for (row, &i) in indices.iter().enumerate() {
                    if data.mask[i * t + task] {
                        s.push(preds.get(row, task));
                        l.push(data.values[i * t + task]);
                    }
                }
                match rocauc(&s, &l) {
                    Ok(v) => per_task.push(Some(v)),
                    Err(MetricError::UndefinedAuc { .. }) => {
                        log::warn!("{split}: task {task} has a single class; left out of the mean");
                        skipped.push(task);
                        per_task.push(None);
                    }
                    Err(e) => return Err(e),
                }
            }
            let defined: Vec<f64> = per_task.iter().flatten().copied().collect();
            if defined.is_empty() {
                let positives = indices.iter().filter(|&&i| data.values[i * t] > 0.5).count();
                return Err(MetricError::UndefinedAuc {
                    positives,
                    negatives: indices.len() - positives,
                });
            }
            Ok(MetricReport {
                metric: Metric::RocAuc,
                split: split.to_string(),
                mean: defined.iter().sum::<f64>() / defined.len() as f64,
                per_task,
                skipped_tasks: skipped,
                n_evaluated: indices.len(),
                seed,
            })
        }
        TaskKind::Regression => {
            let mut per_task = Vec::with_capacity(t);
            for task in 0..t {
                let (mut p, mut y, mut m) = (Vec::new(), Vec::new(), Vec::new());
                for (row, &i) in indices.iter().enumerate() {
                    p.push(preds.get(row, task.min(preds.cols() - 1)));
                    y.push(if data.mask[i * t + task] { data.values[i * t + task] } else { 0.0 });
                    m.push(data.mask[i * t + task]);
                }
                per_task.push(Some(rmse(&p, &y, &m)?));
            }
            let mean = per_task.iter().flatten().sum::<f64>() / t as f64;
            Ok(MetricReport {
                metric: Metric::Rmse,
                split: split.to_string(),
                per_task,
                mean,
                skipped_tasks: Vec::new(),
                n_evaluated: indices.len(),
                seed,
            })
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub fn evaluate_split(
    net: &Network,
    data: &PreparedGraphs,
    indices: &[usize],
    kind: TaskKind,
    split: &str,
    seed: u64,
) -> Result<MetricReport, EvalError> {
    let (_, y) = predict_all(net, data, indices)?;
    Ok(score(kind, &y, data, indices, split, seed)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub model: String,
    pub n_params: usize,
    pub repeats: usize,
    /// Mean wall time of one full-dataset inference pass.
    pub mean_ms: f64,
    pub min_ms: f64,
    pub samples_ms: Vec<f64>,
}

/// Times full passes over every molecule, single-threaded, after one
/// untimed warm-up pass.
pub fn bench_inference(net: &Network, data: &PreparedGraphs, repeats: usize) -> Result<BenchReport, ModelError> {
    let all: Vec<usize> = (0..data.len()).collect();
    let batches: Vec<_> = all.chunks(EVAL_BATCH).map(|c| data.batch(c)).collect();
    let pass = || -> Result<f64, ModelError> {
        let mut acc = 0.0;
        for b in &batches {
            let (_, y) = net.predict(b)?;
            acc += y.data[0];
        }
        Ok(acc)
    };
    std::hint::black_box(pass()?);
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(pass()?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let n = samples.len().max(1) as f64;
    Ok(BenchReport {
        model: format!("{:?}", net.arch).to_lowercase(),
        n_params: net.n_params(),
        repeats,
        mean_ms: samples.iter().sum::<f64>() / n,
        min_ms: samples.iter().cloned().fold(f64::INFINITY, f64::min),
        samples_ms: samples,
    })
}

/// `model,rocauc,log_time_ms,log_params` rows for plotting accuracy against
/// inference time and model size (natural logarithms).
pub fn plot_csv(rows: &[(BenchReport, f64)]) -> String {
    let mut out = String::from("model,rocauc,log_time_ms,log_params\n");
    for (b, auc) in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            b.model,
            auc,
            b.mean_ms.ln(),
            (b.n_params as f64).ln()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::{parse_smiles, FEATURE_WIDTH};
    use crate::datasets::{MoleculeDataset, TaskSpec};
    use crate::models::{Architecture, NetConfig, StackParams};
    use crate::tensorcore::rng::seeded;

    fn data(kind: &str, labels: &[f64]) -> PreparedGraphs {
        let smiles = ["C", "CC", "CCC", "CCCC", "CO", "CN"];
        let rows = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| (parse_smiles(smiles[i % smiles.len()]).unwrap(), vec![Some(y)]))
            .collect();
        PreparedGraphs::from_dataset(&MoleculeDataset::from_rows(TaskSpec::preset(kind).unwrap(), rows))
    }

    #[test]
    fn oracle_scores_perfect_auc() {
        let labels = [0.0, 1.0, 1.0, 0.0, 1.0];
        let d = data("bace", &labels);
        let preds = Tensor::from_rows(&labels.iter().map(|&y| vec![y]).collect::<Vec<_>>());
        let r = score(TaskKind::Classification, &preds, &d, &[0, 1, 2, 3, 4], "test", 0).unwrap();
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn constant_regressor_rmse_is_spread() {
        let labels = [1.0, 2.0, 3.0, 4.0];
        let d = data("esol", &labels);
        let mean = 2.5;
        let preds = Tensor::from_rows(&vec![vec![mean]; 4]);
        let r = score(TaskKind::Regression, &preds, &d, &[0, 1, 2, 3], "test", 0).unwrap();
        let sd = (labels.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / 4.0).sqrt();
        assert!((r.mean - sd).abs() < 1e-15);
    }

    #[test]
    fn bench_with_one_repeat() {
        let d = data("bace", &[0.0, 1.0, 0.0]);
        let net = Network {
            arch: Architecture::Mlp,
            params: StackParams::init(NetConfig::new(FEATURE_WIDTH, 1), &mut seeded(0)).unwrap(),
        };
        let b = bench_inference(&net, &d, 1).unwrap();
        assert_eq!(b.samples_ms.len(), 1);
        assert_eq!(b.mean_ms, b.samples_ms[0]);
        assert_eq!(b.n_params, NetConfig::new(FEATURE_WIDTH, 1).param_count());
        assert!(plot_csv(&[(b, 0.5)]).starts_with("model,rocauc,log_time_ms,log_params\nmlp,0.500000,"));
    }
}
