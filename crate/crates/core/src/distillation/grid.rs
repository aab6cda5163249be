//! Exhaustive α/β search, one student per cell.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::train::{train_student, TrainOutcome};
use super::{DistillConfig, DistillError, TeacherArtifacts, TrainConfig};
use crate::datasets::{SplitIndices, TaskKind};
use crate::models::PreparedGraphs;

/// Candidate values for each of α and β.
pub const DEFAULT_GRID: [f64; 10] = [0.0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub val_metric: f64,
    pub test_metric: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    /// α-major enumeration order.
    pub rows: Vec<GridRow>,
    /// Index into `rows`.
    pub best: usize,
    pub best_outcome: TrainOutcome,
}

impl GridResult {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,val_metric,test_metric,seed\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.alpha, r.beta, r.val_metric, r.test_metric, r.seed));
        }
        out
    }
}

/// Trains one student per `(α, β)` in `alphas × betas` and keeps the best
/// validation metric; ties go to the earlier cell. Cell `i` uses seed
/// `train.seed ^ i`, so any cell can be rerun alone. Up to `jobs` cells run
/// concurrently.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    data: &PreparedGraphs,
    split: &SplitIndices,
    kind: TaskKind,
    teachers: &TeacherArtifacts,
    base: &DistillConfig,
    train: &TrainConfig,
    alphas: &[f64],
    betas: &[f64],
    jobs: usize,
) -> Result<GridResult, DistillError> {
    let cells: Vec<(f64, f64)> = alphas.iter().flat_map(|&a| betas.iter().map(move |&b| (a, b))).collect();
    if cells.is_empty() {
        return Err(DistillError::EmptyGrid);
    }
    let run_cell = |i: usize| -> Result<TrainOutcome, DistillError> {
        let (alpha, beta) = cells[i];
        let config = DistillConfig {
            alpha,
            beta,
            ..base.clone()
        };
        let cell_train = TrainConfig {
            seed: train.seed ^ i as u64,
            ..*train
        };
        log::info!("grid cell {i}: alpha {alpha} beta {beta}");
        train_student(data, split, kind, teachers, &config, &cell_train)
    };

    let results: Mutex<Vec<Option<Result<TrainOutcome, DistillError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let r = run_cell(i);
                results.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });

    let mut rows = Vec::with_capacity(cells.len());
    let mut outcomes = Vec::with_capacity(cells.len());
    for (i, r) in results.into_inner().expect("workers joined").into_iter().enumerate() {
        let outcome = r.expect("every cell ran")?;
        rows.push(GridRow {
            alpha: cells[i].0,
            beta: cells[i].1,
            val_metric: outcome.best_val.mean,
            test_metric: outcome.test_at_best.mean,
            seed: train.seed ^ i as u64,
        });
        outcomes.push(outcome);
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate().skip(1) {
        let b = rows[best].val_metric;
        let wins = match kind {
            TaskKind::Classification => r.val_metric > b,
            TaskKind::Regression => r.val_metric < b,
        };
        if wins {
            best = i;
        }
    }
    let best_outcome = outcomes.swap_remove(best);
    Ok(GridResult {
        rows,
        best,
        best_outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemgraph::parse_smiles;
    use crate::datasets::{MoleculeDataset, SplitMode, TaskSpec};
    use crate::tensorcore::Tensor;

    fn setup() -> (PreparedGraphs, SplitIndices, TeacherArtifacts) {
        let smiles = ["CCO", "CCN", "c1ccccc1", "CC(=O)O", "CCCC", "c1ccncc1", "OCCO", "NCCN", "CCOC", "CCSC"];
        let rows = smiles
            .iter()
            .enumerate()
            .map(|(i, s)| (parse_smiles(s).unwrap(), vec![Some((i % 2) as f64)]))
            .collect();
        let data = PreparedGraphs::from_dataset(&MoleculeDataset::from_rows(TaskSpec::preset("bbbp").unwrap(), rows));
        let split = SplitIndices {
            mode: SplitMode::Scaffold,
            seed: 0,
            train: (0..6).collect(),
            valid: vec![6, 7],
            test: vec![8, 9],
        };
        let teachers = TeacherArtifacts {
            y_lm: Some(Tensor::zeros(10, 1)),
            y_gnn: Some(Tensor::zeros(10, 1)),
            ..TeacherArtifacts::default()
        };
        (data, split, teachers)
    }

    fn train() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            lr: 1e-2,
            patience: 5,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_cell_grid() {
        let (d, s, t) = setup();
        let r = grid_search(&d, &s, TaskKind::Classification, &t, &DistillConfig::default(), &train(), &[0.0], &[0.0], 1)
            .unwrap();
        assert_eq!((r.best_row().alpha, r.best_row().beta), (0.0, 0.0));
        assert_eq!(r.rows.len(), 1);
        assert!(r.to_csv().starts_with("alpha,beta,val_metric,test_metric,seed\n0,0,"));
    }

    #[test]
    fn empty_grid_rejected() {
        let (d, s, t) = setup();
        let r = grid_search(&d, &s, TaskKind::Classification, &t, &DistillConfig::default(), &train(), &[], &[0.0], 1);
        assert!(matches!(r, Err(DistillError::EmptyGrid)));
    }

    #[test]
    fn parallel_matches_serial_and_ties_go_early() {
        let (d, s, t) = setup();
        let g = [0.0, 0.5];
        let serial = grid_search(&d, &s, TaskKind::Classification, &t, &DistillConfig::default(), &train(), &g, &g, 1).unwrap();
        let parallel = grid_search(&d, &s, TaskKind::Classification, &t, &DistillConfig::default(), &train(), &g, &g, 3).unwrap();
        assert_eq!(serial.rows, parallel.rows);
        assert_eq!(serial.rows.len(), 4);
        assert_eq!(serial.rows[3].seed, 11 ^ 3);
        let best = serial.rows[serial.best].val_metric;
        assert!(serial.rows[..serial.best].iter().all(|r| r.val_metric < best));
    }
}
