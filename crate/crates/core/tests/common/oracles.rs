//! Independent references shared by the oracle suites and the acceptance run.

use gallon::chemgraph::parse_smiles;
use gallon::datasets::{MoleculeDataset, TaskKind, TaskSpec};
use gallon::distillation::{total_loss, DistillConfig, DistillMode, TeacherBatch};
use gallon::models::{
    gcn_forward, mlp_forward, GraphBatch, NamedParams, NetConfig, PreparedGraphs, ProjectionHeads, StackParams,
};
use gallon::tensorcore::rng::Rng;
use gallon::tensorcore::{Tape, Tensor};
use rand::Rng as _;

const SMILES: [&str; 8] = ["CCO", "c1ccccc1O", "CC(=O)N", "C1CCNCC1", "OC(=O)c1ccccc1", "CCCl", "[NH4+]", "CC#N"];

pub fn prepared(preset: &str, n_tasks: usize, rng: &mut Rng) -> PreparedGraphs {
    let mut task = TaskSpec::preset(preset).unwrap();
    task.label_columns = (0..n_tasks).map(|t| format!("t{t}")).collect();
    let regression = task.kind == TaskKind::Regression;
    let rows = SMILES
        .iter()
        .map(|s| {
            let labels = (0..n_tasks)
                .map(|_| {
                    if rng.random_bool(0.15) {
                        None
                    } else if regression {
                        Some(rng.random_range(-3.0..3.0))
                    } else {
                        Some(rng.random_range(0..2) as f64)
                    }
                })
                .collect();
            (parse_smiles(s).unwrap(), labels)
        })
        .collect();
    PreparedGraphs::from_dataset(&MoleculeDataset::from_rows(task, rows))
}

pub fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor {
        shape: [rows, cols],
        data: (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

pub fn teachers(g: usize, d: usize, h_lm: usize, h_gnn: usize, rng: &mut Rng) -> TeacherBatch {
    TeacherBatch {
        y_lm: Some(random(g, d, rng)),
        h_lm: Some(random(g, h_lm, rng)),
        y_gnn: Some(random(g, d, rng)),
        h_gnn: Some(random(g, h_gnn, rng)),
    }
}

pub fn with_labeled_batch(data: &PreparedGraphs, rng: &mut Rng) -> GraphBatch {
    loop {
        let idx: Vec<usize> = (0..rng.random_range(2..6)).map(|_| rng.random_range(0..data.len())).collect();
        let b = data.batch(&idx);
        if b.mask.iter().any(|&m| m) {
            return b;
        }
    }
}

pub struct Setup {
    pub kind: TaskKind,
    pub batch: GraphBatch,
    pub params: StackParams,
    pub heads: ProjectionHeads,
    pub teachers: TeacherBatch,
    pub config: DistillConfig,
    pub gcn: bool,
}

impl Setup {
    pub fn random(rng: &mut Rng) -> Setup {
        let classification = rng.random_bool(0.5);
        let (preset, n_tasks) = if classification { ("bace", rng.random_range(1..3)) } else { ("esol", 1) };
        let data = prepared(preset, n_tasks, rng);
        let kind = if classification { TaskKind::Classification } else { TaskKind::Regression };
        let batch = with_labeled_batch(&data, rng);
        let hidden = rng.random_range(2..6);
        let config = NetConfig {
            in_dim: data.feature_width(),
            hidden,
            n_layers: rng.random_range(1..4),
            out_dim: if classification { n_tasks } else { 1 },
        };
        let mut params = StackParams::init(config, rng).unwrap();
        // Zero biases put dead-ReLU rows exactly on the kink, where central
        // differences see half a slope.
        for lin in params.layers.iter_mut().chain([&mut params.head]) {
            lin.b = random(1, lin.b.len(), rng);
        }
        let (h_lm, latent) = (rng.random_range(2..8), rng.random_range(1..5));
        let trainable = rng.random_bool(0.5);
        let heads = ProjectionHeads::init(hidden, h_lm, hidden, latent.min(h_lm).min(hidden), trainable, rng).unwrap();
        let teachers = teachers(batch.n_graphs, config.out_dim, h_lm, hidden, rng);
        let weight = |rng: &mut Rng| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..3.0) };
        let config = DistillConfig {
            alpha: weight(rng),
            beta: weight(rng),
            mode: Some(if rng.random_bool(0.5) { DistillMode::Label } else { DistillMode::Representation }),
            latent_dim: heads.u_mlp.out_dim(),
            teacher_heads_trainable: trainable,
        };
        Setup {
            kind,
            batch,
            params,
            heads,
            teachers,
            config,
            gcn: rng.random_bool(0.5),
        }
    }

    pub fn loss(&self, params: &StackParams, heads: &ProjectionHeads, grads: bool) -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape).unwrap();
        let hv = heads.register(&mut tape).unwrap();
        let out = if self.gcn {
            gcn_forward(&mut tape, &self.batch, &vars).unwrap()
        } else {
            mlp_forward(&mut tape, &self.batch, &vars).unwrap()
        };
        let parts = total_loss(&mut tape, out, &self.batch, &self.teachers, Some(&hv), &self.config, self.kind).unwrap();
        let value = tape.value(parts.total).item();
        if !grads {
            return (value, Vec::new());
        }
        let g = tape.backward(parts.total).unwrap();
        let all = vars.all().into_iter().chain(hv.trainable(heads.teacher_heads_trainable));
        (value, all.map(|v| g.get_or_zeros(v, tape.value(v))).collect())
    }
}

/// Worst relative gap between analytic gradients of the combined objective
/// and central differences, over `probes` random coordinates per tensor.
pub fn max_relative_gradient_error(s: &Setup, probes: usize, rng: &mut Rng) -> f64 {
    let h = 1e-6;
    let (_, analytic) = s.loss(&s.params, &s.heads, true);
    let n_param_tensors = s.params.named().len();
    let mut worst: f64 = 0.0;
    for (k, g) in analytic.iter().enumerate() {
        for _ in 0..probes {
            let j = rng.random_range(0..g.len());
            let shifted = |delta: f64| {
                let (mut p, mut hd) = (s.params.clone(), s.heads.clone());
                if k < n_param_tensors {
                    p.tensors_mut()[k].data[j] += delta;
                } else {
                    hd.tensors_mut()[k - n_param_tensors].data[j] += delta;
                }
                s.loss(&p, &hd, false).0
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            let a = g.data[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4));
        }
    }
    worst
}

/// Pairwise count: correct pairs score 2, ties 1, over `2·P·N`.
pub fn brute_force_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let (mut twice, mut p, mut n) = (0u128, 0u128, 0u128);
    for (i, &yi) in labels.iter().enumerate() {
        if yi > 0.5 {
            p += 1;
        } else {
            n += 1;
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj > 0.5 {
                continue;
            }
            twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice as f64 / (2 * p * n) as f64
}
