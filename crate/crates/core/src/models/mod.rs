//! GCN teacher, student MLP and the latent projection heads.

mod batch;

pub use batch::{normalize_adjacency, GraphBatch, PreparedGraphs};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensorcore::checkpoint::{self, CheckpointError};
use crate::tensorcore::init::{glorot_uniform, orthonormal_columns};
use crate::tensorcore::rng::Rng;
use crate::tensorcore::{Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub out_dim: usize,
}

impl NetConfig {
    /// Three layers of width 32.
    pub fn new(in_dim: usize, out_dim: usize) -> NetConfig {
        NetConfig {
            in_dim,
            hidden: 32,
            n_layers: 3,
            out_dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_dim == 0 || self.hidden == 0 || self.n_layers == 0 || self.out_dim == 0 {
            return Err(ModelError::Config(format!("widths and layer count must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `F·H + H + (L−1)(H·H + H) + H·d + d`.
    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        self.in_dim * h + h + (self.n_layers - 1) * (h * h + h) + h * self.out_dim + self.out_dim
    }
}

/// `x · w + b` with `w: in × out` and `b: 1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Linear {
        Linear {
            w: glorot_uniform(fan_in, fan_out, rng),
            b: Tensor::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: Tensor::zeros(fan_in, fan_out),
            b: Tensor::zeros(1, fan_out),
        }
    }

    /// Semi-orthogonal weights and zero bias.
    pub fn orthogonal(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Linear {
        let w = if fan_out <= fan_in {
            orthonormal_columns(fan_in, fan_out, rng)
        } else {
            orthonormal_columns(fan_out, fan_in, rng).transpose()
        };
        Linear {
            w,
            b: Tensor::zeros(1, fan_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Result<LinearVars, TensorError> {
        let (w, b) = if trainable {
            (tape.param(self.w.clone())?, tape.param(self.b.clone())?)
        } else {
            (tape.constant(self.w.clone())?, tape.constant(self.b.clone())?)
        };
        Ok(LinearVars { w, b })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl LinearVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let xw = tape.matmul(x, self.w)?;
        tape.add_bias(xw, self.b)
    }
}

/// Parameters addressable by stable names, in a fixed order.
pub trait NamedParams {
    fn named(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Layer stack plus prediction head; the GCN and the MLP share this shape.
#[derive(Clone, Debug, PartialEq)]
pub struct StackParams {
    pub config: NetConfig,
    pub layers: Vec<Linear>,
    pub head: Linear,
}

impl StackParams {
    pub fn init(config: NetConfig, rng: &mut Rng) -> Result<StackParams, ModelError> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let fan_in = if l == 0 { config.in_dim } else { config.hidden };
            layers.push(Linear::glorot(fan_in, config.hidden, rng));
        }
        let head = Linear::glorot(config.hidden, config.out_dim, rng);
        Ok(StackParams { config, layers, head })
    }

    pub fn register(&self, tape: &mut Tape) -> Result<StackVars, TensorError> {
        let layers = self
            .layers
            .iter()
            .map(|l| l.register(tape, true))
            .collect::<Result<Vec<_>, _>>()?;
        let head = self.head.register(tape, true)?;
        Ok(StackVars { layers, head })
    }

    /// Registers every tensor as a constant; for inference.
    pub fn register_frozen(&self, tape: &mut Tape) -> Result<StackVars, TensorError> {
        let layers = self
            .layers
            .iter()
            .map(|l| l.register(tape, false))
            .collect::<Result<Vec<_>, _>>()?;
        let head = self.head.register(tape, false)?;
        Ok(StackVars { layers, head })
    }
}

impl StackParams {
    /// Writes every tensor under its [`NamedParams::named`] name.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let named = self.named();
        let entries: Vec<(&str, &Tensor)> = named.iter().map(|(n, t)| (n.as_str(), *t)).collect();
        checkpoint::write_matrices(path, &entries)
    }

    /// Reads a checkpoint written by [`StackParams::save`], checking every
    /// shape against `config`.
    pub fn load(path: &Path, config: NetConfig) -> Result<StackParams, CheckpointError> {
        let entries = checkpoint::read_matrices(path)?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let fan_in = if l == 0 { config.in_dim } else { config.hidden };
            layers.push(Linear {
                w: checkpoint::expect(&entries, &format!("layer{l}.w"), [fan_in, config.hidden])?.clone(),
                b: checkpoint::expect(&entries, &format!("layer{l}.b"), [1, config.hidden])?.clone(),
            });
        }
        let head = Linear {
            w: checkpoint::expect(&entries, "head.w", [config.hidden, config.out_dim])?.clone(),
            b: checkpoint::expect(&entries, "head.b", [1, config.out_dim])?.clone(),
        };
        Ok(StackParams { config, layers, head })
    }
}

impl NamedParams for StackParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, lin) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.w"), &lin.w));
            out.push((format!("layer{l}.b"), &lin.b));
        }
        out.push(("head.w".to_string(), &self.head.w));
        out.push(("head.b".to_string(), &self.head.b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for lin in &mut self.layers {
            out.push(&mut lin.w);
            out.push(&mut lin.b);
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }
}

#[derive(Clone, Debug)]
pub struct StackVars {
    pub layers: Vec<LinearVars>,
    pub head: LinearVars,
}

impl StackVars {
    /// Vars in [`NamedParams::named`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w);
            out.push(l.b);
        }
        out.push(self.head.w);
        out.push(self.head.b);
        out
    }
}

/// GCN teacher parameters.
pub type GcnParams = StackParams;
/// Student MLP parameters.
pub type MlpParams = StackParams;

/// Pooled representation `h` (`g × H`) and prediction `ŷ` (`g × d`).
#[derive(Clone, Copy, Debug)]
pub struct ForwardOut {
    pub h: Var,
    pub y: Var,
}

fn check_width(batch: &GraphBatch, vars: &StackVars, tape: &Tape) -> Result<(), ModelError> {
    let w = tape.value(vars.layers[0].w);
    if w.rows() != batch.x.cols() {
        return Err(ModelError::Tensor(TensorError::Shape {
            op: "input width",
            left: batch.x.shape,
            right: w.shape,
        }));
    }
    Ok(())
}

/// Per layer: `Â · (H W) + b`, ReLU between layers and none after the last;
/// mean pooling per graph, then the prediction head.
pub fn gcn_forward(tape: &mut Tape, batch: &GraphBatch, vars: &StackVars) -> Result<ForwardOut, ModelError> {
    check_width(batch, vars, tape)?;
    let mut h = tape.constant(batch.x.clone())?;
    let last = vars.layers.len() - 1;
    for (l, layer) in vars.layers.iter().enumerate() {
        let hw = tape.matmul(h, layer.w)?;
        let prop = tape.spmm(batch.adjacency.clone(), hw)?;
        h = tape.add_bias(prop, layer.b)?;
        if l < last {
            h = tape.relu(h)?;
        }
    }
    let pooled = tape.segment_mean(h, batch.graph_ids.clone(), batch.n_graphs)?;
    let y = vars.head.apply(tape, pooled)?;
    Ok(ForwardOut { h: pooled, y })
}

/// Per-atom layer stack with the same activation placement as the GCN; the
/// adjacency is never read.
pub fn mlp_forward(tape: &mut Tape, batch: &GraphBatch, vars: &StackVars) -> Result<ForwardOut, ModelError> {
    check_width(batch, vars, tape)?;
    let mut h = tape.constant(batch.x.clone())?;
    let last = vars.layers.len() - 1;
    for (l, layer) in vars.layers.iter().enumerate() {
        h = layer.apply(tape, h)?;
        if l < last {
            h = tape.relu(h)?;
        }
    }
    let pooled = tape.segment_mean(h, batch.graph_ids.clone(), batch.n_graphs)?;
    let y = vars.head.apply(tape, pooled)?;
    Ok(ForwardOut { h: pooled, y })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Gcn,
    Mlp,
}

/// A trained network ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: StackParams,
}

impl Network {
    /// Pooled representations and predictions for a batch.
    pub fn predict(&self, batch: &GraphBatch) -> Result<(Tensor, Tensor), ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.register_frozen(&mut tape)?;
        let out = match self.arch {
            Architecture::Gcn => gcn_forward(&mut tape, batch, &vars)?,
            Architecture::Mlp => mlp_forward(&mut tape, batch, &vars)?,
        };
        Ok((tape.value(out.h).clone(), tape.value(out.y).clone()))
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }
}

/// Maps student and teacher representations into a shared latent space.
/// Teacher-side maps are frozen unless `teacher_heads_trainable`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHeads {
    pub u_mlp: Linear,
    pub u_lm: Linear,
    pub u_gnn: Linear,
    pub teacher_heads_trainable: bool,
}

impl ProjectionHeads {
    pub fn init(
        student_dim: usize,
        lm_dim: usize,
        gnn_dim: usize,
        latent_dim: usize,
        teacher_heads_trainable: bool,
        rng: &mut Rng,
    ) -> Result<ProjectionHeads, ModelError> {
        if [student_dim, lm_dim, gnn_dim, latent_dim].contains(&0) {
            return Err(ModelError::Config("projection widths must be positive".into()));
        }
        let u_mlp = Linear::glorot(student_dim, latent_dim, rng);
        let (u_lm, u_gnn) = if teacher_heads_trainable {
            (Linear::glorot(lm_dim, latent_dim, rng), Linear::glorot(gnn_dim, latent_dim, rng))
        } else {
            (Linear::orthogonal(lm_dim, latent_dim, rng), Linear::orthogonal(gnn_dim, latent_dim, rng))
        };
        Ok(ProjectionHeads {
            u_mlp,
            u_lm,
            u_gnn,
            teacher_heads_trainable,
        })
    }

    pub fn register(&self, tape: &mut Tape) -> Result<HeadVars, TensorError> {
        let t = self.teacher_heads_trainable;
        Ok(HeadVars {
            u_mlp: self.u_mlp.register(tape, true)?,
            u_lm: self.u_lm.register(tape, t)?,
            u_gnn: self.u_gnn.register(tape, t)?,
        })
    }
}

impl NamedParams for ProjectionHeads {
    /// Trainable tensors only.
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("u_mlp.w".to_string(), &self.u_mlp.w), ("u_mlp.b".to_string(), &self.u_mlp.b)];
        if self.teacher_heads_trainable {
            out.push(("u_lm.w".to_string(), &self.u_lm.w));
            out.push(("u_lm.b".to_string(), &self.u_lm.b));
            out.push(("u_gnn.w".to_string(), &self.u_gnn.w));
            out.push(("u_gnn.b".to_string(), &self.u_gnn.b));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.u_mlp.w, &mut self.u_mlp.b];
        if self.teacher_heads_trainable {
            out.push(&mut self.u_lm.w);
            out.push(&mut self.u_lm.b);
            out.push(&mut self.u_gnn.w);
            out.push(&mut self.u_gnn.b);
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub u_mlp: LinearVars,
    pub u_lm: LinearVars,
    pub u_gnn: LinearVars,
}

impl HeadVars {
    /// Vars matching [`NamedParams::named`] for the heads.
    pub fn trainable(&self, teacher_heads_trainable: bool) -> Vec<Var> {
        let mut out = vec![self.u_mlp.w, self.u_mlp.b];
        if teacher_heads_trainable {
            out.extend([self.u_lm.w, self.u_lm.b, self.u_gnn.w, self.u_gnn.b]);
        }
        out
    }
}
