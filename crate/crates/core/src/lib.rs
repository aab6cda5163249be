//! Distillation of a language-model teacher and a graph-network teacher into
//! a structure-free MLP for molecular property prediction.

pub mod chemgraph;
pub mod datasets;
pub mod tensorcore;
pub mod models;
pub mod evaluation;
pub mod distillation;
pub mod teacherlm;
