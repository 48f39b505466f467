//! The two networks: pose lifting ([`KogTransformer`]) and pose-to-mesh
//! shape estimation ([`GaseNet`]).

mod gase;
mod kog;

pub use gase::{upsample_nodes, ChebConv, GaseNet, GaseNetConfig, GraAttention, NodeUpsample, MESH_BLOCKS};
pub use kog::{KogTransformer, KogTransformerConfig};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::SkeletonGraph;
use crate::nn::{Bound, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Serializable architecture description, tagged by model kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    KogTransformer(KogTransformerConfig),
    GaseNet(GaseNetConfig),
}

impl ModelConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelConfig::KogTransformer(_) => "kog-transformer",
            ModelConfig::GaseNet(_) => "gase-net",
        }
    }

    /// `(nodes, coords)` of one input sample.
    pub fn input_shape(&self) -> (usize, usize) {
        match self {
            ModelConfig::KogTransformer(c) => (c.joints, c.input_dim),
            ModelConfig::GaseNet(c) => (c.joints, 3),
        }
    }

    /// `(nodes, coords)` of one prediction.
    pub fn output_shape(&self) -> (usize, usize) {
        match self {
            ModelConfig::KogTransformer(c) => (c.joints, c.output_dim),
            ModelConfig::GaseNet(c) => (c.vertices(), 3),
        }
    }
}

/// Either network behind one interface.
#[derive(Debug, Clone)]
pub enum Model<T> {
    Kog(KogTransformer<T>),
    Gase(GaseNet<T>),
}

impl<T: Scalar> Model<T> {
    pub fn build(skeleton: &SkeletonGraph, config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            ModelConfig::KogTransformer(c) => Model::Kog(KogTransformer::new(skeleton, c.clone(), seed)?),
            ModelConfig::GaseNet(c) => Model::Gase(GaseNet::new(skeleton, c.clone(), seed)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Kog(m) => ModelConfig::KogTransformer(m.config().clone()),
            Model::Gase(m) => ModelConfig::GaseNet(m.config().clone()),
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        match self {
            Model::Kog(m) => m.store(),
            Model::Gase(m) => m.store(),
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            Model::Kog(m) => m.store_mut(),
            Model::Gase(m) => m.store_mut(),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Model::Kog(m) => m.forward(p, x),
            Model::Gase(m) => m.forward(p, x),
        }
    }

    /// Evaluation-mode forward pass on a `(batch, nodes, coords)` tensor.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.store().bind(&tape);
        let x = tape.constant(input);
        Ok(self.forward(&p, x)?.value())
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        match self {
            Model::Kog(m) => Model::Kog(m.cast()),
            Model::Gase(m) => Model::Gase(m.cast()),
        }
    }
}

#[cfg(test)]
mod tests;
