use serde::{Deserialize, Serialize};

use crate::attention::{GrMsa, KogMsa};
use crate::error::{KogError, Result};
use crate::graph::{
    build_order_masks, build_relative_index_map, build_signed_distance, table_size, OrderMaskSet,
    RelativeIndexMap, SkeletonGraph,
};
use crate::nn::{Bound, LayerNorm, Linear, Mlp, ParamStore};
use crate::tensor::{seeded_rng, Scalar, Var};

/// Hyperparameters of the pose-lifting transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KogTransformerConfig {
    pub num_layers: usize,
    pub dim: usize,
    pub heads: usize,
    /// Highest neighbor order K.
    pub order: usize,
    /// Relative distance clamp.
    pub delta: usize,
    pub directed: bool,
    pub dropout: f64,
    pub joints: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Default for KogTransformerConfig {
    fn default() -> Self {
        Self {
            num_layers: 5,
            dim: 128,
            heads: 4,
            order: 4,
            delta: 2,
            directed: true,
            dropout: 0.1,
            joints: 16,
            input_dim: 2,
            output_dim: 3,
        }
    }
}

impl KogTransformerConfig {
    /// Reduced model: d = 64, K = 5.
    pub fn mini() -> Self {
        Self {
            dim: 64,
            order: 5,
            ..Self::default()
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        2 * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(KogError::Config("num_layers must be >= 1".into()));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(KogError::Config(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.delta < 1 {
            return Err(KogError::Config("delta must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(KogError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.joints == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(KogError::Config("joint and coordinate counts must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    ///
    /// Per layer, with `d` the model dimension, `R` the positional table
    /// rows and `h = 2d`:
    /// two KOG-MSA sublayers at `(3 + K + 1) d^2 + (K + 1)` each, one GR-MSA
    /// at `3 d^2 + 2 R d`, one MLP at `2 d h + h + d`, and four layer norms
    /// at `2d`. Around the stack: input linear `(in + 1) d`, final norm `2d`,
    /// output linear `(d + 1) out`.
    pub fn parameter_count(&self) -> usize {
        let d = self.dim;
        let k1 = self.order + 1;
        let rows = table_size(self.delta, self.directed);
        let h = self.mlp_hidden();
        let kog = (3 + k1) * d * d + k1;
        let gr = 3 * d * d + 2 * rows * d;
        let mlp = 2 * d * h + h + d;
        let norms = 4 * 2 * d;
        let layer = 2 * kog + gr + mlp + norms;
        self.num_layers * layer
            + (self.input_dim + 1) * d
            + 2 * d
            + (d + 1) * self.output_dim
    }
}

#[derive(Debug, Clone)]
struct Residual<L> {
    norm: LayerNorm,
    inner: L,
}

#[derive(Debug, Clone)]
struct KogLayer {
    kog: [Residual<KogMsa>; 2],
    gr: Residual<GrMsa>,
    mlp: Residual<Mlp>,
}

/// Stack of `[KOG-MSA, KOG-MSA, GR-MSA, MLP]` pre-norm residual layers
/// between an input and an output linear map.
#[derive(Debug, Clone)]
pub struct KogTransformer<T> {
    config: KogTransformerConfig,
    store: ParamStore<T>,
    input: Linear,
    layers: Vec<KogLayer>,
    final_norm: LayerNorm,
    output: Linear,
    masks: OrderMaskSet,
    index_map: RelativeIndexMap,
}

impl<T: Scalar> KogTransformer<T> {
    pub fn new(skeleton: &SkeletonGraph, config: KogTransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if skeleton.num_nodes() != config.joints {
            return Err(KogError::Config(format!(
                "skeleton has {} joints, config expects {}",
                skeleton.num_nodes(),
                config.joints
            )));
        }
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let (d, c) = (config.dim, &config);
        let input = Linear::new(&mut store, &mut rng, "input", c.input_dim, d)?;
        let mut layers = Vec::with_capacity(c.num_layers);
        for i in 0..c.num_layers {
            let name = format!("layers.{i}");
            let mut kog_sub = |j: usize, store: &mut ParamStore<T>| -> Result<Residual<KogMsa>> {
                Ok(Residual {
                    norm: LayerNorm::new(store, &format!("{name}.kog.{j}.norm"), d)?,
                    inner: KogMsa::new(
                        store,
                        &mut rng,
                        &format!("{name}.kog.{j}.attn"),
                        d,
                        c.heads,
                        c.order,
                        c.dropout,
                    )?,
                })
            };
            let kog = [kog_sub(0, &mut store)?, kog_sub(1, &mut store)?];
            let gr = Residual {
                norm: LayerNorm::new(&mut store, &format!("{name}.gr.norm"), d)?,
                inner: GrMsa::new(
                    &mut store,
                    &mut rng,
                    &format!("{name}.gr.attn"),
                    d,
                    c.heads,
                    c.delta,
                    c.directed,
                    c.dropout,
                )?,
            };
            let mlp = Residual {
                norm: LayerNorm::new(&mut store, &format!("{name}.mlp.norm"), d)?,
                inner: Mlp::new(
                    &mut store,
                    &mut rng,
                    &format!("{name}.mlp.ffn"),
                    d,
                    c.mlp_hidden(),
                    c.dropout,
                )?,
            };
            layers.push(KogLayer { kog, gr, mlp });
        }
        let final_norm = LayerNorm::new(&mut store, "final_norm", d)?;
        let output = Linear::new(&mut store, &mut rng, "output", d, c.output_dim)?;

        let distances = build_signed_distance(skeleton);
        let masks = build_order_masks(skeleton, c.order);
        let index_map = build_relative_index_map(&distances, c.delta, c.directed)?;
        Ok(Self {
            config,
            store,
            input,
            layers,
            final_norm,
            output,
            masks,
            index_map,
        })
    }

    pub fn config(&self) -> &KogTransformerConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn masks(&self) -> &OrderMaskSet {
        &self.masks
    }

    pub fn index_map(&self) -> &RelativeIndexMap {
        &self.index_map
    }

    pub fn kog_count(&self) -> usize {
        self.layers.len() * 2
    }

    pub fn gr_count(&self) -> usize {
        self.layers.len()
    }

    pub fn mlp_count(&self) -> usize {
        self.layers.len()
    }

    /// `(batch, joints, in) -> (batch, joints, out)`.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let c = &self.config;
        if shape.len() != 3 || shape[1] != c.joints || shape[2] != c.input_dim {
            return Err(KogError::shape(
                "kog_transformer",
                format!(
                    "input {shape:?}, expected (batch, {}, {})",
                    c.joints, c.input_dim
                ),
            ));
        }
        let mut h = self.input.forward(p, x)?;
        for layer in &self.layers {
            for sub in &layer.kog {
                let y = sub.inner.forward(p, sub.norm.forward(p, h)?, &self.masks)?;
                h = h.add(y.dropout(c.dropout)?)?;
            }
            let y = layer
                .gr
                .inner
                .forward(p, layer.gr.norm.forward(p, h)?, &self.index_map)?;
            h = h.add(y.dropout(c.dropout)?)?;
            let y = layer.mlp.inner.forward(p, layer.mlp.norm.forward(p, h)?)?;
            h = h.add(y.dropout(c.dropout)?)?;
        }
        let h = self.final_norm.forward(p, h)?;
        self.output.forward(p, h)
    }

    /// Fusion vectors `c` of every KOG-MSA sublayer, labelled
    /// `"<layer>-<sublayer>"` from 1.
    pub fn fusion_weights(&self) -> Vec<(String, Vec<f64>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| {
                layer.kog.iter().enumerate().map(move |(j, sub)| {
                    (
                        format!("{}-{}", i + 1, j + 1),
                        self.store.get(sub.inner.fusion).to_f64_vec(),
                    )
                })
            })
            .collect()
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> KogTransformer<U> {
        KogTransformer {
            config: self.config.clone(),
            store: self.store.cast(),
            input: self.input,
            layers: self.layers.clone(),
            final_norm: self.final_norm,
            output: self.output,
            masks: self.masks.clone(),
            index_map: self.index_map.clone(),
        }
    }
}
