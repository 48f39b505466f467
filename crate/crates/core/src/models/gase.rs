use serde::{Deserialize, Serialize};

use crate::error::{KogError, Result};
use crate::graph::{build_scaled_laplacian, ScaledLaplacian, SkeletonGraph};
use crate::nn::{init_weight, uniform_tensor, xavier_bound, Bound, LayerNorm, Linear, ParamId, ParamStore};
use crate::tensor::{seeded_rng, KogRng, Scalar, Tensor, Var};

/// Spectral graph convolution `y = sum_k T_k(L) x W_k + b` with the
/// Chebyshev recurrence `T_0 = I`, `T_1 = L`, `T_k = 2 L T_{k-1} - T_{k-2}`.
/// `order` is the number of polynomial terms.
#[derive(Debug, Clone)]
pub struct ChebConv {
    pub weights: Vec<ParamId>,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl ChebConv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut KogRng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        order: usize,
    ) -> Result<Self> {
        if order < 1 {
            return Err(KogError::Config("Chebyshev order must be >= 1".into()));
        }
        let weights = (0..order)
            .map(|k| store.add(format!("{name}.theta.{k}"), init_weight(rng, in_dim, out_dim)))
            .collect::<Result<Vec<_>>>()?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weights,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn order(&self) -> usize {
        self.weights.len()
    }

    /// `x` is `(.., nodes, in_dim)`.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        laplacian: &ScaledLaplacian,
    ) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() < 2
            || shape[shape.len() - 2] != laplacian.len()
            || shape[shape.len() - 1] != self.in_dim
        {
            return Err(KogError::shape(
                "chebyshev_conv",
                format!(
                    "input {shape:?}, expected (.., {}, {})",
                    laplacian.len(),
                    self.in_dim
                ),
            ));
        }
        let n = laplacian.len();
        let tape = x.tape();
        let lap = tape.constant_from(
            &[n, n],
            laplacian.as_slice().iter().map(|&v| T::of(v)).collect(),
        )?;
        let mut out = x.matmul(p.var(self.weights[0]))?;
        let (mut prev, mut cur) = (x, x);
        for (k, &w) in self.weights.iter().enumerate().skip(1) {
            let next = if k == 1 {
                lap.mix_nodes(x)?
            } else {
                lap.mix_nodes(cur)?.scale(T::of(2.0)).sub(prev)?
            };
            prev = cur;
            cur = next;
            out = out.add(cur.matmul(p.var(w))?)?;
        }
        out.add_tiled(p.var(self.bias))
    }
}

/// Self-attention with a learnable additive `(nodes, nodes)` score bias.
#[derive(Debug, Clone)]
pub struct GraAttention {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub score_bias: ParamId,
    pub nodes: usize,
    pub dim: usize,
    pub dropout: f64,
}

impl GraAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut KogRng,
        name: &str,
        nodes: usize,
        dim: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Self {
            w_query: store.add(format!("{name}.w_query"), init_weight(rng, dim, dim))?,
            w_key: store.add(format!("{name}.w_key"), init_weight(rng, dim, dim))?,
            w_value: store.add(format!("{name}.w_value"), init_weight(rng, dim, dim))?,
            score_bias: store.add(format!("{name}.score_bias"), Tensor::zeros(&[nodes, nodes]))?,
            nodes,
            dim,
            dropout,
        })
    }

    /// Attention part only, `(batch, nodes, dim)` in and out.
    pub fn attend<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.nodes || shape[2] != self.dim {
            return Err(KogError::shape(
                "gra_attention",
                format!("input {shape:?}, expected (batch, {}, {})", self.nodes, self.dim),
            ));
        }
        let q = x.matmul(p.var(self.w_query))?;
        let k = x.matmul(p.var(self.w_key))?;
        let v = x.matmul(p.var(self.w_value))?;
        q.bmm_t(k)?
            .scale(T::of(1.0 / (self.dim as f64).sqrt()))
            .add_tiled(p.var(self.score_bias))?
            .softmax()
            .dropout(self.dropout)?
            .bmm(v)
    }
}

/// Learned linear map on the node axis, `(.., l_in, d) -> (.., l_out, d)`.
#[derive(Debug, Clone, Copy)]
pub struct NodeUpsample {
    pub weight: ParamId,
    pub nodes_in: usize,
    pub nodes_out: usize,
}

impl NodeUpsample {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut KogRng,
        name: &str,
        nodes_in: usize,
        nodes_out: usize,
    ) -> Result<Self> {
        if nodes_out <= nodes_in {
            return Err(KogError::Config(format!(
                "upsampling must grow the node count, got {nodes_in} -> {nodes_out}"
            )));
        }
        let bound = xavier_bound(nodes_in, nodes_out);
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(rng, &[nodes_out, nodes_in], bound),
        )?;
        Ok(Self {
            weight,
            nodes_in,
            nodes_out,
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        p.var(self.weight).mix_nodes(x)
    }
}

/// Applies a fixed `(l_out, l_in)` node-mixing matrix without parameters.
pub fn upsample_nodes<'t, T: Scalar>(x: Var<'t, T>, weights: Var<'t, T>) -> Result<Var<'t, T>> {
    let (ws, xs) = (weights.shape(), x.shape());
    if ws.len() != 2 || xs.len() < 2 {
        return Err(KogError::shape("upsample_nodes", format!("{ws:?} vs {xs:?}")));
    }
    if ws[0] <= ws[1] {
        return Err(KogError::Config(format!(
            "upsampling must grow the node count, got {} -> {}",
            ws[1], ws[0]
        )));
    }
    weights.mix_nodes(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaseNetConfig {
    pub dim: usize,
    pub dropout: f64,
    pub joints: usize,
    /// Node counts: the joint count followed by the output size of each of
    /// the five blocks, strictly increasing.
    pub schedule: Vec<usize>,
    pub cheb_order: usize,
}

impl Default for GaseNetConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            dropout: 0.2,
            joints: 21,
            schedule: vec![21, 48, 96, 192, 389, 778],
            cheb_order: 2,
        }
    }
}

pub const MESH_BLOCKS: usize = 5;

impl GaseNetConfig {
    pub fn vertices(&self) -> usize {
        *self.schedule.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.len() != MESH_BLOCKS + 1 {
            return Err(KogError::Config(format!(
                "node schedule needs {} entries (joints + {MESH_BLOCKS} blocks), got {}",
                MESH_BLOCKS + 1,
                self.schedule.len()
            )));
        }
        if self.schedule[0] != self.joints {
            return Err(KogError::Config(format!(
                "schedule starts at {} but the skeleton has {} joints",
                self.schedule[0], self.joints
            )));
        }
        if self.schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KogError::Config(format!(
                "node schedule {:?} is not strictly increasing",
                self.schedule
            )));
        }
        if self.dim == 0 || self.cheb_order == 0 {
            return Err(KogError::Config("dim and Chebyshev order must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(KogError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct MeshBlock {
    norm: LayerNorm,
    attn: GraAttention,
    up: NodeUpsample,
}

/// Chebyshev convolution on the joint graph, five
/// `[GraAttention -> node upsampling]` blocks and a linear read-out.
#[derive(Debug, Clone)]
pub struct GaseNet<T> {
    config: GaseNetConfig,
    store: ParamStore<T>,
    cheb: ChebConv,
    blocks: Vec<MeshBlock>,
    output: Linear,
    laplacian: ScaledLaplacian,
}

impl<T: Scalar> GaseNet<T> {
    pub fn new(skeleton: &SkeletonGraph, config: GaseNetConfig, seed: u64) -> Result<Self> {
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
        let d = config.dim;
        let cheb = ChebConv::new(&mut store, &mut rng, "cheb", 3, d, config.cheb_order)?;
        let blocks = config
            .schedule
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Ok(MeshBlock {
                    norm: LayerNorm::new(&mut store, &format!("blocks.{i}.norm"), d)?,
                    attn: GraAttention::new(
                        &mut store,
                        &mut rng,
                        &format!("blocks.{i}.attn"),
                        w[0],
                        d,
                        config.dropout,
                    )?,
                    up: NodeUpsample::new(&mut store, &mut rng, &format!("blocks.{i}.up"), w[0], w[1])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let output = Linear::new(&mut store, &mut rng, "output", d, 3)?;
        Ok(Self {
            laplacian: build_scaled_laplacian(skeleton),
            config,
            store,
            cheb,
            blocks,
            output,
        })
    }

    pub fn config(&self) -> &GaseNetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// `(batch, joints, 3) -> (batch, vertices, 3)`.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.forward_trace(p, x).map(|(y, _)| y)
    }

    /// Forward pass that also reports the node count after every block.
    pub fn forward_trace<'t>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Vec<usize>)> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.config.joints || shape[2] != 3 {
            return Err(KogError::shape(
                "gase_net",
                format!("input {shape:?}, expected (batch, {}, 3)", self.config.joints),
            ));
        }
        let mut h = self.cheb.forward(p, x, &self.laplacian)?;
        let mut trace = vec![h.shape()[1]];
        for block in &self.blocks {
            let y = block.attn.attend(p, block.norm.forward(p, h)?)?;
            h = h.add(y.dropout(self.config.dropout)?)?;
            h = block.up.forward(p, h)?;
            trace.push(h.shape()[1]);
        }
        Ok((self.output.forward(p, h)?, trace))
    }

    pub fn cast<U: Scalar>(&self) -> GaseNet<U> {
        GaseNet {
            config: self.config.clone(),
            store: self.store.cast(),
            cheb: self.cheb.clone(),
            blocks: self.blocks.clone(),
            output: self.output,
            laplacian: self.laplacian.clone(),
        }
    }
}
