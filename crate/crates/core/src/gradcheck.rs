//! Central finite-difference checks of every tape adjoint, the attention
//! sublayers and small end-to-end models, in 64-bit.

use std::rc::Rc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{GrMsa, KogMsa};
use crate::error::Result;
use crate::graph::{
    build_order_masks, build_relative_index_map, build_signed_distance, masked_value, SkeletonGraph,
};
use crate::models::{GaseNet, GaseNetConfig, KogTransformer, KogTransformerConfig};
use crate::nn::{Bound, ParamStore, LAYER_NORM_EPS};
use crate::tensor::{seeded_rng, FaultKind, KogRng, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSettings {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        Self {
            instances: 20,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub instances: usize,
    /// Largest norm-wise relative error over all instances.
    pub worst_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
    pub elapsed_secs: f64,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }
}

/// Fixed projection weights that turn any output into a scalar loss.
fn probe<'t>(out: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let shape = out.shape();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.7548776662).fract() * 2.0 - 1.0).collect();
    let w = out.tape().constant_from(&shape, w)?;
    Ok(out.mul(w)?.sum())
}

type LossFn<'a> = dyn for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> + 'a;

/// One problem: differentiable inputs, optional parameters and a loss.
struct Instance<'a> {
    inputs: Vec<Tensor<f64>>,
    store: ParamStore<f64>,
    loss: Box<LossFn<'a>>,
}

const TAPE_SEED: u64 = 0xd0;

impl Instance<'_> {
    fn eval(&self, inputs: &[Tensor<f64>], store: &ParamStore<f64>) -> Result<f64> {
        let tape = Tape::training(TAPE_SEED);
        let bound = store.bind(&tape);
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t)).collect();
        Ok((self.loss)(&tape, &bound, &vars)?.value().data()[0])
    }

    /// Norm-wise relative error between the adjoint and central differences,
    /// over all inputs and parameters together.
    fn error(mut self, step: f64, fault: Option<FaultKind>) -> Result<f64> {
        let tape = Tape::training(TAPE_SEED).with_fault(fault);
        let bound = self.store.bind(&tape);
        let vars: Vec<_> = self.inputs.iter().map(|t| tape.leaf(t)).collect();
        let loss = (self.loss)(&tape, &bound, &vars)?;
        tape.backward(loss)?;
        let mut analytic = Vec::new();
        for (v, t) in vars.iter().zip(&self.inputs) {
            analytic.extend(tape.grad(*v).map_or_else(|| vec![0.0; t.len()], |g| g.into_data()));
        }
        self.store.harvest_grads(&tape, &bound);
        for p in self.store.iter() {
            analytic.extend(p.tensor.grad.clone().expect("harvested"));
        }
        drop(bound);
        self.store.zero_grads();

        let mut numeric = Vec::with_capacity(analytic.len());
        let mut inputs = self.inputs.clone();
        for i in 0..inputs.len() {
            for j in 0..inputs[i].len() {
                let x0 = inputs[i].data()[j];
                inputs[i].data_mut()[j] = x0 + step;
                let up = self.eval(&inputs, &self.store)?;
                inputs[i].data_mut()[j] = x0 - step;
                let down = self.eval(&inputs, &self.store)?;
                inputs[i].data_mut()[j] = x0;
                numeric.push((up - down) / (2.0 * step));
            }
        }
        let mut store = self.store.clone();
        let ids: Vec<_> = store.iter().map(|p| store.id_of(&p.name).expect("own name")).collect();
        for id in ids {
            for j in 0..store.get(id).len() {
                let x0 = store.get(id).data()[j];
                store.get_mut(id).data_mut()[j] = x0 + step;
                let up = self.eval(&self.inputs, &store)?;
                store.get_mut(id).data_mut()[j] = x0 - step;
                let down = self.eval(&self.inputs, &store)?;
                store.get_mut(id).data_mut()[j] = x0;
                numeric.push((up - down) / (2.0 * step));
            }
        }
        Ok(relative_error(&analytic, &numeric))
    }
}

/// `||a - b|| / max(||a||, ||b||)`, with a floor on the denominator so two
/// vanishing gradients compare equal.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied())).max(1e-8);
    diff / scale
}

fn rand_tensor(rng: &mut KogRng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &v).expect("valid shape")
}

fn dim(rng: &mut KogRng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

fn simple<'a>(
    inputs: Vec<Tensor<f64>>,
    f: impl for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> + 'a,
) -> Instance<'a> {
    Instance {
        inputs,
        store: ParamStore::new(),
        loss: Box::new(move |tape, _, v| probe(f(tape, v)?)),
    }
}

fn random_tree(rng: &mut KogRng, lo: usize, hi: usize) -> SkeletonGraph {
    let n = dim(rng, lo, hi);
    SkeletonGraph::random_tree(n, rng).expect("valid size")
}

type Builder = fn(&mut KogRng) -> Instance<'static>;

fn cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("matmul", |r| {
            let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 5), dim(r, 1, 4));
            let lead = dim(r, 1, 3);
            simple(vec![rand_tensor(r, &[lead, m, k]), rand_tensor(r, &[k, n])], |_, v| v[0].matmul(v[1]))
        }),
        ("matmul_t", |r| {
            let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 5), dim(r, 1, 4));
            simple(vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[n, k])], |_, v| v[0].matmul_t(v[1]))
        }),
        ("bmm", |r| {
            let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
            simple(vec![rand_tensor(r, &[b, m, k]), rand_tensor(r, &[b, k, n])], |_, v| v[0].bmm(v[1]))
        }),
        ("bmm_t", |r| {
            let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
            simple(vec![rand_tensor(r, &[b, m, k]), rand_tensor(r, &[b, n, k])], |_, v| v[0].bmm_t(v[1]))
        }),
        ("transpose", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4)];
            simple(vec![rand_tensor(r, &s)], |_, v| v[0].transpose())
        }),
        ("add", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            simple(vec![rand_tensor(r, &s), rand_tensor(r, &s)], |_, v| v[0].add(v[1]))
        }),
        ("sub", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            simple(vec![rand_tensor(r, &s), rand_tensor(r, &s)], |_, v| v[0].sub(v[1]))
        }),
        ("mul", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            simple(vec![rand_tensor(r, &s), rand_tensor(r, &s)], |_, v| v[0].mul(v[1]))
        }),
        ("scale", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            let c = r.gen_range(-2.0..2.0);
            simple(vec![rand_tensor(r, &s)], move |_, v| Ok(v[0].scale(c)))
        }),
        ("add_tiled", |r| {
            let (b, m, n) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 4));
            simple(vec![rand_tensor(r, &[b, m, n]), rand_tensor(r, &[m, n])], |_, v| v[0].add_tiled(v[1]))
        }),
        ("scale_by", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            let k = dim(r, 1, 4);
            let idx = r.gen_range(0..k);
            simple(vec![rand_tensor(r, &s), rand_tensor(r, &[k])], move |_, v| v[0].scale_by(v[1], idx))
        }),
        ("softmax", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 3), dim(r, 2, 5)];
            simple(vec![rand_tensor(r, &s)], |_, v| Ok(v[0].softmax()))
        }),
        ("masked_softmax", |r| {
            let (b, l) = (dim(r, 1, 3), dim(r, 2, 5));
            // each row keeps its diagonal entry; everything else is masked at random
            let mask: Vec<f64> = (0..l * l)
                .map(|i| if i / l == i % l || r.gen_bool(0.5) { 0.0 } else { masked_value::<f64>() })
                .collect();
            let mask = Tensor::from_f64(&[l, l], &mask).expect("square");
            simple(vec![rand_tensor(r, &[b, l, l])], move |t, v| {
                Ok(v[0].add_tiled(t.constant(&mask))?.softmax())
            })
        }),
        ("grouped_attention", |r| {
            let g = random_tree(r, 2, 6);
            let order = dim(r, 0, 3);
            let groups: Rc<[u8]> = build_order_masks(&g, order).groups().into();
            let heads = dim(r, 1, 2);
            let d = heads * dim(r, 1, 3);
            let (b, l) = (dim(r, 1, 2), g.num_nodes());
            let drop = if r.gen_bool(0.5) { 0.2 } else { 0.0 };
            let scale = 1.0 / ((d / heads) as f64).sqrt();
            let shape = [b, l, d];
            simple(
                vec![rand_tensor(r, &shape), rand_tensor(r, &shape), rand_tensor(r, &shape)],
                move |_, v| v[0].grouped_attention(v[1], v[2], heads, scale, groups.clone(), order + 1, drop),
            )
        }),
        ("gather_rows", |r| {
            let rows = dim(r, 1, 5);
            let idx: Rc<[usize]> = (0..dim(r, 1, 8)).map(|_| r.gen_range(0..rows)).collect();
            let w = dim(r, 1, 4);
            simple(vec![rand_tensor(r, &[rows, w])], move |_, v| v[0].gather_rows(idx.clone()))
        }),
        ("scatter_add_rows", |r| {
            let rows = dim(r, 1, 5);
            let n = dim(r, 1, 8);
            let idx: Rc<[usize]> = (0..n).map(|_| r.gen_range(0..rows)).collect();
            let w = dim(r, 1, 4);
            simple(vec![rand_tensor(r, &[n, w])], move |_, v| {
                v[0].scatter_add_rows(idx.clone(), rows)
            })
        }),
        ("layer_norm", |r| {
            let (b, d) = (dim(r, 1, 4), dim(r, 2, 6));
            simple(
                vec![rand_tensor(r, &[b, d]), rand_tensor(r, &[d]), rand_tensor(r, &[d])],
                |_, v| v[0].layer_norm(v[1], v[2], LAYER_NORM_EPS),
            )
        }),
        ("dropout", |r| {
            let s = [dim(r, 1, 4), dim(r, 1, 6)];
            let rate = r.gen_range(0.05..0.6);
            simple(vec![rand_tensor(r, &s)], move |_, v| v[0].dropout(rate))
        }),
        ("concat", |r| {
            let b = dim(r, 1, 3);
            let (w1, w2) = (dim(r, 1, 3), dim(r, 1, 3));
            simple(vec![rand_tensor(r, &[b, w1]), rand_tensor(r, &[b, w2])], |_, v| Var::concat(v))
        }),
        ("slice_last", |r| {
            let w = dim(r, 2, 6);
            let start = r.gen_range(0..w);
            let len = r.gen_range(1..=w - start);
            let b = dim(r, 1, 3);
            simple(vec![rand_tensor(r, &[b, w])], move |_, v| v[0].slice_last(start, len))
        }),
        ("split_last", |r| {
            let widths = vec![dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 2)];
            let total = widths.iter().sum();
            let b = dim(r, 1, 3);
            simple(vec![rand_tensor(r, &[b, total])], move |_, v| {
                let parts = v[0].split_last(&widths)?;
                parts[0].scale(0.5).sum().add(parts[2].mul(parts[2])?.sum())?.add(probe(parts[1])?)
            })
        }),
        ("reshape", |r| {
            let (a, b) = (dim(r, 1, 4), dim(r, 1, 4));
            simple(vec![rand_tensor(r, &[a, b])], move |_, v| v[0].reshape(&[b, a]))
        }),
        ("sum", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            simple(vec![rand_tensor(r, &s)], |_, v| Ok(v[0].mul(v[0])?.sum()))
        }),
        ("mean", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 4)];
            simple(vec![rand_tensor(r, &s)], |_, v| Ok(v[0].mul(v[0])?.mean()))
        }),
        ("squared_error", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 3), 3];
            simple(vec![rand_tensor(r, &s), rand_tensor(r, &s)], |_, v| v[0].squared_error(v[1]))
        }),
        ("gelu", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 5)];
            let mut x = rand_tensor(r, &s);
            x.data_mut().iter_mut().for_each(|v| *v *= 3.0);
            simple(vec![x], |_, v| Ok(v[0].gelu()))
        }),
        ("mix_nodes", |r| {
            let (p, q, d, b) = (dim(r, 1, 5), dim(r, 1, 4), dim(r, 1, 3), dim(r, 1, 2));
            simple(vec![rand_tensor(r, &[p, q]), rand_tensor(r, &[b, q, d])], |_, v| v[0].mix_nodes(v[1]))
        }),
        ("gr_msa", |r| {
            let g = random_tree(r, 2, 6);
            let directed = r.gen_bool(0.5);
            let delta = dim(r, 1, 3);
            let heads = dim(r, 1, 2);
            let d = heads * dim(r, 1, 2);
            let mut store = ParamStore::new();
            let layer = GrMsa::new(&mut store, r, "gr", d, heads, delta, directed, 0.1).expect("valid layer");
            let idx = build_relative_index_map(&build_signed_distance(&g), delta, directed).expect("valid delta");
            let b = dim(r, 1, 2);
            let x = rand_tensor(r, &[b, g.num_nodes(), d]);
            Instance {
                inputs: vec![x],
                store,
                loss: Box::new(move |_, p, v| probe(layer.forward(p, v[0], &idx)?)),
            }
        }),
        ("kog_msa", |r| {
            let g = random_tree(r, 2, 6);
            let order = dim(r, 0, 3);
            let heads = dim(r, 1, 2);
            let d = heads * dim(r, 1, 2);
            let mut store = ParamStore::new();
            let layer = KogMsa::new(&mut store, r, "kog", d, heads, order, 0.1).expect("valid layer");
            // move c off its uniform start so every order's weight is distinct
            let c = store.id_of("kog.fusion").expect("fusion");
            store.get_mut(c).data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.5..0.5));
            let masks = build_order_masks(&g, order);
            let b = dim(r, 1, 2);
            let x = rand_tensor(r, &[b, g.num_nodes(), d]);
            Instance {
                inputs: vec![x],
                store,
                loss: Box::new(move |_, p, v| probe(layer.forward(p, v[0], &masks)?)),
            }
        }),
        ("kog_transformer", |r| {
            let chain = SkeletonGraph::chain(5).expect("chain");
            let config = KogTransformerConfig {
                num_layers: 1,
                dim: 8,
                heads: 2,
                order: 2,
                delta: 2,
                directed: true,
                dropout: 0.1,
                joints: 5,
                input_dim: 2,
                output_dim: 3,
            };
            let model = KogTransformer::<f64>::new(&chain, config, r.gen()).expect("valid model");
            let store = model.store().clone();
            let x = rand_tensor(r, &[2, 5, 2]);
            let y = rand_tensor(r, &[2, 5, 3]);
            Instance {
                inputs: vec![x],
                store,
                loss: Box::new(move |t, p, v| model.forward(p, v[0])?.squared_error(t.constant(&y))),
            }
        }),
        ("gase_net", |r| {
            let g = random_tree(r, 4, 5);
            let l = g.num_nodes();
            let config = GaseNetConfig {
                dim: 4,
                dropout: 0.1,
                joints: l,
                schedule: (0..6).map(|i| l + i).collect(),
                cheb_order: 2,
            };
            let model = GaseNet::<f64>::new(&g, config, r.gen()).expect("valid model");
            let mut store = model.store().clone();
            // nonzero score biases so their adjoint is exercised away from zero
            let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
            for name in names.iter().filter(|n| n.ends_with("score_bias")) {
                let id = store.id_of(name).expect("own name");
                store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.5..0.5));
            }
            let x = rand_tensor(r, &[1, l, 3]);
            let y = rand_tensor(r, &[1, l + 5, 3]);
            Instance {
                inputs: vec![x],
                store,
                loss: Box::new(move |t, p, v| model.forward(p, v[0])?.squared_error(t.constant(&y))),
            }
        }),
    ]
}

pub fn case_names() -> Vec<&'static str> {
    cases().into_iter().map(|(n, _)| n).collect()
}

/// Runs the cases whose names pass `filter`, each on
/// `settings.instances` random instances. A `fault` corrupts the matching
/// adjoint on the analytic pass only.
pub fn run_suite(
    settings: &GradCheckSettings,
    fault: Option<FaultKind>,
    filter: impl Fn(&str) -> bool,
) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut out = Vec::new();
    for (k, (name, build)) in cases().into_iter().enumerate() {
        if !filter(name) {
            continue;
        }
        let mut rng = seeded_rng(settings.seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
        let mut worst: f64 = 0.0;
        for _ in 0..settings.instances {
            let err = build(&mut rng).error(settings.step, fault)?;
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        out.push(CaseResult {
            name: name.to_string(),
            instances: settings.instances,
            worst_error: worst,
            passed: worst <= settings.tolerance,
        });
    }
    Ok(SuiteReport {
        cases: out,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
