//! Graph-aware multi-head self-attention sublayers.
//!
//! [`GrMsa`] adds learnable vectors, indexed by the clamped signed tree
//! distance between two joints, to the keys and values. [`KogMsa`] computes
//! the score matrix and values once, then attends separately within each
//! neighbor order (via additive masks), re-projects every order and fuses
//! them with a learned weight vector `c`.
//!
//! Both sublayers split the model dimension into equal head slices. Masks
//! and index maps are shared by all heads; positional tables are stored as
//! `(rows, d)` so head `h` owns columns `h*dh..(h+1)*dh`.

use std::rc::Rc;

use crate::error::{KogError, Result};
use crate::graph::{table_size, OrderMaskSet, RelativeIndexMap};
use crate::nn::{init_weight, uniform_tensor, xavier_bound, Bound, ParamId, ParamStore};
use crate::tensor::{KogRng, Scalar, Tensor, Var};

fn check_heads(dim: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(KogError::Config(format!(
            "model dimension {dim} is not divisible by {heads} heads"
        )));
    }
    Ok(dim / heads)
}

/// Lifts `(l, d)` to `(1, l, d)`; returns the input rank.
fn batched<'t, T: Scalar>(x: Var<'t, T>, dim: usize, op: &'static str) -> Result<(Var<'t, T>, usize)> {
    let shape = x.shape();
    match shape.as_slice() {
        [l, d] if *d == dim => Ok((x.reshape(&[1, *l, *d])?, 2)),
        [_, _, d] if *d == dim => Ok((x, 3)),
        _ => Err(KogError::shape(op, format!("input {shape:?}, model dimension {dim}"))),
    }
}

fn unbatched<'t, T: Scalar>(y: Var<'t, T>, rank: usize) -> Result<Var<'t, T>> {
    if rank == 2 {
        let s = y.shape();
        y.reshape(&s[1..])
    } else {
        Ok(y)
    }
}

/// Graph relative positional encoding attention.
#[derive(Debug, Clone)]
pub struct GrMsa {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    /// `(table_rows, d)` key-side encodings.
    pub pos_key: ParamId,
    /// `(table_rows, d)` value-side encodings.
    pub pos_value: ParamId,
    pub dim: usize,
    pub heads: usize,
    pub delta: usize,
    pub directed: bool,
    pub dropout: f64,
}

impl GrMsa {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut KogRng,
        name: &str,
        dim: usize,
        heads: usize,
        delta: usize,
        directed: bool,
        dropout: f64,
    ) -> Result<Self> {
        let dh = check_heads(dim, heads)?;
        if delta < 1 {
            return Err(KogError::Config(format!("delta must be >= 1, got {delta}")));
        }
        let rows = table_size(delta, directed);
        let bound = xavier_bound(rows, dh);
        Ok(Self {
            w_query: store.add(format!("{name}.w_query"), init_weight(rng, dim, dim))?,
            w_key: store.add(format!("{name}.w_key"), init_weight(rng, dim, dim))?,
            w_value: store.add(format!("{name}.w_value"), init_weight(rng, dim, dim))?,
            pos_key: store.add(format!("{name}.pos_key"), uniform_tensor(rng, &[rows, dim], bound))?,
            pos_value: store.add(
                format!("{name}.pos_value"),
                uniform_tensor(rng, &[rows, dim], bound),
            )?,
            dim,
            heads,
            delta,
            directed,
            dropout,
        })
    }

    pub fn table_rows(&self) -> usize {
        table_size(self.delta, self.directed)
    }

    /// `x` is `(l, d)` or `(batch, l, d)`; output has the same shape.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        idx: &RelativeIndexMap,
    ) -> Result<Var<'t, T>> {
        let (x, rank) = batched(x, self.dim, "gr_msa")?;
        let shape = x.shape();
        let (batch, l) = (shape[0], shape[1]);
        if idx.len() != l {
            return Err(KogError::shape(
                "gr_msa",
                format!("{l} nodes but the index map covers {}", idx.len()),
            ));
        }
        if idx.delta() != self.delta || idx.directed() != self.directed {
            return Err(KogError::Config(format!(
                "index map (delta {}, directed {}) does not match the layer (delta {}, directed {})",
                idx.delta(),
                idx.directed(),
                self.delta,
                self.directed
            )));
        }
        let rows = self.table_rows();
        let dh = self.dim / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());

        // flat row index into the (batch * l * rows, 1) view of Q P^T
        let lookup: Rc<[usize]> = (0..batch)
            .flat_map(|b| {
                (0..l).flat_map(move |m| (0..l).map(move |n| (b * l + m) * rows + idx.get(m, n)))
            })
            .collect();

        let q = x.matmul(p.var(self.w_query))?;
        let k = x.matmul(p.var(self.w_key))?;
        let v = x.matmul(p.var(self.w_value))?;
        let pk = p.var(self.pos_key);
        let pv = p.var(self.pos_value);

        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, qh) = (h * dh, q.slice_last(h * dh, dh)?);
            let kh = k.slice_last(lo, dh)?;
            let vh = v.slice_last(lo, dh)?;
            let pkh = pk.slice_last(lo, dh)?;
            let pvh = pv.slice_last(lo, dh)?;

            let content = qh.bmm_t(kh)?;
            let relative = qh
                .matmul_t(pkh)?
                .reshape(&[batch * l * rows, 1])?
                .gather_rows(lookup.clone())?
                .reshape(&[batch, l, l])?;
            let attn = content
                .add(relative)?
                .scale(scale)
                .softmax()
                .dropout(self.dropout)?;

            let from_values = attn.bmm(vh)?;
            let from_table = attn
                .reshape(&[batch * l * l, 1])?
                .scatter_add_rows(lookup.clone(), batch * l * rows)?
                .reshape(&[batch * l, rows])?
                .matmul(pvh)?
                .reshape(&[batch, l, dh])?;
            heads.push(from_values.add(from_table)?);
        }
        unbatched(Var::concat(&heads)?, rank)
    }
}

/// K-order graph-masked attention with learned order fusion.
#[derive(Debug, Clone)]
pub struct KogMsa {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    /// One `(d, d)` re-projection per order `0..=K`.
    pub w_order: Vec<ParamId>,
    /// Fusion weights `c`, length `K + 1`.
    pub fusion: ParamId,
    pub dim: usize,
    pub heads: usize,
    pub order: usize,
    pub dropout: f64,
}

impl KogMsa {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut KogRng,
        name: &str,
        dim: usize,
        heads: usize,
        order: usize,
        dropout: f64,
    ) -> Result<Self> {
        check_heads(dim, heads)?;
        if order >= 254 {
            return Err(KogError::Config(format!("order {order} too large")));
        }
        let w_query = store.add(format!("{name}.w_query"), init_weight(rng, dim, dim))?;
        let w_key = store.add(format!("{name}.w_key"), init_weight(rng, dim, dim))?;
        let w_value = store.add(format!("{name}.w_value"), init_weight(rng, dim, dim))?;
        let w_order = (0..=order)
            .map(|i| store.add(format!("{name}.w_order.{i}"), init_weight(rng, dim, dim)))
            .collect::<Result<Vec<_>>>()?;
        let c0 = T::of(1.0 / (order + 1) as f64);
        let fusion = store.add(
            format!("{name}.fusion"),
            Tensor::new(vec![order + 1], vec![c0; order + 1])?,
        )?;
        Ok(Self {
            w_query,
            w_key,
            w_value,
            w_order,
            fusion,
            dim,
            heads,
            order,
            dropout,
        })
    }

    /// `x` is `(l, d)` or `(batch, l, d)`; output has the same shape.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        masks: &OrderMaskSet,
    ) -> Result<Var<'t, T>> {
        let (all, rank) = self.attend_orders(p, x, masks)?;
        // sum_i c_i F_i W_i as one product with the stacked, weighted W_i
        let c = p.var(self.fusion);
        let blocks = self
            .w_order
            .iter()
            .enumerate()
            .map(|(i, &w)| p.var(w).scale_by(c, i)?.transpose())
            .collect::<Result<Vec<_>>>()?;
        unbatched(all.matmul_t(Var::concat(&blocks)?)?, rank)
    }

    /// Like [`KogMsa::forward`], also returning the per-order features
    /// `F'_i = F_i W_i` before fusion.
    pub fn forward_orders<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        masks: &OrderMaskSet,
    ) -> Result<(Var<'t, T>, Vec<Var<'t, T>>)> {
        let (all, rank) = self.attend_orders(p, x, masks)?;
        let c = p.var(self.fusion);
        let mut fused: Option<Var<'t, T>> = None;
        let mut per_order = Vec::with_capacity(self.order + 1);
        for (i, &w) in self.w_order.iter().enumerate() {
            let projected = all.slice_last(i * self.dim, self.dim)?.matmul(p.var(w))?;
            let weighted = projected.scale_by(c, i)?;
            fused = Some(match fused {
                None => weighted,
                Some(acc) => acc.add(weighted)?,
            });
            per_order.push(unbatched(projected, rank)?);
        }
        let out = fused.expect("at least the zero order exists");
        Ok((unbatched(out, rank)?, per_order))
    }

    /// Head-concatenated features of every order side by side:
    /// `(batch, l, (K + 1) d)`.
    fn attend_orders<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        masks: &OrderMaskSet,
    ) -> Result<(Var<'t, T>, usize)> {
        if masks.order() != self.order {
            return Err(KogError::Config(format!(
                "mask set has order {}, layer expects {}",
                masks.order(),
                self.order
            )));
        }
        let (x, rank) = batched(x, self.dim, "kog_msa")?;
        let l = x.shape()[1];
        if masks.len() != l {
            return Err(KogError::shape(
                "kog_msa",
                format!("{l} nodes but masks cover {}", masks.len()),
            ));
        }
        let dh = self.dim / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let q = x.matmul(p.var(self.w_query))?;
        let k = x.matmul(p.var(self.w_key))?;
        let v = x.matmul(p.var(self.w_value))?;
        let all = q.grouped_attention(
            k,
            v,
            self.heads,
            scale,
            masks.groups().into(),
            self.order + 1,
            self.dropout,
        )?;
        Ok((all, rank))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_order_masks, build_relative_index_map, build_signed_distance, SkeletonGraph};
    use crate::tensor::{seeded_rng, Tape};
    use rand::Rng;

    fn rand_vec(rng: &mut KogRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Vec<Vec<f64>> {
        data.chunks(cols).take(rows).map(|r| r.to_vec()).collect()
    }

    fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        a.iter()
            .map(|row| {
                (0..b[0].len())
                    .map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum())
                    .collect()
            })
            .collect()
    }

    /// Softmax over admitted entries only; empty sets give a zero row.
    fn softmax_over(logits: &[f64], admitted: &[bool]) -> Vec<f64> {
        let max = logits
            .iter()
            .zip(admitted)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return vec![0.0; logits.len()];
        }
        let e: Vec<f64> = logits
            .iter()
            .zip(admitted)
            .map(|(&v, &ok)| if ok { (v - max).exp() } else { 0.0 })
            .collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    #[test]
    fn gr_msa_single_head_chain_matches_loop_oracle() {
        let graph = SkeletonGraph::chain(3).unwrap();
        let idx = build_relative_index_map(&build_signed_distance(&graph), 1, true).unwrap();
        let mut rng = seeded_rng(2);
        let mut store = ParamStore::<f64>::new();
        let layer = GrMsa::new(&mut store, &mut rng, "gr", 2, 1, 1, true, 0.0).unwrap();
        // hand-set parameters
        let wq = [1.0, 0.5, -0.5, 1.0];
        let wk = [0.5, 0.0, 1.0, 1.0];
        let wv = [1.0, -1.0, 0.0, 2.0];
        let pk = [0.1, 0.2, 0.0, 0.0, -0.3, 0.4];
        let pv = [1.0, 0.0, 0.0, 0.0, 0.0, -1.0];
        store.get_mut(layer.w_query).data_mut().copy_from_slice(&wq);
        store.get_mut(layer.w_key).data_mut().copy_from_slice(&wk);
        store.get_mut(layer.w_value).data_mut().copy_from_slice(&wv);
        store.get_mut(layer.pos_key).data_mut().copy_from_slice(&pk);
        store.get_mut(layer.pos_value).data_mut().copy_from_slice(&pv);
        let f = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];

        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(&Tensor::from_f64(&[3, 2], &f).unwrap());
        let out = layer.forward(&p, x, &idx).unwrap().value();

        let fm = mat(3, 2, &f);
        let q = matmul(&fm, &mat(2, 2, &wq));
        let k = matmul(&fm, &mat(2, 2, &wk));
        let v = matmul(&fm, &mat(2, 2, &wv));
        let pkm = mat(3, 2, &pk);
        let pvm = mat(3, 2, &pv);
        for m in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|n| {
                    let g = idx.get(m, n);
                    (0..2).map(|j| q[m][j] * (k[n][j] + pkm[g][j])).sum::<f64>() / 2f64.sqrt()
                })
                .collect();
            let a = softmax_over(&logits, &[true; 3]);
            for j in 0..2 {
                let expect: f64 = (0..3).map(|n| a[n] * (v[n][j] + pvm[idx.get(m, n)][j])).sum();
                assert!((out.data()[m * 2 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gr_msa_single_node_returns_value_plus_zero_distance_encoding() {
        let graph = SkeletonGraph::new(1, vec![]).unwrap();
        let idx = build_relative_index_map(&build_signed_distance(&graph), 2, true).unwrap();
        let mut rng = seeded_rng(4);
        let mut store = ParamStore::<f64>::new();
        let layer = GrMsa::new(&mut store, &mut rng, "gr", 4, 2, 2, true, 0.0).unwrap();
        let f = rand_vec(&mut rng, 4);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let out = layer
            .forward(&p, tape.constant(&Tensor::from_f64(&[1, 4], &f).unwrap()), &idx)
            .unwrap()
            .value();
        let wv = store.get(layer.w_value).to_f64_vec();
        let pv = store.get(layer.pos_value).to_f64_vec();
        for j in 0..4 {
            let v: f64 = (0..4).map(|i| f[i] * wv[i * 4 + j]).sum();
            // offset row delta = 2 encodes distance zero
            let expect = v + pv[2 * 4 + j];
            assert!((out.data()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn kog_msa_zero_order_identity_returns_values() {
        let graph = SkeletonGraph::chain(5).unwrap();
        let masks = build_order_masks(&graph, 0);
        let mut rng = seeded_rng(8);
        let mut store = ParamStore::<f64>::new();
        let layer = KogMsa::new(&mut store, &mut rng, "kog", 4, 2, 0, 0.0).unwrap();
        let w0 = store.get_mut(layer.w_order[0]).data_mut();
        w0.iter_mut().enumerate().for_each(|(i, v)| *v = if i % 5 == 0 { 1.0 } else { 0.0 });
        store.get_mut(layer.fusion).data_mut()[0] = 1.0;
        let f = rand_vec(&mut rng, 20);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(&Tensor::from_f64(&[5, 4], &f).unwrap());
        let out = layer.forward(&p, x, &masks).unwrap().value();
        let v = x.matmul(p.var(layer.w_value)).unwrap().value();
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kog_msa_empty_order_rows_are_zero() {
        // star: centre 0 with three leaves; leaves have 2nd-order neighbors,
        // the centre has none
        let graph = SkeletonGraph::new(4, vec![(0, 1), (0, 2), (0, 3)]).unwrap();
        let masks = build_order_masks(&graph, 2);
        let mut rng = seeded_rng(1);
        let mut store = ParamStore::<f64>::new();
        let layer = KogMsa::new(&mut store, &mut rng, "kog", 4, 1, 2, 0.0).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(&Tensor::from_f64(&[4, 4], &rand_vec(&mut rng, 16)).unwrap());
        let (_, per_order) = layer.forward_orders(&p, x, &masks).unwrap();
        let f2 = per_order[2].value();
        assert!(f2.data()[..4].iter().all(|&v| v == 0.0));
        assert!(f2.data()[4..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn kog_msa_chain_matches_per_order_oracle() {
        let graph = SkeletonGraph::chain(3).unwrap();
        let masks = build_order_masks(&graph, 2);
        let mut rng = seeded_rng(21);
        let mut store = ParamStore::<f64>::new();
        let layer = KogMsa::new(&mut store, &mut rng, "kog", 2, 1, 2, 0.0).unwrap();
        let wq = [0.3, -0.2, 0.8, 0.5];
        let wk = [1.0, 0.4, -0.6, 0.2];
        let wv = [0.7, 0.1, -0.3, 0.9];
        let wo = [[1.0, 0.0, 0.0, 1.0], [0.5, -0.5, 0.25, 1.0], [-1.0, 0.3, 0.2, 0.6]];
        let c = [0.6, -0.4, 1.5];
        store.get_mut(layer.w_query).data_mut().copy_from_slice(&wq);
        store.get_mut(layer.w_key).data_mut().copy_from_slice(&wk);
        store.get_mut(layer.w_value).data_mut().copy_from_slice(&wv);
        for i in 0..3 {
            store.get_mut(layer.w_order[i]).data_mut().copy_from_slice(&wo[i]);
        }
        store.get_mut(layer.fusion).data_mut().copy_from_slice(&c);
        let f = [0.2, -1.0, 1.3, 0.4, -0.7, 0.9];

        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(&Tensor::from_f64(&[3, 2], &f).unwrap());
        let out = layer.forward(&p, x, &masks).unwrap().value();

        // neighbor sets enumerated directly from the chain: |m - n| = i
        let fm = mat(3, 2, &f);
        let q = matmul(&fm, &mat(2, 2, &wq));
        let k = matmul(&fm, &mat(2, 2, &wk));
        let v = matmul(&fm, &mat(2, 2, &wv));
        let mut expect = vec![vec![0.0; 2]; 3];
        for i in 0..3usize {
            let mut fi = vec![vec![0.0; 2]; 3];
            for m in 0..3usize {
                let admitted: Vec<bool> = (0..3usize).map(|n| m.abs_diff(n) == i).collect();
                let logits: Vec<f64> = (0..3)
                    .map(|n| (q[m][0] * k[n][0] + q[m][1] * k[n][1]) / 2f64.sqrt())
                    .collect();
                let a = softmax_over(&logits, &admitted);
                for j in 0..2 {
                    fi[m][j] = (0..3).map(|n| a[n] * v[n][j]).sum();
                }
            }
            let proj = matmul(&fi, &mat(2, 2, &wo[i]));
            for m in 0..3 {
                for j in 0..2 {
                    expect[m][j] += c[i] * proj[m][j];
                }
            }
        }
        for m in 0..3 {
            for j in 0..2 {
                assert!((out.data()[m * 2 + j] - expect[m][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn order_and_size_mismatches_are_rejected() {
        let graph = SkeletonGraph::chain(4).unwrap();
        let mut rng = seeded_rng(0);
        let mut store = ParamStore::<f64>::new();
        let kog = KogMsa::new(&mut store, &mut rng, "kog", 4, 2, 2, 0.0).unwrap();
        let gr = GrMsa::new(&mut store, &mut rng, "gr", 4, 2, 2, true, 0.0).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(&Tensor::<f64>::zeros(&[4, 4]));
        assert!(matches!(
            kog.forward(&p, x, &build_order_masks(&graph, 3)),
            Err(KogError::Config(_))
        ));
        let other = SkeletonGraph::chain(5).unwrap();
        let idx = build_relative_index_map(&build_signed_distance(&other), 2, true).unwrap();
        assert!(matches!(gr.forward(&p, x, &idx), Err(KogError::Shape { .. })));
        assert!(GrMsa::new(&mut store, &mut rng, "bad", 6, 4, 2, true, 0.0).is_err());
    }
}
