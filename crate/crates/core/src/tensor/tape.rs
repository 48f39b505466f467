use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;

use super::scalar::gemm;
use super::{numel, seeded_rng, KogRng, Scalar, Tensor};
use crate::error::{KogError, Result};
use crate::graph::NO_GROUP as NO_GROUP_LABEL;

pub(crate) enum Op<T> {
    Leaf,
    /// `(.., k) x (k, n)`, or `(.., k) x (n, k)^T` when `tb`.
    MatMul { a: usize, b: usize, tb: bool },
    /// Batched `(B, m, k) x (B, k, n)`, or `(B, n, k)^T` when `tb`.
    BatchMatMul { a: usize, b: usize, tb: bool },
    Transpose { a: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, s: T },
    AddTiled { a: usize, b: usize },
    ScaleByElem { a: usize, c: usize, index: usize },
    Softmax { a: usize },
    GroupedAttention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        scale: T,
        groups: Rc<[u8]>,
        count: usize,
        /// `(B, heads, l, l)` softmax weights before dropout.
        probs: Vec<T>,
        keep: Option<Vec<T>>,
    },
    GatherRows { table: usize, idx: Rc<[usize]> },
    ScatterAddRows { src: usize, idx: Rc<[usize]> },
    LayerNorm {
        a: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout { a: usize, keep: Vec<T> },
    Concat { parts: Vec<usize> },
    SliceLast { a: usize, start: usize },
    Reshape { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    SquaredError { pred: usize, target: usize },
    Gelu { a: usize },
    MixNodes { w: usize, x: usize },
}

/// Adjoints that can be deliberately corrupted to exercise the gradient
/// checker's failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    MatMul,
    Softmax,
    LayerNorm,
    Gelu,
    GatherRows,
}

impl FaultKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "matmul" => FaultKind::MatMul,
            "softmax" => FaultKind::Softmax,
            "layer-norm" | "layernorm" => FaultKind::LayerNorm,
            "gelu" => FaultKind::Gelu,
            "gather-rows" => FaultKind::GatherRows,
            _ => return None,
        })
    }

    pub(crate) fn matches<T>(self, op: &Op<T>) -> bool {
        matches!(
            (self, op),
            (FaultKind::MatMul, Op::MatMul { .. })
                | (FaultKind::Softmax, Op::Softmax { .. } | Op::GroupedAttention { .. })
                | (FaultKind::LayerNorm, Op::LayerNorm { .. })
                | (FaultKind::Gelu, Op::Gelu { .. })
                | (FaultKind::GatherRows, Op::GatherRows { .. })
        )
    }
}

pub(crate) struct Node<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

/// Records one forward pass. A tape is single-threaded; independent tapes
/// can run on different threads.
pub struct Tape<T: Scalar> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
    pub(crate) grads: RefCell<Vec<Option<Vec<T>>>>,
    rng: Option<RefCell<KogRng>>,
    pub(crate) fault: Option<FaultKind>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// Evaluation tape: dropout is the identity.
    pub fn new() -> Self {
        super::heap::keep_resident();
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            rng: None,
            fault: None,
        }
    }

    /// Training tape: dropout draws from a generator seeded with `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            rng: Some(RefCell::new(seeded_rng(seed))),
            ..Self::new()
        }
    }

    pub fn with_fault(mut self, fault: Option<FaultKind>) -> Self {
        self.fault = fault;
        self
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn leaf(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Non-differentiable input; never receives a gradient.
    pub fn constant(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&self, shape: &[usize], data: Vec<T>) -> Result<Var<'_, T>> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.constant(&t))
    }

    pub fn value(&self, v: Var<'_, T>) -> Tensor<T> {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.id];
        Tensor::new(n.shape.clone(), n.value.clone())
            .expect("recorded value is consistent")
    }

    /// Gradient of the last backward pass w.r.t. the leaf `v`; `None` for
    /// constants, intermediate values and leaves the loss does not reach.
    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        let grads = self.grads.borrow();
        let g = grads.get(v.id)?.as_ref()?;
        let nodes = self.nodes.borrow();
        Some(Tensor::new(nodes[v.id].shape.clone(), g.clone()).expect("gradient matches its value"))
    }

    pub(crate) fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<T>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Var<'_, T> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    match shape.last() {
        Some(&last) => (numel(shape) / last, last),
        None => (1, 1),
    }
}

fn batch_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() < 3 {
        return Err(KogError::shape(op, format!("need rank >= 3, got {shape:?}")));
    }
    let r = shape.len();
    Ok((numel(&shape[..r - 2]), shape[r - 2], shape[r - 1]))
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(*self)
    }

    fn with_values<R>(&self, others: &[Var<'t, T>], f: impl FnOnce(&[&Node<T>]) -> R) -> R {
        let nodes = self.tape.nodes.borrow();
        let mut refs = Vec::with_capacity(1 + others.len());
        refs.push(&nodes[self.id]);
        for o in others {
            refs.push(&nodes[o.id]);
        }
        f(&refs)
    }

    fn emit(&self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[usize]) -> Var<'t, T> {
        let needs = self.tape.needs(inputs);
        self.tape.push(shape, value, op, needs)
    }

    /// `self (.., k) x b (k, n) -> (.., n)`.
    pub fn matmul(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(b, false)
    }

    /// `self (.., k) x b^T` where `b` is `(n, k)`.
    pub fn matmul_t(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(b, true)
    }

    fn matmul_impl(self, b: Var<'t, T>, tb: bool) -> Result<Var<'t, T>> {
        let (shape, value) = self.with_values(&[b], |n| {
            let (sa, sb) = (&n[0].shape, &n[1].shape);
            if sb.len() != 2 || sa.is_empty() {
                return Err(KogError::shape(
                    "matmul",
                    format!("lhs {sa:?} rhs {sb:?} (rhs must be 2-D)"),
                ));
            }
            let (rows, k) = split_last(sa);
            let (bk, bn) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
            if k != bk {
                return Err(KogError::shape(
                    "matmul",
                    format!("inner dimensions differ: {sa:?} x {sb:?}{}", if tb { "^T" } else { "" }),
                ));
            }
            let mut out = vec![T::zero(); rows * bn];
            gemm(rows, k, bn, &n[0].value, false, &n[1].value, tb, &mut out, false);
            let mut shape = sa.clone();
            *shape.last_mut().expect("non-empty") = bn;
            Ok((shape, out))
        })?;
        Ok(self.emit(shape, value, Op::MatMul { a: self.id, b: b.id, tb }, &[self.id, b.id]))
    }

    /// Batched product over all leading axes.
    pub fn bmm(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.bmm_impl(b, false)
    }

    /// Batched `self x b^T` (last two axes of `b` transposed).
    pub fn bmm_t(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        self.bmm_impl(b, true)
    }

    fn bmm_impl(self, b: Var<'t, T>, tb: bool) -> Result<Var<'t, T>> {
        let (shape, value) = self.with_values(&[b], |n| {
            let (sa, sb) = (&n[0].shape, &n[1].shape);
            let (ba, m, k) = batch_dims(sa, "bmm")?;
            let (bb, r1, r2) = batch_dims(sb, "bmm")?;
            let (bk, bn) = if tb { (r2, r1) } else { (r1, r2) };
            if ba != bb || sa[..sa.len() - 2] != sb[..sb.len() - 2] || k != bk {
                return Err(KogError::shape(
                    "bmm",
                    format!("{sa:?} x {sb:?}{}", if tb { "^T" } else { "" }),
                ));
            }
            let mut out = vec![T::zero(); ba * m * bn];
            for i in 0..ba {
                gemm(
                    m,
                    k,
                    bn,
                    &n[0].value[i * m * k..(i + 1) * m * k],
                    false,
                    &n[1].value[i * k * bn..(i + 1) * k * bn],
                    tb,
                    &mut out[i * m * bn..(i + 1) * m * bn],
                    false,
                );
            }
            let mut shape = sa.clone();
            *shape.last_mut().expect("rank >= 3") = bn;
            Ok((shape, out))
        })?;
        Ok(self.emit(
            shape,
            value,
            Op::BatchMatMul {
                a: self.id,
                b: b.id,
                tb,
            },
            &[self.id, b.id],
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let (shape, value) = self.with_values(&[], |n| {
            let s = &n[0].shape;
            if s.len() < 2 {
                return Err(KogError::shape("transpose", format!("rank < 2: {s:?}")));
            }
            let r = s.len();
            let (rows, cols) = (s[r - 2], s[r - 1]);
            let out = transpose_blocks(&n[0].value, rows, cols);
            let mut shape = s.clone();
            shape.swap(r - 2, r - 1);
            Ok((shape, out))
        })?;
        Ok(self.emit(shape, value, Op::Transpose { a: self.id }, &[self.id]))
    }

    fn zip(self, b: Var<'t, T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        self.with_values(&[b], |n| {
            if n[0].shape != n[1].shape {
                return Err(KogError::shape(
                    op,
                    format!("{:?} vs {:?}", n[0].shape, n[1].shape),
                ));
            }
            Ok((
                n[0].shape.clone(),
                n[0].value
                    .iter()
                    .zip(&n[1].value)
                    .map(|(&x, &y)| f(x, y))
                    .collect(),
            ))
        })
    }

    pub fn add(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        let (s, v) = self.zip(b, "add", |x, y| x + y)?;
        Ok(self.emit(s, v, Op::Add { a: self.id, b: b.id }, &[self.id, b.id]))
    }

    pub fn sub(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        let (s, v) = self.zip(b, "sub", |x, y| x - y)?;
        Ok(self.emit(s, v, Op::Sub { a: self.id, b: b.id }, &[self.id, b.id]))
    }

    /// Elementwise product.
    pub fn mul(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        let (s, v) = self.zip(b, "mul", |x, y| x * y)?;
        Ok(self.emit(s, v, Op::Mul { a: self.id, b: b.id }, &[self.id, b.id]))
    }

    pub fn scale(self, s: T) -> Var<'t, T> {
        let (shape, value) = self.with_values(&[], |n| {
            (n[0].shape.clone(), n[0].value.iter().map(|&x| x * s).collect())
        });
        self.emit(shape, value, Op::Scale { a: self.id, s }, &[self.id])
    }

    /// Adds `b` to every trailing block of `self` whose shape equals
    /// `b.shape()` (row bias, additive attention mask, score bias).
    pub fn add_tiled(self, b: Var<'t, T>) -> Result<Var<'t, T>> {
        let (shape, value) = self.with_values(&[b], |n| {
            let (sa, sb) = (&n[0].shape, &n[1].shape);
            if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
                return Err(KogError::shape(
                    "add_tiled",
                    format!("{sb:?} is not a trailing block of {sa:?}"),
                ));
            }
            let block = n[1].value.len();
            let mut out = n[0].value.clone();
            for chunk in out.chunks_mut(block) {
                for (o, &bv) in chunk.iter_mut().zip(&n[1].value) {
                    *o += bv;
                }
            }
            Ok((sa.clone(), out))
        })?;
        Ok(self.emit(shape, value, Op::AddTiled { a: self.id, b: b.id }, &[self.id, b.id]))
    }

    /// `self * c[index]` for a learnable weight vector `c`.
    pub fn scale_by(self, c: Var<'t, T>, index: usize) -> Result<Var<'t, T>> {
        let (shape, value) = self.with_values(&[c], |n| {
            let w = *n[1].value.get(index).ok_or_else(|| {
                KogError::shape(
                    "scale_by",
                    format!("index {index} out of range for {:?}", n[1].shape),
                )
            })?;
            Ok::<_, KogError>((n[0].shape.clone(), n[0].value.iter().map(|&x| x * w).collect()))
        })?;
        Ok(self.emit(
            shape,
            value,
            Op::ScaleByElem {
                a: self.id,
                c: c.id,
                index,
            },
            &[self.id, c.id],
        ))
    }

    /// Softmax along the last axis. A row whose entries are all at the
    /// masked sentinel yields an all-zero row.
    pub fn softmax(self) -> Var<'t, T> {
        let (shape, value) = self.with_values(&[], |n| {
            let (_, w) = split_last(&n[0].shape);
            let cutoff = T::min_value() * T::of(1e-3);
            let mut out = n[0].value.clone();
            for row in out.chunks_mut(w) {
                let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
                if max <= cutoff {
                    row.iter_mut().for_each(|v| *v = T::zero());
                    continue;
                }
                let mut total = T::zero();
                for v in row.iter_mut() {
                    *v = if *v <= cutoff { T::zero() } else { (*v - max).fast_exp() };
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            (n[0].shape.clone(), out)
        });
        self.emit(shape, value, Op::Softmax { a: self.id }, &[self.id])
    }

    /// Multi-head attention where the columns of every score row are split
    /// into groups, each normalized by its own softmax and aggregated into
    /// its own output block.
    ///
    /// `self` (queries), `k` and `v` are `(B, l, d)` with `d = heads * dh`.
    /// `groups[m * l + n]` labels the pair `(m, n)`; pairs marked
    /// [`NO_GROUP`](crate::graph::NO_GROUP) get no weight, and an empty group
    /// yields a zero block. The output is `(B, l, count * d)` where columns
    /// `g*d + h*dh .. g*d + (h+1)*dh` hold head `h` attending within group
    /// `g`. Scores are scaled by `scale`; dropout applies to the weights on a
    /// training tape.
    #[allow(clippy::too_many_arguments)]
    pub fn grouped_attention(
        self,
        k: Var<'t, T>,
        v: Var<'t, T>,
        heads: usize,
        scale: T,
        groups: Rc<[u8]>,
        count: usize,
        dropout: f64,
    ) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(KogError::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let drop = match &self.tape.rng {
            Some(rng) if dropout > 0.0 => Some(rng),
            _ => None,
        };
        let (shape, value, probs, keep) = self.with_values(&[k, v], |n| {
            let s = &n[0].shape;
            if s.len() != 3 || n[1].shape != *s || n[2].shape != *s {
                return Err(KogError::shape(
                    "grouped_attention",
                    format!("q {s:?}, k {:?}, v {:?}", n[1].shape, n[2].shape),
                ));
            }
            let (batch, l, d) = (s[0], s[1], s[2]);
            if heads == 0 || d % heads != 0 {
                return Err(KogError::shape("grouped_attention", format!("{d} columns, {heads} heads")));
            }
            if groups.len() != l * l || count >= NO_GROUP_LABEL as usize {
                return Err(KogError::shape(
                    "grouped_attention",
                    format!("{} group labels for {l} nodes, {count} groups", groups.len()),
                ));
            }
            let dh = d / heads;
            let (q, kv, vv) = (&n[0].value, &n[1].value, &n[2].value);
            let mut probs = vec![T::zero(); batch * heads * l * l];
            let keep = drop.map(|rng| {
                let threshold = (dropout * 4294967296.0) as u64;
                let scale = T::of(1.0 / (1.0 - dropout));
                let mut draws = vec![0u32; probs.len()];
                rng.borrow_mut().fill(&mut draws[..]);
                draws
                    .iter()
                    .map(|&u| if u64::from(u) < threshold { T::zero() } else { scale })
                    .collect::<Vec<T>>()
            });
            let width = count * d;
            let mut out = vec![T::zero(); batch * l * width];
            let mut max = vec![T::zero(); count];
            let mut total = vec![T::zero(); count];
            let mut kt = vec![T::zero(); dh * l];
            for b in 0..batch {
                for h in 0..heads {
                    let base = (b * heads + h) * l * l;
                    let p = &mut probs[base..base + l * l];
                    let col = |row: usize| (b * l + row) * d + h * dh;
                    // keys transposed so score rows accumulate as axpys
                    for nn in 0..l {
                        for j in 0..dh {
                            kt[j * l + nn] = kv[col(nn) + j];
                        }
                    }
                    for m in 0..l {
                        let qm = &q[col(m)..col(m) + dh];
                        let grow = &groups[m * l..(m + 1) * l];
                        let prow = &mut p[m * l..(m + 1) * l];
                        prow.fill(T::zero());
                        for (j, &qj) in qm.iter().enumerate() {
                            for (pv, &kj) in prow.iter_mut().zip(&kt[j * l..(j + 1) * l]) {
                                *pv += qj * kj;
                            }
                        }
                        prow.iter_mut().for_each(|pv| *pv *= scale);
                        max.fill(T::neg_infinity());
                        total.fill(T::zero());
                        for (&sv, &g) in prow.iter().zip(grow) {
                            let g = g as usize;
                            if g < count && sv > max[g] {
                                max[g] = sv;
                            }
                        }
                        for (pv, &g) in prow.iter_mut().zip(grow) {
                            let g = g as usize;
                            *pv = if g < count { (*pv - max[g]).fast_exp() } else { T::zero() };
                            if g < count {
                                total[g] += *pv;
                            }
                        }
                        for (pv, &g) in prow.iter_mut().zip(grow) {
                            if (g as usize) < count {
                                *pv /= total[g as usize];
                            }
                        }
                        let orow = &mut out[(b * l + m) * width..(b * l + m + 1) * width];
                        for nn in 0..l {
                            let g = grow[nn] as usize;
                            let mut w = prow[nn];
                            if let Some(keep) = &keep {
                                w *= keep[base + m * l + nn];
                            }
                            if g >= count || w == T::zero() {
                                continue;
                            }
                            let vn = &vv[col(nn)..col(nn) + dh];
                            let dst = &mut orow[g * d + h * dh..g * d + (h + 1) * dh];
                            for (o, &x) in dst.iter_mut().zip(vn) {
                                *o += w * x;
                            }
                        }
                    }
                }
            }
            Ok::<_, KogError>((vec![batch, l, width], out, probs, keep))
        })?;
        Ok(self.emit(
            shape,
            value,
            Op::GroupedAttention {
                q: self.id,
                k: k.id,
                v: v.id,
                heads,
                scale,
                groups,
                count,
                probs,
                keep,
            },
            &[self.id, k.id, v.id],
        ))
    }

    /// Selects rows of a 2-D table: `out[i] = table[idx[i]]`.
    pub fn gather_rows(self, idx: Rc<[usize]>) -> Result<Var<'t, T>> {
        let (shape, value) = self.with_values(&[], |n| {
            let s = &n[0].shape;
            if s.len() != 2 {
                return Err(KogError::shape("gather_rows", format!("table must be 2-D, got {s:?}")));
            }
            let (rows, w) = (s[0], s[1]);
            let mut out = Vec::with_capacity(idx.len() * w);
            for &r in idx.iter() {
                if r >= rows {
                    return Err(KogError::shape(
                        "gather_rows",
                        format!("row {r} out of range for {rows} rows"),
                    ));
                }
                out.extend_from_slice(&n[0].value[r * w..(r + 1) * w]);
            }
            Ok((vec![idx.len(), w], out))
        })?;
        Ok(self.emit(
            shape,
            value,
            Op::GatherRows {
                table: self.id,
                idx,
            },
            &[self.id],
        ))
    }

    /// Adjoint of [`Var::gather_rows`]: `out[idx[i]] += self[i]`, with
    /// `rows` output rows.
    pub fn scatter_add_rows(self, idx: Rc<[usize]>, rows: usize) -> Result<Var<'t, T>> {
        let (shape, value) = self.with_values(&[], |n| {
            let s = &n[0].shape;
            if s.len() != 2 || s[0] != idx.len() {
                return Err(KogError::shape(
                    "scatter_add_rows",
                    format!("source {s:?} vs {} indices", idx.len()),
                ));
            }
            let w = s[1];
            let mut out = vec![T::zero(); rows * w];
            for (i, &r) in idx.iter().enumerate() {
                if r >= rows {
                    return Err(KogError::shape(
                        "scatter_add_rows",
                        format!("row {r} out of range for {rows} rows"),
                    ));
                }
                for (o, &v) in out[r * w..(r + 1) * w]
                    .iter_mut()
                    .zip(&n[0].value[i * w..(i + 1) * w])
                {
                    *o += v;
                }
            }
            Ok((vec![rows, w], out))
        })?;
        Ok(self.emit(
            shape,
            value,
            Op::ScatterAddRows { src: self.id, idx },
            &[self.id],
        ))
    }

    /// Normalizes over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let (shape, value, xhat, rstd) = self.with_values(&[gamma, beta], |n| {
            let (rows, w) = split_last(&n[0].shape);
            if n[1].shape != [w] || n[2].shape != [w] {
                return Err(KogError::shape(
                    "layer_norm",
                    format!(
                        "input {:?}, gamma {:?}, beta {:?}",
                        n[0].shape, n[1].shape, n[2].shape
                    ),
                ));
            }
            let wt = T::of(w as f64);
            let mut xhat = vec![T::zero(); rows * w];
            let mut rstd = vec![T::zero(); rows];
            let mut out = vec![T::zero(); rows * w];
            for r in 0..rows {
                let x = &n[0].value[r * w..(r + 1) * w];
                let mean = x.iter().cloned().sum::<T>() / wt;
                let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / wt;
                let rs = T::one() / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..w {
                    let h = (x[j] - mean) * rs;
                    xhat[r * w + j] = h;
                    out[r * w + j] = h * n[1].value[j] + n[2].value[j];
                }
            }
            Ok((n[0].shape.clone(), out, xhat, rstd))
        })?;
        Ok(self.emit(
            shape,
            value,
            Op::LayerNorm {
                a: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            &[self.id, gamma.id, beta.id],
        ))
    }

    /// Inverted dropout; the identity on evaluation tapes or at rate 0.
    pub fn dropout(self, rate: f64) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(KogError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let rng = match &self.tape.rng {
            Some(rng) if rate > 0.0 => rng,
            _ => return Ok(self),
        };
        let scale = T::of(1.0 / (1.0 - rate));
        // drop when a uniform u32 falls below rate * 2^32
        let threshold = (rate * 4294967296.0) as u64;
        let (shape, value, keep) = self.with_values(&[], |n| {
            let mut draws = vec![0u32; n[0].value.len()];
            rng.borrow_mut().fill(&mut draws[..]);
            let keep: Vec<T> = draws
                .iter()
                .map(|&u| if u64::from(u) < threshold { T::zero() } else { scale })
                .collect();
            let out = n[0].value.iter().zip(&keep).map(|(&x, &k)| x * k).collect();
            (n[0].shape.clone(), out, keep)
        });
        Ok(self.emit(shape, value, Op::Dropout { a: self.id, keep }, &[self.id]))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = *parts
            .first()
            .ok_or_else(|| KogError::shape("concat", "no inputs"))?;
        let (shape, value) = first.with_values(&parts[1..], |n| {
            let lead = &n[0].shape[..n[0].shape.len().saturating_sub(1)];
            let mut widths = Vec::with_capacity(n.len());
            for node in n {
                let s = &node.shape;
                if s.is_empty() || &s[..s.len() - 1] != lead {
                    return Err(KogError::shape(
                        "concat",
                        format!("{s:?} vs leading axes {lead:?}"),
                    ));
                }
                widths.push(*s.last().expect("non-empty"));
            }
            let total: usize = widths.iter().sum();
            let rows = numel(lead);
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (node, &w) in n.iter().zip(&widths) {
                    out.extend_from_slice(&node.value[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Ok((shape, out))
        })?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.emit(shape, value, Op::Concat { parts: ids.clone() }, &ids))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let (shape, value) = self.with_values(&[], |n| {
            let (rows, w) = split_last(&n[0].shape);
            if len == 0 || start + len > w || n[0].shape.is_empty() {
                return Err(KogError::shape(
                    "slice_last",
                    format!("{start}..{} of {:?}", start + len, n[0].shape),
                ));
            }
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&n[0].value[r * w + start..r * w + start + len]);
            }
            let mut shape = n[0].shape.clone();
            *shape.last_mut().expect("non-empty") = len;
            Ok((shape, out))
        })?;
        Ok(self.emit(shape, value, Op::SliceLast { a: self.id, start }, &[self.id]))
    }

    /// Splits the last axis into consecutive pieces of the given widths.
    pub fn split_last(self, widths: &[usize]) -> Result<Vec<Var<'t, T>>> {
        let total: usize = widths.iter().sum();
        let shape = self.shape();
        if shape.last() != Some(&total) {
            return Err(KogError::shape(
                "split_last",
                format!("widths {widths:?} do not tile {shape:?}"),
            ));
        }
        let mut start = 0;
        widths
            .iter()
            .map(|&w| {
                let v = self.slice_last(start, w);
                start += w;
                v
            })
            .collect()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = self.with_values(&[], |n| {
            if numel(shape) != n[0].value.len() || shape.contains(&0) {
                return Err(KogError::shape(
                    "reshape",
                    format!("{:?} -> {shape:?}", n[0].shape),
                ));
            }
            Ok(n[0].value.clone())
        })?;
        Ok(self.emit(shape.to_vec(), value, Op::Reshape { a: self.id }, &[self.id]))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let value = self.with_values(&[], |n| n[0].value.iter().cloned().sum::<T>());
        self.emit(vec![], vec![value], Op::Sum { a: self.id }, &[self.id])
    }

    pub fn mean(self) -> Var<'t, T> {
        let value = self.with_values(&[], |n| {
            n[0].value.iter().cloned().sum::<T>() / T::of(n[0].value.len() as f64)
        });
        self.emit(vec![], vec![value], Op::Mean { a: self.id }, &[self.id])
    }

    /// `(1/B) * sum_b ||self_b - target_b||_F^2`, with `B` the leading axis.
    pub fn squared_error(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        let value = self.with_values(&[target], |n| {
            if n[0].shape != n[1].shape || n[0].shape.is_empty() {
                return Err(KogError::shape(
                    "squared_error",
                    format!("{:?} vs {:?}", n[0].shape, n[1].shape),
                ));
            }
            let batch = T::of(n[0].shape[0] as f64);
            let total: T = n[0]
                .value
                .iter()
                .zip(&n[1].value)
                .map(|(&p, &t)| (p - t) * (p - t))
                .sum();
            Ok(total / batch)
        })?;
        Ok(self.emit(
            vec![],
            vec![value],
            Op::SquaredError {
                pred: self.id,
                target: target.id,
            },
            &[self.id, target.id],
        ))
    }

    /// GELU, tanh form.
    pub fn gelu(self) -> Var<'t, T> {
        let (shape, value) = self.with_values(&[], |n| {
            (
                n[0].shape.clone(),
                n[0].value.iter().map(|&x| gelu(x)).collect(),
            )
        });
        self.emit(shape, value, Op::Gelu { a: self.id }, &[self.id])
    }

    /// Applies the node-mixing matrix `self (p, q)` to every batch slice of
    /// `x (.., q, d)`, giving `(.., p, d)`.
    pub fn mix_nodes(self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (shape, value) = self.with_values(&[x], |n| {
            let (sw, sx) = (&n[0].shape, &n[1].shape);
            if sw.len() != 2 || sx.len() < 2 || sx[sx.len() - 2] != sw[1] {
                return Err(KogError::shape(
                    "mix_nodes",
                    format!("weights {sw:?} vs input {sx:?}"),
                ));
            }
            let (p, q) = (sw[0], sw[1]);
            let d = sx[sx.len() - 1];
            let batch = numel(&sx[..sx.len() - 2]);
            let mut out = vec![T::zero(); batch * p * d];
            for b in 0..batch {
                gemm(
                    p,
                    q,
                    d,
                    &n[0].value,
                    false,
                    &n[1].value[b * q * d..(b + 1) * q * d],
                    false,
                    &mut out[b * p * d..(b + 1) * p * d],
                    false,
                );
            }
            let mut shape = sx.clone();
            let r = shape.len();
            shape[r - 2] = p;
            Ok((shape, out))
        })?;
        Ok(self.emit(shape, value, Op::MixNodes { w: self.id, x: x.id }, &[self.id, x.id]))
    }
}

pub(crate) fn transpose_blocks<T: Copy>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let block = rows * cols;
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(block) {
        for c in 0..cols {
            for r in 0..rows {
                out.push(chunk[r * cols + c]);
            }
        }
    }
    out
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_K) * (x + T::of(GELU_C) * x * x * x);
    T::of(0.5) * x * (T::one() + u.fast_tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_K) * (x + T::of(GELU_C) * x * x * x);
    let t = u.fast_tanh();
    let du = T::of(GELU_K) * (T::one() + T::of(3.0 * GELU_C) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}
