use super::scalar::gemm;
use super::tape::{gelu_grad, transpose_blocks, Node, Op, Tape, Var};
use super::{numel, Scalar};
use crate::error::{KogError, Result};

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, len: usize, f: impl FnOnce(&mut [T])) {
    let g = grads[id].get_or_insert_with(|| vec![T::zero(); len]);
    f(g);
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Scalar> Tape<T> {
    /// Reverse sweep from a scalar `loss`, filling gradients for every
    /// differentiable leaf it depends on. Replaces earlier gradients.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id()];
        if root.value.len() != 1 || !root.shape.is_empty() {
            return Err(KogError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.id()] = Some(vec![T::one()]);
        for id in (0..=loss.id()).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(mut g) = grads[id].take() else {
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            if self.fault.is_some_and(|f| f.matches(&node.op)) {
                g.iter_mut().for_each(|v| *v *= T::of(1.1));
            }
            propagate(&nodes, node, &g, &mut grads);
        }
        *self.grads.borrow_mut() = grads;
        Ok(())
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let needs = |i: usize| nodes[i].needs_grad;
    let len = |i: usize| nodes[i].value.len();
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul { a, b, tb } => {
            let sa = &nodes[a].shape;
            let k = *sa.last().expect("matmul lhs rank >= 1");
            let rows = numel(sa) / k;
            let n = *node.shape.last().expect("matmul output rank >= 1");
            if needs(a) {
                // dA = G B^T  (or G B when tb)
                acc(grads, a, len(a), |ga| {
                    gemm(rows, n, k, g, false, &nodes[b].value, !tb, ga, true)
                });
            }
            if needs(b) {
                acc(grads, b, len(b), |gb| {
                    if tb {
                        // dB (n, k) = G^T A
                        gemm(n, rows, k, g, true, &nodes[a].value, false, gb, true)
                    } else {
                        // dB (k, n) = A^T G
                        gemm(k, rows, n, &nodes[a].value, true, g, false, gb, true)
                    }
                });
            }
        }
        &Op::BatchMatMul { a, b, tb } => {
            let sa = &nodes[a].shape;
            let r = sa.len();
            let (m, k) = (sa[r - 2], sa[r - 1]);
            let n = node.shape[r - 1];
            let batch = numel(&sa[..r - 2]);
            if needs(a) {
                acc(grads, a, len(a), |ga| {
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &nodes[b].value[i * k * n..(i + 1) * k * n],
                            !tb,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                });
            }
            if needs(b) {
                acc(grads, b, len(b), |gb| {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &nodes[a].value[i * m * k..(i + 1) * m * k];
                        let out = &mut gb[i * k * n..(i + 1) * k * n];
                        if tb {
                            gemm(n, m, k, gi, true, ai, false, out, true);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, out, true);
                        }
                    }
                });
            }
        }
        &Op::Transpose { a } => {
            if needs(a) {
                let r = node.shape.len();
                let (rows, cols) = (node.shape[r - 2], node.shape[r - 1]);
                let t = transpose_blocks(g, rows, cols);
                acc(grads, a, len(a), |ga| add_into(ga, &t));
            }
        }
        &Op::Add { a, b } => {
            if needs(a) {
                acc(grads, a, len(a), |ga| add_into(ga, g));
            }
            if needs(b) {
                acc(grads, b, len(b), |gb| add_into(gb, g));
            }
        }
        &Op::Sub { a, b } => {
            if needs(a) {
                acc(grads, a, len(a), |ga| add_into(ga, g));
            }
            if needs(b) {
                acc(grads, b, len(b), |gb| {
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d -= s;
                    }
                });
            }
        }
        &Op::Mul { a, b } => {
            if needs(a) {
                acc(grads, a, len(a), |ga| {
                    for ((d, &s), &y) in ga.iter_mut().zip(g).zip(&nodes[b].value) {
                        *d += s * y;
                    }
                });
            }
            if needs(b) {
                acc(grads, b, len(b), |gb| {
                    for ((d, &s), &x) in gb.iter_mut().zip(g).zip(&nodes[a].value) {
                        *d += s * x;
                    }
                });
            }
        }
        &Op::Scale { a, s } => {
            if needs(a) {
                acc(grads, a, len(a), |ga| {
                    for (d, &v) in ga.iter_mut().zip(g) {
                        *d += v * s;
                    }
                });
            }
        }
        &Op::AddTiled { a, b } => {
            if needs(a) {
                acc(grads, a, len(a), |ga| add_into(ga, g));
            }
            if needs(b) {
                let block = len(b);
                acc(grads, b, block, |gb| {
                    for chunk in g.chunks(block) {
                        add_into(gb, chunk);
                    }
                });
            }
        }
        &Op::ScaleByElem { a, c, index } => {
            let w = nodes[c].value[index];
            if needs(a) {
                acc(grads, a, len(a), |ga| {
                    for (d, &v) in ga.iter_mut().zip(g) {
                        *d += v * w;
                    }
                });
            }
            if needs(c) {
                let dot: T = g.iter().zip(&nodes[a].value).map(|(&x, &y)| x * y).sum();
                acc(grads, c, len(c), |gc| gc[index] += dot);
            }
        }
        &Op::Softmax { a } => {
            if needs(a) {
                let w = *node.shape.last().unwrap_or(&1);
                acc(grads, a, len(a), |ga| {
                    for ((gr, yr), dr) in g.chunks(w).zip(node.value.chunks(w)).zip(ga.chunks_mut(w)) {
                        let dot: T = gr.iter().zip(yr).map(|(&x, &y)| x * y).sum();
                        for j in 0..w {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
        }
        Op::GroupedAttention {
            q,
            k,
            v,
            heads,
            scale,
            groups,
            count,
            probs,
            keep,
        } => {
            let (q, k, v, heads, scale, count) = (*q, *k, *v, *heads, *scale, *count);
            let s = &nodes[q].shape;
            let (batch, l, d) = (s[0], s[1], s[2]);
            let dh = d / heads;
            let width = count * d;
            let (qv, kv, vv) = (&nodes[q].value, &nodes[k].value, &nodes[v].value);
            let mut dq = vec![T::zero(); qv.len()];
            let mut dk = vec![T::zero(); kv.len()];
            let mut dv = vec![T::zero(); vv.len()];
            let mut dp = vec![T::zero(); l];
            let mut dot = vec![T::zero(); count];
            for b in 0..batch {
                for h in 0..heads {
                    let base = (b * heads + h) * l * l;
                    let col = |row: usize| (b * l + row) * d + h * dh;
                    for m in 0..l {
                        let grow = &groups[m * l..(m + 1) * l];
                        let prow = &probs[base + m * l..base + (m + 1) * l];
                        let gout = &g[(b * l + m) * width..(b * l + m + 1) * width];
                        for nn in 0..l {
                            let grp = grow[nn] as usize;
                            if grp >= count {
                                dp[nn] = T::zero();
                                continue;
                            }
                            let block = &gout[grp * d + h * dh..grp * d + (h + 1) * dh];
                            let vn = &vv[col(nn)..col(nn) + dh];
                            let mut w = prow[nn];
                            let mut kp = T::one();
                            if let Some(keep) = keep {
                                kp = keep[base + m * l + nn];
                                w *= kp;
                            }
                            // weight after dropout feeds v; its gradient flows back through the mask
                            dp[nn] = block.iter().zip(vn).map(|(&x, &y)| x * y).sum::<T>() * kp;
                            if w != T::zero() {
                                for (dst, &x) in dv[col(nn)..col(nn) + dh].iter_mut().zip(block) {
                                    *dst += w * x;
                                }
                            }
                        }
                        dot.fill(T::zero());
                        for nn in 0..l {
                            let grp = grow[nn] as usize;
                            if grp < count {
                                dot[grp] += dp[nn] * prow[nn];
                            }
                        }
                        let qm = col(m);
                        for nn in 0..l {
                            let grp = grow[nn] as usize;
                            if grp >= count {
                                continue;
                            }
                            let ds = prow[nn] * (dp[nn] - dot[grp]) * scale;
                            if ds == T::zero() {
                                continue;
                            }
                            let kn = col(nn);
                            for j in 0..dh {
                                dq[qm + j] += ds * kv[kn + j];
                                dk[kn + j] += ds * qv[qm + j];
                            }
                        }
                    }
                }
            }
            for (id, grad) in [(q, dq), (k, dk), (v, dv)] {
                if needs(id) {
                    acc(grads, id, len(id), |dst| add_into(dst, &grad));
                }
            }
        }
        Op::GatherRows { table, idx } => {
            let table = *table;
            if needs(table) {
                let w = nodes[table].shape[1];
                acc(grads, table, len(table), |gt| {
                    for (i, &r) in idx.iter().enumerate() {
                        add_into(&mut gt[r * w..(r + 1) * w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
        }
        Op::ScatterAddRows { src, idx } => {
            let src = *src;
            if needs(src) {
                let w = nodes[src].shape[1];
                acc(grads, src, len(src), |gs| {
                    for (i, &r) in idx.iter().enumerate() {
                        add_into(&mut gs[i * w..(i + 1) * w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
        }
        Op::LayerNorm {
            a,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let (a, gamma, beta) = (*a, *gamma, *beta);
            let w = nodes[gamma].value.len();
            let rows = rstd.len();
            if needs(beta) {
                acc(grads, beta, w, |gb| {
                    for gr in g.chunks(w) {
                        add_into(gb, gr);
                    }
                });
            }
            if needs(gamma) {
                acc(grads, gamma, w, |gg| {
                    for (gr, hr) in g.chunks(w).zip(xhat.chunks(w)) {
                        for j in 0..w {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
            }
            if needs(a) {
                let gam = &nodes[gamma].value;
                let wt = T::of(w as f64);
                acc(grads, a, len(a), |ga| {
                    for r in 0..rows {
                        let gr = &g[r * w..(r + 1) * w];
                        let hr = &xhat[r * w..(r + 1) * w];
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..w {
                            let d = gr[j] * gam[j];
                            sum_d += d;
                            sum_dh += d * hr[j];
                        }
                        let scale = rstd[r] / wt;
                        for j in 0..w {
                            let d = gr[j] * gam[j];
                            ga[r * w + j] += scale * (wt * d - sum_d - hr[j] * sum_dh);
                        }
                    }
                });
            }
        }
        Op::Dropout { a, keep } => {
            let a = *a;
            if needs(a) {
                acc(grads, a, len(a), |ga| {
                    for ((d, &v), &k) in ga.iter_mut().zip(g).zip(keep) {
                        *d += v * k;
                    }
                });
            }
        }
        Op::Concat { parts } => {
            let rows = numel(&node.shape) / node.shape.last().copied().unwrap_or(1);
            let total = *node.shape.last().unwrap_or(&1);
            let mut offset = 0;
            for &p in parts {
                let w = *nodes[p].shape.last().expect("concat part rank >= 1");
                if needs(p) {
                    acc(grads, p, len(p), |gp| {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                }
                offset += w;
            }
        }
        &Op::SliceLast { a, start } => {
            if needs(a) {
                let w = *nodes[a].shape.last().expect("slice rank >= 1");
                let width = *node.shape.last().expect("slice rank >= 1");
                let rows = numel(&node.shape) / width;
                acc(grads, a, len(a), |ga| {
                    for r in 0..rows {
                        add_into(
                            &mut ga[r * w + start..r * w + start + width],
                            &g[r * width..(r + 1) * width],
                        );
                    }
                });
            }
        }
        &Op::Reshape { a } => {
            if needs(a) {
                acc(grads, a, len(a), |ga| add_into(ga, g));
            }
        }
        &Op::Sum { a } => {
            if needs(a) {
                acc(grads, a, len(a), |ga| ga.iter_mut().for_each(|d| *d += g[0]));
            }
        }
        &Op::Mean { a } => {
            if needs(a) {
                let s = g[0] / T::of(len(a) as f64);
                acc(grads, a, len(a), |ga| ga.iter_mut().for_each(|d| *d += s));
            }
        }
        &Op::SquaredError { pred, target } => {
            let batch = T::of(nodes[pred].shape[0] as f64);
            let k = T::of(2.0) * g[0] / batch;
            let (p, t) = (&nodes[pred].value, &nodes[target].value);
            if needs(pred) {
                acc(grads, pred, p.len(), |gp| {
                    for ((d, &x), &y) in gp.iter_mut().zip(p).zip(t) {
                        *d += k * (x - y);
                    }
                });
            }
            if needs(target) {
                acc(grads, target, t.len(), |gt| {
                    for ((d, &x), &y) in gt.iter_mut().zip(p).zip(t) {
                        *d -= k * (x - y);
                    }
                });
            }
        }
        &Op::Gelu { a } => {
            if needs(a) {
                acc(grads, a, len(a), |ga| {
                    for ((d, &v), &x) in ga.iter_mut().zip(g).zip(&nodes[a].value) {
                        *d += v * gelu_grad(x);
                    }
                });
            }
        }
        &Op::MixNodes { w, x } => {
            let (p, q) = (nodes[w].shape[0], nodes[w].shape[1]);
            let d = *node.shape.last().expect("mix_nodes rank >= 2");
            let batch = numel(&node.shape) / (p * d);
            if needs(w) {
                acc(grads, w, p * q, |gw| {
                    for b in 0..batch {
                        // dW += G_b X_b^T
                        gemm(
                            p,
                            d,
                            q,
                            &g[b * p * d..(b + 1) * p * d],
                            false,
                            &nodes[x].value[b * q * d..(b + 1) * q * d],
                            true,
                            gw,
                            true,
                        );
                    }
                });
            }
            if needs(x) {
                acc(grads, x, len(x), |gx| {
                    for b in 0..batch {
                        // dX_b += W^T G_b
                        gemm(
                            q,
                            p,
                            d,
                            &nodes[w].value,
                            true,
                            &g[b * p * d..(b + 1) * p * d],
                            false,
                            &mut gx[b * q * d..(b + 1) * q * d],
                            true,
                        );
                    }
                });
            }
        }
    }
}
