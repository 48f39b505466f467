//! Skeleton topology and the structural matrices derived from it.
//!
//! Everything here is computed once from a [`SkeletonGraph`] and shared
//! read-only by the attention layers: the signed path-length matrix, the
//! clamped relative-position index map, the per-order neighbor masks and the
//! rescaled Laplacian used by Chebyshev convolution.

use std::collections::VecDeque;
use std::path::Path;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KogError, Result};

/// Undirected tree over `num_nodes` joints (or mesh template nodes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    /// Reference joint removed for root-relative coordinates.
    #[serde(default)]
    root: usize,
    /// Optional per-edge bone lengths in millimeters, parallel to `edges`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bone_lengths: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct SkeletonFile {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    root: usize,
    #[serde(default)]
    bone_lengths: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct SkeletonFileOut<'a> {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    root: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    bone_lengths: Option<&'a Vec<f64>>,
}

impl SkeletonGraph {
    /// Validates and builds a tree. Edge endpoints are stored with the
    /// smaller index first.
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(KogError::Structure("graph has no nodes".into()));
        }
        let mut norm = Vec::with_capacity(edges.len());
        let mut uf = UnionFind::new(num_nodes);
        for &(a, b) in &edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(KogError::Structure(format!(
                    "edge ({a}, {b}) references a node outside [0, {num_nodes})"
                )));
            }
            if a == b {
                return Err(KogError::Structure(format!("self-loop on node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if norm.contains(&e) {
                return Err(KogError::Structure(format!(
                    "duplicate edge ({}, {})",
                    e.0, e.1
                )));
            }
            if !uf.union(a, b) {
                return Err(KogError::Structure(format!(
                    "edge ({}, {}) closes a cycle",
                    e.0, e.1
                )));
            }
            norm.push(e);
        }
        if let Some(lonely) = (0..num_nodes).find(|&v| uf.find(v) != uf.find(0)) {
            return Err(KogError::Structure(format!(
                "disconnected: node {lonely} is not reachable from node 0"
            )));
        }
        Ok(Self {
            num_nodes,
            edges: norm,
            root: 0,
            bone_lengths: None,
        })
    }

    pub fn with_root(mut self, root: usize) -> Result<Self> {
        if root >= self.num_nodes {
            return Err(KogError::Structure(format!(
                "root {root} out of range for {} nodes",
                self.num_nodes
            )));
        }
        self.root = root;
        Ok(self)
    }

    pub fn with_bone_lengths(mut self, lengths: Vec<f64>) -> Result<Self> {
        if lengths.len() != self.edges.len() {
            return Err(KogError::Structure(format!(
                "{} bone lengths for {} edges",
                lengths.len(),
                self.edges.len()
            )));
        }
        if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(KogError::Structure(
                "bone lengths must be finite and positive".into(),
            ));
        }
        self.bone_lengths = Some(lengths);
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn bone_lengths(&self) -> Option<&[f64]> {
        self.bone_lengths.as_deref()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Hop counts from `source` to every node.
    pub fn bfs_levels(&self, source: usize) -> Vec<usize> {
        let adj = self.neighbors();
        bfs(&adj, source)
    }

    /// Relabels nodes: old node `v` becomes `perm[v]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(KogError::Structure("permutation length mismatch".into()));
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut g = SkeletonGraph::new(self.num_nodes, edges)?.with_root(perm[self.root])?;
        if let Some(bl) = &self.bone_lengths {
            // edge order is preserved by `new`
            g = g.with_bone_lengths(bl.clone())?;
        }
        Ok(g)
    }

    /// 16-joint human body. Indices follow the common 1-based labeling of the
    /// body skeleton (pelvis = 1, spine = 8, left foot = 7), with the
    /// right wrist, labelled 16 there, wrapped to index 0.
    pub fn human36m_16() -> Self {
        // 0 r-wrist, 1 pelvis, 2 r-hip, 3 r-knee, 4 r-ankle, 5 l-hip, 6 l-knee,
        // 7 l-ankle, 8 spine, 9 thorax, 10 head, 11 l-shoulder, 12 l-elbow,
        // 13 l-wrist, 14 r-shoulder, 15 r-elbow
        let edges = vec![
            (1, 2),
            (2, 3),
            (3, 4),
            (1, 5),
            (5, 6),
            (6, 7),
            (1, 8),
            (8, 9),
            (9, 10),
            (9, 11),
            (11, 12),
            (12, 13),
            (9, 14),
            (14, 15),
            (15, 0),
        ];
        let lengths = vec![
            130.0, 450.0, 440.0, 130.0, 450.0, 440.0, 240.0, 250.0, 200.0, 150.0, 280.0, 250.0,
            150.0, 280.0, 250.0,
        ];
        SkeletonGraph::new(16, edges)
            .and_then(|g| g.with_root(1))
            .and_then(|g| g.with_bone_lengths(lengths))
            .expect("static body skeleton is a valid tree")
    }

    /// 21-joint hand: wrist 0, then four joints per finger from palm to tip
    /// (thumb, index, middle, ring, little).
    pub fn hand_21() -> Self {
        let mut edges = Vec::with_capacity(20);
        let mut lengths = Vec::with_capacity(20);
        let finger_bones = [
            [35.0, 32.0, 28.0, 24.0],
            [80.0, 40.0, 24.0, 20.0],
            [78.0, 44.0, 28.0, 22.0],
            [74.0, 40.0, 26.0, 21.0],
            [70.0, 32.0, 20.0, 18.0],
        ];
        for (f, bones) in finger_bones.iter().enumerate() {
            let base = 1 + 4 * f;
            edges.push((0, base));
            lengths.push(bones[0]);
            for j in 0..3 {
                edges.push((base + j, base + j + 1));
                lengths.push(bones[j + 1]);
            }
        }
        SkeletonGraph::new(21, edges)
            .and_then(|g| g.with_bone_lengths(lengths))
            .expect("static hand skeleton is a valid tree")
    }

    /// Path graph 0-1-...-(n-1).
    pub fn chain(n: usize) -> Result<Self> {
        SkeletonGraph::new(n, (1..n).map(|i| (i - 1, i)).collect())
    }

    /// Uniformly relabelled random recursive tree.
    pub fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let edges = (1..n)
            .map(|i| (perm[i], perm[rng.gen_range(0..i)]))
            .collect();
        SkeletonGraph::new(n, edges)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: SkeletonFile = serde_json::from_str(s)?;
        let g = SkeletonGraph::new(f.num_nodes, f.edges.iter().map(|e| (e[0], e[1])).collect())?
            .with_root(f.root)?;
        match f.bone_lengths {
            Some(bl) => g.with_bone_lengths(bl),
            None => Ok(g),
        }
    }

    pub fn to_json_string(&self) -> String {
        let out = SkeletonFileOut {
            num_nodes: self.num_nodes,
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
            root: self.root,
            bone_lengths: self.bone_lengths.as_ref(),
        };
        serde_json::to_string_pretty(&out).expect("skeleton serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KogError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| KogError::io(path, e))
    }
}

fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::new();
    dist[source] = 0;
    queue.push_back(source);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Tree path lengths with an index-order sign: `H[m][n]` is negative when
/// `m < n` and positive when `m > n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedDistanceMatrix {
    n: usize,
    entries: Vec<i64>,
}

impl SignedDistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, m: usize, n: usize) -> i64 {
        self.entries[m * self.n + n]
    }

    /// `|H|`, the symmetric hop-count matrix.
    pub fn magnitude(&self) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|m| (0..self.n).map(|n| self.get(m, n).unsigned_abs() as usize).collect())
            .collect()
    }

    /// Longest path length in the tree.
    pub fn diameter(&self) -> usize {
        self.entries
            .iter()
            .map(|v| v.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn rows(&self) -> Vec<Vec<i64>> {
        self.entries.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

pub fn build_signed_distance(graph: &SkeletonGraph) -> SignedDistanceMatrix {
    let n = graph.num_nodes();
    let adj = graph.neighbors();
    let mut entries = vec![0i64; n * n];
    for m in 0..n {
        let dist = bfs(&adj, m);
        for (t, &d) in dist.iter().enumerate() {
            let d = d as i64;
            entries[m * n + t] = if m < t { -d } else { d };
        }
    }
    SignedDistanceMatrix { n, entries }
}

/// Clamped relative-distance lookup indices for the positional tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelativeIndexMap {
    delta: usize,
    directed: bool,
    n: usize,
    indices: Vec<usize>,
}

impl RelativeIndexMap {
    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, m: usize, n: usize) -> usize {
        self.indices[m * self.n + n]
    }

    /// Row-major `l*l` indices.
    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    /// Number of rows a positional table must have.
    pub fn table_size(&self) -> usize {
        table_size(self.delta, self.directed)
    }

    /// Applies a node permutation directly to the index matrix
    /// (`new[p[m]][p[n]] = old[m][n]`) without recomputing signs.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut indices = vec![0; n * n];
        for m in 0..n {
            for k in 0..n {
                indices[perm[m] * n + perm[k]] = self.indices[m * n + k];
            }
        }
        Self {
            indices,
            ..self.clone()
        }
    }
}

pub fn table_size(delta: usize, directed: bool) -> usize {
    if directed {
        2 * delta + 1
    } else {
        delta + 1
    }
}

pub fn build_relative_index_map(
    h: &SignedDistanceMatrix,
    delta: usize,
    directed: bool,
) -> Result<RelativeIndexMap> {
    if delta < 1 {
        return Err(KogError::Config(format!(
            "relative distance threshold must be >= 1, got {delta}"
        )));
    }
    let d = delta as i64;
    let indices = h
        .entries
        .iter()
        .map(|&v| {
            if directed {
                (v.clamp(-d, d) + d) as usize
            } else {
                v.unsigned_abs().min(delta as u64) as usize
            }
        })
        .collect();
    Ok(RelativeIndexMap {
        delta,
        directed,
        n: h.n,
        indices,
    })
}

/// Masks `U^0..U^K`: entry `(i, m, n)` is admitted iff node `n` is exactly
/// `i` hops from node `m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderMaskSet {
    n: usize,
    admitted: Vec<Vec<bool>>,
}

impl OrderMaskSet {
    /// Highest order K.
    pub fn order(&self) -> usize {
        self.admitted.len() - 1
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_admitted(&self, order: usize, m: usize, n: usize) -> bool {
        self.admitted[order][m * self.n + n]
    }

    /// Additive mask of one order: 0 for admitted pairs, [`masked_value`] elsewhere.
    pub fn values<T: Float>(&self, order: usize) -> Vec<T> {
        self.admitted[order]
            .iter()
            .map(|&ok| if ok { T::zero() } else { masked_value::<T>() })
            .collect()
    }

    /// Order of every pair `(m, n)` in row-major order, or [`NO_GROUP`] when
    /// the pair is farther apart than K. Orders are disjoint, so this encodes
    /// the whole set.
    pub fn groups(&self) -> Vec<u8> {
        let mut out = vec![NO_GROUP; self.n * self.n];
        for (i, a) in self.admitted.iter().enumerate() {
            for (g, _) in out.iter_mut().zip(a).filter(|(_, &ok)| ok) {
                *g = i as u8;
            }
        }
        out
    }

    /// Whether row `m` of order `i` admits no node at all.
    pub fn row_is_empty(&self, order: usize, m: usize) -> bool {
        !self.admitted[order][m * self.n..(m + 1) * self.n]
            .iter()
            .any(|&b| b)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let admitted = self
            .admitted
            .iter()
            .map(|a| {
                let mut out = vec![false; n * n];
                for m in 0..n {
                    for k in 0..n {
                        out[perm[m] * n + perm[k]] = a[m * n + k];
                    }
                }
                out
            })
            .collect();
        Self { n, admitted }
    }
}

/// Marks pairs outside every order in [`OrderMaskSet::groups`].
pub const NO_GROUP: u8 = u8::MAX;

/// Additive stand-in for minus infinity: the most negative finite value,
/// so masked logits underflow to an exact zero after the softmax shift.
pub fn masked_value<T: Float>() -> T {
    T::min_value()
}

pub fn build_order_masks(graph: &SkeletonGraph, order: usize) -> OrderMaskSet {
    let h = build_signed_distance(graph);
    order_masks_from_distance(&h, order)
}

pub fn order_masks_from_distance(h: &SignedDistanceMatrix, order: usize) -> OrderMaskSet {
    let n = h.n;
    let admitted = (0..=order)
        .map(|i| {
            h.entries
                .iter()
                .map(|v| v.unsigned_abs() as usize == i)
                .collect()
        })
        .collect();
    OrderMaskSet { n, admitted }
}

/// `2 L / lambda_max - I` for the symmetric normalized Laplacian `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLaplacian {
    n: usize,
    entries: Vec<f64>,
    lambda_max: f64,
}

impl ScaledLaplacian {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.entries[m * self.n + n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    /// Largest eigenvalue of the unscaled Laplacian used for the rescaling.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }
}

pub fn build_scaled_laplacian(graph: &SkeletonGraph) -> ScaledLaplacian {
    let n = graph.num_nodes();
    let mut deg = vec![0.0f64; n];
    for &(a, b) in graph.edges() {
        deg[a] += 1.0;
        deg[b] += 1.0;
    }
    let mut lap = vec![0.0; n * n];
    for v in 0..n {
        if deg[v] > 0.0 {
            lap[v * n + v] = 1.0;
        }
    }
    for &(a, b) in graph.edges() {
        let w = -1.0 / (deg[a] * deg[b]).sqrt();
        lap[a * n + b] = w;
        lap[b * n + a] = w;
    }
    let eig = symmetric_eigenvalues(&lap, n);
    let mut lambda_max = eig.iter().cloned().fold(0.0, f64::max);
    if lambda_max < 1e-12 {
        // edgeless graph: L = 0, rescale as if the spectrum spanned [0, 2]
        lambda_max = 2.0;
    }
    let mut entries: Vec<f64> = lap.iter().map(|v| 2.0 * v / lambda_max).collect();
    for v in 0..n {
        entries[v * n + v] -= 1.0;
    }
    ScaledLaplacian {
        n,
        entries,
        lambda_max,
    }
}

/// Cyclic Jacobi rotations; adequate for the small dense matrices used here.
pub fn symmetric_eigenvalues(matrix: &[f64], n: usize) -> Vec<f64> {
    let mut a = matrix.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn body_skeleton_distance_entries() {
        let h = build_signed_distance(&SkeletonGraph::human36m_16());
        assert_eq!(h.get(8, 7), 4);
        assert_eq!(h.get(7, 8), -4);
    }

    #[test]
    fn chain_signs() {
        let h = build_signed_distance(&SkeletonGraph::chain(3).unwrap());
        assert_eq!(h.get(0, 2), -2);
        assert_eq!(h.get(2, 0), 2);
        assert_eq!(h.get(0, 1), -1);
        for m in 0..3 {
            assert_eq!(h.get(m, m), 0);
        }
    }

    #[test]
    fn rejects_cycles_and_disconnection() {
        let err = SkeletonGraph::new(3, vec![(0, 1), (1, 2), (2, 0)]).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
        let err = SkeletonGraph::new(4, vec![(0, 1), (2, 3)]).unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
        assert!(SkeletonGraph::new(2, vec![(0, 0)]).is_err());
        assert!(SkeletonGraph::new(2, vec![(0, 2)]).is_err());
        assert!(SkeletonGraph::new(3, vec![(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn relative_index_examples() {
        let h = build_signed_distance(&SkeletonGraph::human36m_16());
        let map = build_relative_index_map(&h, 2, true).unwrap();
        assert_eq!(map.get(8, 7), 4);
        assert_eq!(map.get(7, 8), 0);
        assert_eq!(map.table_size(), 5);
        for m in 0..16 {
            assert_eq!(map.get(m, m), 2);
        }

        let chain = build_signed_distance(&SkeletonGraph::chain(6).unwrap());
        let und = build_relative_index_map(&chain, 4, false).unwrap();
        assert_eq!(und.get(0, 5), 4);
        assert_eq!(und.get(3, 3), 0);
        assert_eq!(und.table_size(), 5);

        assert!(matches!(
            build_relative_index_map(&chain, 0, true),
            Err(KogError::Config(_))
        ));
    }

    #[test]
    fn zero_order_mask_is_diagonal() {
        let g = SkeletonGraph::hand_21();
        let masks = build_order_masks(&g, 3);
        let u0 = masks.values::<f64>(0);
        for m in 0..21 {
            for n in 0..21 {
                let v = u0[m * 21 + n];
                if m == n {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, f64::MIN);
                }
            }
        }
    }

    #[test]
    fn two_node_graph_has_no_third_order_neighbors() {
        let masks = build_order_masks(&SkeletonGraph::chain(2).unwrap(), 3);
        assert!(masks.row_is_empty(3, 0));
        assert!(masks.row_is_empty(3, 1));
        assert!(masks.values::<f32>(3).iter().all(|&v| v == f32::MIN));
    }

    #[test]
    fn laplacian_single_node_and_chain() {
        let single = build_scaled_laplacian(&SkeletonGraph::new(1, vec![]).unwrap());
        let v = single.get(0, 0);
        assert!((-1.0..=1.0).contains(&v));

        // normalized Laplacian of the 3-chain has spectrum {0, 1, 2}
        let l = build_scaled_laplacian(&SkeletonGraph::chain(3).unwrap());
        assert!((l.lambda_max() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn skeleton_json_round_trip() {
        let g = SkeletonGraph::human36m_16();
        let back = SkeletonGraph::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(g, back);
        let minimal = SkeletonGraph::from_json_str(r#"{"num_nodes": 3, "edges": [[0,1],[1,2]]}"#)
            .unwrap();
        assert_eq!(minimal.root(), 0);
        assert!(minimal.bone_lengths().is_none());
    }

    #[test]
    fn random_trees_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..30 {
            let g = SkeletonGraph::random_tree(n, &mut rng).unwrap();
            assert_eq!(g.edges().len(), n - 1);
        }
    }
}
