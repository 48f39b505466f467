//! JSON-lines pose datasets, normalization and synthetic data.
//!
//! One sample per line: `{"input": [[x, y], ...], "target": [[x, y, z], ...]}`
//! in millimeters (2D inputs in camera pixels).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KogError, Result};
use crate::graph::SkeletonGraph;
use crate::tensor::{seeded_rng, KogRng, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub input: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

/// Expected `(nodes, coords)` of inputs and targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSchema {
    pub input_nodes: usize,
    pub input_dim: usize,
    pub target_nodes: usize,
    pub target_dim: usize,
}

impl SampleSchema {
    pub fn new(input: (usize, usize), target: (usize, usize)) -> Self {
        Self {
            input_nodes: input.0,
            input_dim: input.1,
            target_nodes: target.0,
            target_dim: target.1,
        }
    }

    fn check_block(rows: &[Vec<f64>], nodes: usize, dim: usize, what: &str) -> Result<(), String> {
        if rows.len() != nodes {
            return Err(format!("{what} has {} rows, expected {nodes}", rows.len()));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(format!("{what} row {i} has {} values, expected {dim}", r.len()));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(format!("{what} row {i} has a non-finite value"));
            }
        }
        Ok(())
    }

    /// Checks counts and finiteness; the message names the offending block.
    pub fn check(&self, s: &PoseSample) -> Result<(), String> {
        Self::check_block(&s.input, self.input_nodes, self.input_dim, "input")?;
        Self::check_block(&s.target, self.target_nodes, self.target_dim, "target")
    }
}

/// Streaming reader yielding samples in file order. Blank lines are skipped.
pub struct DatasetReader<R> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    schema: SampleSchema,
    line: usize,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, schema: SampleSchema) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| KogError::io(path, e))?;
        Ok(Self::new(BufReader::new(file), path, schema))
    }
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>, schema: SampleSchema) -> Self {
        Self {
            lines: reader.lines(),
            path: path.into(),
            schema,
            line: 0,
        }
    }

    fn error(&self, msg: impl Into<String>) -> KogError {
        KogError::Dataset {
            path: self.path.clone(),
            line: self.line,
            msg: msg.into(),
        }
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<PoseSample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(KogError::io(&self.path, e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let sample: PoseSample = match serde_json::from_str(&text) {
                Ok(s) => s,
                Err(e) => return Some(Err(self.error(format!("malformed sample: {e}")))),
            };
            return Some(match self.schema.check(&sample) {
                Ok(()) => Ok(sample),
                Err(msg) => Err(self.error(msg)),
            });
        }
    }
}

/// Loads a whole dataset file. `threads > 1` parses line chunks
/// concurrently; the result order is the file order either way.
pub fn load_dataset(path: impl AsRef<Path>, schema: SampleSchema, threads: usize) -> Result<Vec<PoseSample>> {
    let path = path.as_ref();
    if threads <= 1 {
        return DatasetReader::open(path, schema)?.collect();
    }
    let text = std::fs::read_to_string(path).map_err(|e| KogError::io(path, e))?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let chunk = lines.len().div_ceil(threads).max(1);
    let parse = |part: &[(usize, &str)]| -> Result<Vec<PoseSample>> {
        part.iter()
            .map(|&(i, l)| {
                let mut reader = DatasetReader::new(l.as_bytes(), path, schema);
                let sample = reader.next().expect("non-blank line yields a sample");
                sample.map_err(|e| match e {
                    KogError::Dataset { path, msg, .. } => KogError::Dataset { path, line: i + 1, msg },
                    other => other,
                })
            })
            .collect()
    };
    std::thread::scope(|scope| {
        let handles: Vec<_> = lines.chunks(chunk).map(|part| scope.spawn(move || parse(part))).collect();
        let mut out = Vec::with_capacity(lines.len());
        for h in handles {
            out.extend(h.join().expect("loader thread panicked")?);
        }
        Ok(out)
    })
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[PoseSample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| KogError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| KogError::io(path, e))?;
    }
    w.flush().map_err(|e| KogError::io(path, e))
}

/// Per-coordinate input standardization plus a root-relative, rescaled
/// target frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    /// Mean of every input coordinate axis, pooled over nodes and samples.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    /// Root node subtracted from pose targets; `None` for mesh targets,
    /// which are already expressed relative to the input root.
    pub root: Option<usize>,
    /// Targets are divided by this (millimeters per network unit).
    pub target_scale: f64,
}

impl NormalizationStats {
    /// Estimates statistics from training samples.
    pub fn fit(samples: &[PoseSample], root: Option<usize>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| KogError::Config("cannot fit normalization on an empty dataset".into()))?;
        let dim = first.input[0].len();
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut count = 0.0;
        for s in samples {
            for row in &s.input {
                for (c, &v) in row.iter().enumerate() {
                    mean[c] += v;
                    sq[c] += v * v;
                }
                count += 1.0;
            }
        }
        let mut std = vec![0.0; dim];
        for c in 0..dim {
            mean[c] /= count;
            std[c] = (sq[c] / count - mean[c] * mean[c]).max(0.0).sqrt();
        }
        let mut target_sq = 0.0;
        let mut target_n = 0.0;
        for s in samples {
            for row in &s.target {
                for (c, &v) in row.iter().enumerate() {
                    let v = match root {
                        Some(r) => v - s.target[r][c],
                        None => v,
                    };
                    target_sq += v * v;
                    target_n += 1.0;
                }
            }
        }
        let target_scale = (target_sq / target_n).sqrt();
        let stats = Self {
            input_mean: mean,
            input_std: std,
            root,
            target_scale: if target_scale > 0.0 { target_scale } else { 1.0 },
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_mean.len() != self.input_std.len() {
            return Err(KogError::Config("normalization mean/std lengths differ".into()));
        }
        if let Some(c) = self.input_std.iter().position(|&s| !(s > 1e-12) || !s.is_finite()) {
            return Err(KogError::Config(format!(
                "input coordinate {c} has zero standard deviation"
            )));
        }
        if !(self.target_scale > 0.0) || !self.target_scale.is_finite() {
            return Err(KogError::Config(format!("target scale {} must be positive", self.target_scale)));
        }
        Ok(())
    }

    pub fn normalize(&self, s: &PoseSample) -> PoseSample {
        let input = s
            .input
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(c, &v)| (v - self.input_mean[c]) / self.input_std[c])
                    .collect()
            })
            .collect();
        let target = s
            .target
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(c, &v)| {
                        let r = self.root.map_or(0.0, |r| s.target[r][c]);
                        (v - r) / self.target_scale
                    })
                    .collect()
            })
            .collect();
        PoseSample { input, target }
    }

    /// Inverse of [`normalize`](Self::normalize); targets come back in the
    /// root-relative millimeter frame.
    pub fn denormalize(&self, s: &PoseSample) -> PoseSample {
        PoseSample {
            input: s
                .input
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .map(|(c, &v)| v * self.input_std[c] + self.input_mean[c])
                        .collect()
                })
                .collect(),
            target: self.denormalize_target(&s.target),
        }
    }

    pub fn denormalize_target(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|row| row.iter().map(|&v| v * self.target_scale).collect())
            .collect()
    }
}

/// Stacks normalized samples into `(batch, nodes, coords)` input and target
/// tensors.
pub fn batch_tensors<T: Scalar>(samples: &[&PoseSample]) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = samples
        .first()
        .ok_or_else(|| KogError::Config("empty batch".into()))?;
    let flat = |rows: &[Vec<f64>]| rows.iter().flatten().copied().collect::<Vec<f64>>();
    let shape = |rows: &[Vec<f64>]| [samples.len(), rows.len(), rows[0].len()];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in samples {
        xs.extend(flat(&s.input));
        ys.extend(flat(&s.target));
    }
    Ok((
        Tensor::from_f64(&shape(&first.input), &xs)?,
        Tensor::from_f64(&shape(&first.target), &ys)?,
    ))
}

/// Pinhole camera looking down +z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Camera {
    pub focal: f64,
    pub principal: [f64; 2],
    /// Range of the subject root depth, millimeters.
    pub depth_min: f64,
    pub depth_max: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            focal: 1000.0,
            principal: [0.0, 0.0],
            depth_min: 3000.0,
            depth_max: 6000.0,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) {
            return Err(KogError::Config(format!("focal length {} must be positive", self.focal)));
        }
        if !(self.depth_min > 0.0 && self.depth_max >= self.depth_min) {
            return Err(KogError::Config(format!(
                "depth range [{}, {}] invalid",
                self.depth_min, self.depth_max
            )));
        }
        Ok(())
    }

    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [
            self.focal * p[0] / p[2] + self.principal[0],
            self.focal * p[1] / p[2] + self.principal[1],
        ]
    }
}

type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

/// Rodrigues rotation about a unit axis.
fn axis_angle(axis: [f64; 3], angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn unit_vector(rng: &mut KogRng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

const DEFAULT_BONE_MM: f64 = 200.0;
/// Largest random rotation of a joint relative to its parent.
const MAX_JOINT_ANGLE: f64 = std::f64::consts::FRAC_PI_4;
const TEMPLATE_SEED: u64 = 0x5eed_b0e5;

/// Rest-pose bone directions and the parent-first traversal of a skeleton.
struct Kinematics {
    /// `(parent, child, length, rest direction)` in parent-first order.
    bones: Vec<(usize, usize, f64, [f64; 3])>,
    nodes: usize,
    root: usize,
}

impl Kinematics {
    fn new(skeleton: &SkeletonGraph) -> Self {
        let lengths: Vec<f64> = skeleton
            .bone_lengths()
            .map(|b| b.to_vec())
            .unwrap_or_else(|| vec![DEFAULT_BONE_MM; skeleton.edges().len()]);
        let length_of = |a: usize, b: usize| {
            let e = (a.min(b), a.max(b));
            let i = skeleton.edges().iter().position(|&x| x == e).expect("tree edge");
            lengths[i]
        };
        let adj = skeleton.neighbors();
        let root = skeleton.root();
        let mut template = seeded_rng(TEMPLATE_SEED);
        let mut bones = Vec::with_capacity(skeleton.num_nodes().saturating_sub(1));
        let mut seen = vec![false; skeleton.num_nodes()];
        let mut queue = std::collections::VecDeque::from([root]);
        seen[root] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    bones.push((v, w, length_of(v, w), unit_vector(&mut template)));
                    queue.push_back(w);
                }
            }
        }
        Self {
            bones,
            nodes: skeleton.num_nodes(),
            root,
        }
    }

    /// Root-relative joint positions under random per-joint rotations, plus
    /// each bone's global rotation.
    fn sample(&self, rng: &mut KogRng) -> (Vec<[f64; 3]>, Vec<Mat3>) {
        let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mut global = vec![identity; self.nodes];
        global[self.root] = axis_angle(unit_vector(rng), rng.gen_range(0.0..std::f64::consts::TAU));
        let mut pos = vec![[0.0; 3]; self.nodes];
        for &(parent, child, length, rest) in &self.bones {
            let local = axis_angle(unit_vector(rng), rng.gen_range(0.0..MAX_JOINT_ANGLE));
            global[child] = mat_mul(&global[parent], &local);
            let d = mat_vec(&global[child], rest);
            pos[child] = [0, 1, 2].map(|c| pos[parent][c] + length * d[c]);
        }
        (pos, global)
    }
}

/// Samples `count` poses by forward kinematics and projects them through
/// `camera`. Inputs are 2D image points; targets are root-relative camera
/// coordinates in millimeters. Poses with any joint behind the camera are
/// redrawn.
pub fn generate_synthetic(skeleton: &SkeletonGraph, count: usize, seed: u64, camera: &Camera) -> Result<Vec<PoseSample>> {
    camera.validate()?;
    let kin = Kinematics::new(skeleton);
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (rel, _) = kin.sample(&mut rng);
        let depth = rng.gen_range(camera.depth_min..=camera.depth_max);
        let shift = [rng.gen_range(-0.1..0.1) * depth, rng.gen_range(-0.1..0.1) * depth, depth];
        let world: Vec<[f64; 3]> = rel.iter().map(|p| [0, 1, 2].map(|c| p[c] + shift[c])).collect();
        if world.iter().any(|p| p[2] <= camera.focal * 1e-3) {
            continue;
        }
        out.push(PoseSample {
            input: world.iter().map(|&p| camera.project(p).to_vec()).collect(),
            target: rel.iter().map(|p| p.to_vec()).collect(),
        });
    }
    Ok(out)
}

/// Radial distance of synthetic surface vertices from their bone axis.
const MESH_RADIUS_MM: f64 = 10.0;

/// Pose-to-mesh pairs: inputs are root-relative 3D joints, targets are
/// `vertices` surface points placed around the bones at fixed fractions
/// and angles that rotate with each bone.
pub fn generate_mesh_synthetic(
    skeleton: &SkeletonGraph,
    vertices: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PoseSample>> {
    if skeleton.edges().is_empty() {
        return Err(KogError::Config("mesh synthesis needs at least one bone".into()));
    }
    let kin = Kinematics::new(skeleton);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let bones = kin.bones.len();
    let layout: Vec<(usize, f64, f64)> = (0..vertices)
        .map(|v| {
            let bone = v % bones;
            let ring = v / bones;
            let rings = vertices.div_ceil(bones);
            let t = (ring as f64 + 0.5) / rings as f64;
            (bone, t, golden * v as f64)
        })
        .collect();
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (pos, global) = kin.sample(&mut rng);
        let target = layout
            .iter()
            .map(|&(b, t, phi)| {
                let (parent, child, _, _) = kin.bones[b];
                let frame = &global[child];
                let radial = mat_vec(frame, [phi.cos(), 0.0, phi.sin()]);
                let rest = kin.bones[b].3;
                // component of the radial vector along the bone removed
                let axis = mat_vec(frame, rest);
                let along: f64 = (0..3).map(|c| radial[c] * axis[c]).sum();
                let mut off = [0, 1, 2].map(|c| radial[c] - along * axis[c]);
                let n = (off[0] * off[0] + off[1] * off[1] + off[2] * off[2]).sqrt().max(1e-9);
                off = off.map(|c| c / n * MESH_RADIUS_MM);
                [0, 1, 2]
                    .map(|c| pos[parent][c] + t * (pos[child][c] - pos[parent][c]) + off[c])
                    .to_vec()
            })
            .collect();
        out.push(PoseSample {
            input: pos.iter().map(|p| p.to_vec()).collect(),
            target,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body_schema() -> SampleSchema {
        SampleSchema::new((16, 2), (16, 3))
    }

    #[test]
    fn empty_file_gives_no_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_dataset(&p, body_schema(), 1).unwrap().is_empty());
    }

    #[test]
    fn one_line_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.jsonl");
        std::fs::write(&p, "{\"input\": [[1.5, -2.0]], \"target\": [[0.1, 0.2, 0.3]]}\n").unwrap();
        let got = load_dataset(&p, SampleSchema::new((1, 2), (1, 3)), 1).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].input, vec![vec![1.5, -2.0]]);
        assert_eq!(got[0].target, vec![vec![0.1, 0.2, 0.3]]);
    }

    #[test]
    fn thousand_random_samples_survive_write_and_read() {
        let mut rng = seeded_rng(17);
        let samples: Vec<PoseSample> = (0..1000)
            .map(|_| PoseSample {
                input: (0..16).map(|_| vec![rng.gen_range(-1e3..1e3), rng.gen::<f64>()]).collect(),
                target: (0..16)
                    .map(|_| (0..3).map(|_| rng.gen_range(-1e3..1e3)).collect())
                    .collect(),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("many.jsonl");
        write_dataset(&p, &samples).unwrap();
        for threads in [1, 4] {
            let back = load_dataset(&p, body_schema(), threads).unwrap();
            assert_eq!(back, samples);
        }
    }

    #[test]
    fn malformed_and_mismatched_lines_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let good = "{\"input\": [[1, 2]], \"target\": [[1, 2, 3]]}";
        std::fs::write(&p, format!("{good}\n\n{{not json\n")).unwrap();
        let schema = SampleSchema::new((1, 2), (1, 3));
        for threads in [1, 2] {
            match load_dataset(&p, schema, threads) {
                Err(KogError::Dataset { line, .. }) => assert_eq!(line, 3),
                other => panic!("expected a dataset error, got {other:?}"),
            }
        }
        std::fs::write(&p, format!("{good}\n{{\"input\": [[1, 2], [3, 4]], \"target\": [[1, 2, 3]]}}\n")).unwrap();
        match load_dataset(&p, schema, 1) {
            Err(KogError::Dataset { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("input has 2 rows"), "{msg}");
            }
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn normalization_inverts_and_roots_targets() {
        let samples = generate_synthetic(&SkeletonGraph::human36m_16(), 50, 3, &Camera::default()).unwrap();
        let stats = NormalizationStats::fit(&samples, Some(1)).unwrap();
        for s in &samples {
            let n = stats.normalize(s);
            assert_eq!(n.target[1], vec![0.0; 3]);
            let back = stats.denormalize(&n);
            for (a, b) in back.input.iter().flatten().zip(s.input.iter().flatten()) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
            for (a, b) in back.target.iter().flatten().zip(s.target.iter().flatten()) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
        // 32-bit storage of the normalized values still inverts within 1e-6 relative
        let n = stats.normalize(&samples[0]);
        let x32: Vec<f64> = n.input.iter().flatten().map(|&v| v as f32 as f64).collect();
        for (v, orig) in x32.chunks(2).zip(&samples[0].input) {
            for c in 0..2 {
                let back = v[c] * stats.input_std[c] + stats.input_mean[c];
                assert!((back - orig[c]).abs() <= 1e-6 * orig[c].abs().max(stats.input_std[c]));
            }
        }
    }

    #[test]
    fn constant_coordinate_is_rejected() {
        let s = PoseSample {
            input: vec![vec![1.0, 2.0], vec![3.0, 2.0]],
            target: vec![vec![0.0; 3]; 2],
        };
        let err = NormalizationStats::fit(&[s.clone(), s], Some(0)).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn synthetic_data_is_deterministic_and_keeps_bone_lengths() {
        let skel = SkeletonGraph::human36m_16();
        let cam = Camera::default();
        let a = generate_synthetic(&skel, 20, 9, &cam).unwrap();
        assert_eq!(a, generate_synthetic(&skel, 20, 9, &cam).unwrap());
        assert_ne!(a, generate_synthetic(&skel, 20, 10, &cam).unwrap());
        let lengths = skel.bone_lengths().unwrap();
        for s in &a {
            assert_eq!(s.target[skel.root()], vec![0.0; 3]);
            for (&(u, v), &len) in skel.edges().iter().zip(lengths) {
                let d: f64 = (0..3).map(|c| (s.target[u][c] - s.target[v][c]).powi(2)).sum::<f64>().sqrt();
                assert!((d - len).abs() <= 1e-6, "bone {u}-{v}: {d} vs {len}");
            }
        }
    }

    #[test]
    fn projected_points_are_in_front_and_consistent() {
        let cam = Camera::default();
        assert_eq!(cam.project([0.0, 0.0, 4000.0]), [0.0, 0.0]);
        let shifted = Camera {
            principal: [512.0, 384.0],
            ..cam
        };
        assert_eq!(shifted.project([0.0, 0.0, 2500.0]), [512.0, 384.0]);
        assert!(Camera { focal: 0.0, ..cam }.validate().is_err());
    }

    #[test]
    fn mesh_synthesis_shapes_and_determinism() {
        let hand = SkeletonGraph::hand_21();
        let a = generate_mesh_synthetic(&hand, 96, 4, 1).unwrap();
        assert_eq!(a, generate_mesh_synthetic(&hand, 96, 4, 1).unwrap());
        let schema = SampleSchema::new((21, 3), (96, 3));
        for s in &a {
            schema.check(s).unwrap();
            assert_eq!(s.input[hand.root()], vec![0.0; 3]);
        }
    }
}
