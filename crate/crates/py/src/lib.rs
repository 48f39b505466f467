//! Python bindings: skeleton structures, metrics, synthetic data, models,
//! training and the gradient suite. Coordinates cross the boundary as
//! nested lists shaped `(samples, nodes, coords)`.

use kog_core::checkpoint::Checkpoint;
use kog_core::data::{
    batch_tensors, generate_mesh_synthetic, generate_synthetic, Camera, NormalizationStats, PoseSample,
};
use kog_core::gradcheck::{run_suite, GradCheckSettings};
use kog_core::graph::{
    build_order_masks, build_relative_index_map, build_scaled_laplacian, build_signed_distance, SkeletonGraph,
};
use kog_core::metrics::{auc_thresholds, PCK_THRESHOLD_MM};
use kog_core::models::{Model, ModelConfig};
use kog_core::train::{evaluate, train as train_model, TrainSettings};
use kog_core::KogError;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Nested = Vec<Vec<Vec<f64>>>;
type Pair = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn err(e: KogError) -> PyErr {
    match e {
        KogError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn flatten(x: &Nested, coords: usize, what: &str) -> PyResult<(Vec<f64>, usize)> {
    let nodes = x.first().map_or(0, Vec::len);
    if nodes == 0 {
        return Err(PyValueError::new_err(format!("{what} is empty")));
    }
    let mut flat = Vec::with_capacity(x.len() * nodes * coords);
    for sample in x {
        if sample.len() != nodes || sample.iter().any(|p| p.len() != coords) {
            return Err(PyValueError::new_err(format!("{what} must be shaped (samples, {nodes}, {coords})")));
        }
        flat.extend(sample.iter().flatten());
    }
    Ok((flat, nodes))
}

fn to_samples(pairs: Vec<Pair>) -> Vec<PoseSample> {
    pairs.into_iter().map(|(input, target)| PoseSample { input, target }).collect()
}

fn from_samples(samples: Vec<PoseSample>) -> Vec<Pair> {
    samples.into_iter().map(|s| (s.input, s.target)).collect()
}

#[pyclass(name = "Skeleton", module = "kog", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySkeleton {
    inner: SkeletonGraph,
}

#[pymethods]
impl PySkeleton {
    #[new]
    #[pyo3(signature = (num_nodes, edges, root=0))]
    fn new(num_nodes: usize, edges: Vec<(usize, usize)>, root: usize) -> PyResult<Self> {
        let inner = SkeletonGraph::new(num_nodes, edges).and_then(|g| g.with_root(root)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn body16() -> Self {
        Self { inner: SkeletonGraph::human36m_16() }
    }

    #[staticmethod]
    fn hand21() -> Self {
        Self { inner: SkeletonGraph::hand_21() }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: SkeletonGraph::load(path).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: SkeletonGraph::from_json_str(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json_string()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn root(&self) -> usize {
        self.inner.root()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    /// Signed tree distances, negative when the row index is smaller.
    fn signed_distance(&self) -> Vec<Vec<i64>> {
        build_signed_distance(&self.inner).rows()
    }

    #[pyo3(signature = (delta, directed=true))]
    fn relative_index_map(&self, delta: usize, directed: bool) -> PyResult<Vec<Vec<usize>>> {
        let n = self.inner.num_nodes();
        let idx = build_relative_index_map(&build_signed_distance(&self.inner), delta, directed).map_err(err)?;
        Ok((0..n).map(|m| (0..n).map(|k| idx.get(m, k)).collect()).collect())
    }

    /// `K + 1` matrices of 0/1 flags; 1 where the pair is `i` hops apart.
    fn order_masks(&self, order: usize) -> Vec<Vec<Vec<u8>>> {
        let n = self.inner.num_nodes();
        let masks = build_order_masks(&self.inner, order);
        (0..=order)
            .map(|i| (0..n).map(|m| (0..n).map(|k| u8::from(masks.is_admitted(i, m, k))).collect()).collect())
            .collect()
    }

    fn scaled_laplacian(&self) -> Vec<Vec<f64>> {
        let lap = build_scaled_laplacian(&self.inner);
        let n = lap.len();
        (0..n).map(|m| (0..n).map(|k| lap.get(m, k)).collect()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Skeleton(num_nodes={}, root={})", self.inner.num_nodes(), self.inner.root())
    }
}

/// A 64-bit model plus the normalization it was trained with, if any.
#[pyclass(name = "Model", module = "kog")]
struct PyModel {
    model: Model<f64>,
    skeleton: SkeletonGraph,
    stats: Option<NormalizationStats>,
    seed: u64,
    steps: u64,
}

impl PyModel {
    fn check_trained(&self) -> PyResult<&NormalizationStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("model has no normalization statistics; train it first"))
    }
}

#[pymethods]
impl PyModel {
    /// Fresh model from a JSON configuration such as
    /// `{"kind": "kog-transformer", "dim": 64}`.
    #[new]
    #[pyo3(signature = (skeleton, config, seed=0))]
    fn new(skeleton: &PySkeleton, config: &str, seed: u64) -> PyResult<Self> {
        let config: ModelConfig = serde_json::from_str(config).map_err(json_err)?;
        let model = Model::build(&skeleton.inner, &config, seed).map_err(err)?;
        Ok(Self { model, skeleton: skeleton.inner.clone(), stats: None, seed, steps: 0 })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::<f64>::load(path).map_err(err)?;
        let (model, skeleton) = ck.into_model().map_err(err)?;
        Ok(Self { model, skeleton, stats: ck.meta.stats.clone(), seed: ck.meta.seed, steps: ck.meta.step })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        Checkpoint::capture(&self.model, &self.skeleton, self.stats.as_ref(), self.seed, self.steps)
            .map_err(err)?
            .save(path)
            .map_err(err)
    }

    #[getter]
    fn config(&self) -> PyResult<String> {
        serde_json::to_string(&self.model.config()).map_err(json_err)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.model.store().count()
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.steps
    }

    /// Raw forward pass on already normalized inputs.
    fn forward(&self, inputs: Nested) -> PyResult<Nested> {
        let (in_nodes, coords) = self.model.config().input_shape();
        let (flat, nodes) = flatten(&inputs, coords, "inputs")?;
        if nodes != in_nodes {
            return Err(PyValueError::new_err(format!("expected {in_nodes} nodes, got {nodes}")));
        }
        let x = kog_core::tensor::Tensor::new(vec![inputs.len(), nodes, coords], flat).map_err(err)?;
        let y = self.model.predict(&x).map_err(err)?;
        let (out_nodes, out_dim) = self.model.config().output_shape();
        Ok(y.data().chunks(out_nodes * out_dim).map(|s| s.chunks(out_dim).map(<[f64]>::to_vec).collect()).collect())
    }

    /// Millimeter predictions for raw inputs, using the training normalization.
    fn predict(&self, inputs: Nested) -> PyResult<Nested> {
        let stats = self.check_trained()?;
        let (out_nodes, out_dim) = self.model.config().output_shape();
        let samples: Vec<PoseSample> = inputs
            .into_iter()
            .map(|input| stats.normalize(&PoseSample { input, target: vec![vec![0.0; out_dim]; out_nodes] }))
            .collect();
        let refs: Vec<&PoseSample> = samples.iter().collect();
        let (x, _) = batch_tensors::<f64>(&refs).map_err(err)?;
        let y = self.model.predict(&x).map_err(err)?;
        Ok(y.data()
            .chunks(out_nodes * out_dim)
            .map(|s| stats.denormalize_target(&s.chunks(out_dim).map(<[f64]>::to_vec).collect::<Vec<_>>()))
            .collect())
    }

    /// Metric report on `(input, target)` pairs, as a dict.
    #[pyo3(signature = (samples, batch_size=64))]
    fn evaluate<'py>(&self, py: Python<'py>, samples: Vec<Pair>, batch_size: usize) -> PyResult<Bound<'py, PyDict>> {
        let stats = self.check_trained()?;
        let report = evaluate(&self.model, stats, &to_samples(samples), batch_size).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("samples", report.samples)?;
        d.set_item("mpjpe_mm", report.mpjpe_mm)?;
        d.set_item("mpve_mm", report.mpve_mm)?;
        d.set_item("pck_percent", report.pck_percent)?;
        d.set_item("auc", report.auc)?;
        Ok(d)
    }

    /// `(module label, [c_0 .. c_K])` per KOG sublayer; empty for mesh models.
    fn fusion_weights(&self) -> Vec<(String, Vec<f64>)> {
        match &self.model {
            Model::Kog(m) => m.fusion_weights(),
            Model::Gase(_) => Vec::new(),
        }
    }

    fn __repr__(&self) -> String {
        format!("Model({}, parameters={})", self.model.config().kind_name(), self.model.store().count())
    }
}

/// Trains a 64-bit model. `settings` is a JSON object of training options
/// (`batch_size`, `max_steps`, `stop_below_mm`, ...).
#[pyfunction]
#[pyo3(signature = (skeleton, config, samples, settings="{}", seed=0))]
fn train(
    py: Python<'_>,
    skeleton: &PySkeleton,
    config: &str,
    samples: Vec<Pair>,
    settings: &str,
    seed: u64,
) -> PyResult<PyModel> {
    let config: ModelConfig = serde_json::from_str(config).map_err(json_err)?;
    let settings: TrainSettings = serde_json::from_str(settings).map_err(json_err)?;
    let samples = to_samples(samples);
    let skel = skeleton.inner.clone();
    let outcome = py
        .detach(|| train_model::<f64>(&skel, &config, &settings, &samples, None, seed, None))
        .map_err(err)?;
    Ok(PyModel { model: outcome.model, skeleton: skel, stats: Some(outcome.stats), seed, steps: outcome.steps })
}

/// Synthetic 2D-to-3D pairs: inputs in pixels, targets root-relative mm.
#[pyfunction]
#[pyo3(signature = (skeleton, count, seed=0))]
fn synth_poses(skeleton: &PySkeleton, count: usize, seed: u64) -> PyResult<Vec<Pair>> {
    Ok(from_samples(generate_synthetic(&skeleton.inner, count, seed, &Camera::default()).map_err(err)?))
}

/// Synthetic joints-to-vertices pairs.
#[pyfunction]
#[pyo3(signature = (skeleton, vertices, count, seed=0))]
fn synth_meshes(skeleton: &PySkeleton, vertices: usize, count: usize, seed: u64) -> PyResult<Vec<Pair>> {
    Ok(from_samples(generate_mesh_synthetic(&skeleton.inner, vertices, count, seed).map_err(err)?))
}

#[pyfunction]
#[pyo3(signature = (pred, gt, root=0))]
fn mpjpe(pred: Nested, gt: Nested, root: usize) -> PyResult<f64> {
    let (p, nodes) = flatten(&pred, 3, "pred")?;
    let (g, _) = flatten(&gt, 3, "gt")?;
    kog_core::metrics::mpjpe(&p, &g, nodes, root).map_err(err)
}

#[pyfunction]
fn mpve(pred: Nested, gt: Nested) -> PyResult<f64> {
    let (p, nodes) = flatten(&pred, 3, "pred")?;
    let (g, _) = flatten(&gt, 3, "gt")?;
    kog_core::metrics::mpve(&p, &g, nodes).map_err(err)
}

/// `(pck, auc)` in percent; the root joint is not counted.
#[pyfunction]
#[pyo3(signature = (pred, gt, root=0, threshold=PCK_THRESHOLD_MM))]
fn pck_and_auc(pred: Nested, gt: Nested, root: usize, threshold: f64) -> PyResult<(f64, f64)> {
    let (p, nodes) = flatten(&pred, 3, "pred")?;
    let (g, _) = flatten(&gt, 3, "gt")?;
    kog_core::metrics::pck_and_auc(&p, &g, nodes, root, threshold, &auc_thresholds()).map_err(err)
}

/// Finite-difference gradient suite; returns `(case, worst error, passed)`.
#[pyfunction]
#[pyo3(signature = (instances=20, only=None, seed=0))]
fn gradcheck(py: Python<'_>, instances: usize, only: Option<String>, seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let settings = GradCheckSettings { instances, seed, ..GradCheckSettings::default() };
    let report = py
        .detach(|| run_suite(&settings, None, |n| only.as_deref().is_none_or(|o| n.contains(o))))
        .map_err(err)?;
    Ok(report.cases.into_iter().map(|c| (c.name, c.worst_error, c.passed)).collect())
}

#[pymodule]
pub fn kog(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySkeleton>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(synth_poses, m)?)?;
    m.add_function(wrap_pyfunction!(synth_meshes, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(mpve, m)?)?;
    m.add_function(wrap_pyfunction!(pck_and_auc, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("PCK_THRESHOLD_MM", PCK_THRESHOLD_MM)?;
    Ok(())
}
