//! Evaluation metrics in millimeters.
//!
//! Point sets are flat `(samples, nodes, 3)` buffers in row-major order.

use serde::{Deserialize, Serialize};

use crate::error::{KogError, Result};

pub const PCK_THRESHOLD_MM: f64 = 150.0;
pub const AUC_STEP_MM: f64 = 5.0;

/// Threshold grid `0, 5, ..., 150` mm used for AUC.
pub fn auc_thresholds() -> Vec<f64> {
    let steps = (PCK_THRESHOLD_MM / AUC_STEP_MM).round() as usize;
    (0..=steps).map(|i| i as f64 * AUC_STEP_MM).collect()
}

fn check(op: &'static str, pred: &[f64], gt: &[f64], nodes: usize) -> Result<usize> {
    if pred.len() != gt.len() {
        return Err(KogError::shape(
            op,
            format!("prediction has {} values, ground truth {}", pred.len(), gt.len()),
        ));
    }
    if nodes == 0 || !pred.len().is_multiple_of(nodes * 3) {
        return Err(KogError::shape(
            op,
            format!("{} values do not form (samples, {nodes}, 3)", pred.len()),
        ));
    }
    Ok(pred.len() / (nodes * 3))
}

/// Per-point Euclidean errors, optionally after subtracting each sample's
/// root point from both sets.
fn point_errors(pred: &[f64], gt: &[f64], nodes: usize, root: Option<usize>) -> Vec<f64> {
    let stride = nodes * 3;
    let mut out = Vec::with_capacity(pred.len() / 3);
    for (p, g) in pred.chunks(stride).zip(gt.chunks(stride)) {
        let (pr, gr) = match root {
            Some(r) => (&p[r * 3..r * 3 + 3], &g[r * 3..r * 3 + 3]),
            None => (&[0.0; 3][..], &[0.0; 3][..]),
        };
        for j in 0..nodes {
            let d2: f64 = (0..3)
                .map(|c| {
                    let d = (p[j * 3 + c] - pr[c]) - (g[j * 3 + c] - gr[c]);
                    d * d
                })
                .sum();
            out.push(d2.sqrt());
        }
    }
    out
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn check_root(root: usize, nodes: usize) -> Result<()> {
    if root >= nodes {
        return Err(KogError::Config(format!("root {root} outside {nodes} nodes")));
    }
    Ok(())
}

/// Root-aligned mean per-joint position error.
pub fn mpjpe(pred: &[f64], gt: &[f64], nodes: usize, root: usize) -> Result<f64> {
    check("mpjpe", pred, gt, nodes)?;
    check_root(root, nodes)?;
    Ok(mean(&point_errors(pred, gt, nodes, Some(root))))
}

/// Mean per-vertex error, no alignment.
pub fn mpve(pred: &[f64], gt: &[f64], nodes: usize) -> Result<f64> {
    check("mpve", pred, gt, nodes)?;
    Ok(mean(&point_errors(pred, gt, nodes, None)))
}

fn pck_of(errors: &[f64], threshold: f64) -> f64 {
    let hits = errors.iter().filter(|&&e| e <= threshold).count();
    100.0 * hits as f64 / errors.len() as f64
}

/// Root-aligned PCK at `threshold` and the AUC over `grid`, both in percent.
/// The root joint itself is not counted.
pub fn pck_and_auc(
    pred: &[f64],
    gt: &[f64],
    nodes: usize,
    root: usize,
    threshold: f64,
    grid: &[f64],
) -> Result<(f64, f64)> {
    check("pck", pred, gt, nodes)?;
    check_root(root, nodes)?;
    if grid.is_empty() {
        return Err(KogError::Config("empty AUC threshold grid".into()));
    }
    if nodes < 2 {
        return Err(KogError::shape("pck", "needs at least one joint besides the root"));
    }
    // the aligned root is exact by construction and is left out of the count
    let errors: Vec<f64> = point_errors(pred, gt, nodes, Some(root))
        .into_iter()
        .enumerate()
        .filter(|(i, _)| i % nodes != root)
        .map(|(_, e)| e)
        .collect();
    let auc = grid.iter().map(|&t| pck_of(&errors, t)).sum::<f64>() / grid.len() as f64;
    Ok((pck_of(&errors, threshold), auc))
}

/// Summary of one evaluation pass. Joint metrics are present for pose
/// models and the vertex metric for mesh models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mpjpe_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mpve_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pck_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    pub pck_threshold_mm: f64,
    pub auc_thresholds_mm: Vec<f64>,
}

impl MetricReport {
    /// Joint report: MPJPE, PCK@150mm and AUC.
    pub fn pose(pred: &[f64], gt: &[f64], nodes: usize, root: usize) -> Result<Self> {
        let grid = auc_thresholds();
        let (pck, auc) = pck_and_auc(pred, gt, nodes, root, PCK_THRESHOLD_MM, &grid)?;
        Ok(Self {
            samples: check("report", pred, gt, nodes)?,
            mpjpe_mm: Some(mpjpe(pred, gt, nodes, root)?),
            mpve_mm: None,
            pck_percent: Some(pck),
            auc: Some(auc),
            pck_threshold_mm: PCK_THRESHOLD_MM,
            auc_thresholds_mm: grid,
        })
    }

    /// Vertex report: MPVE only.
    pub fn mesh(pred: &[f64], gt: &[f64], nodes: usize) -> Result<Self> {
        Ok(Self {
            samples: check("report", pred, gt, nodes)?,
            mpjpe_mm: None,
            mpve_mm: Some(mpve(pred, gt, nodes)?),
            pck_percent: None,
            auc: None,
            pck_threshold_mm: PCK_THRESHOLD_MM,
            auc_thresholds_mm: auc_thresholds(),
        })
    }

    /// The headline error: MPJPE for pose reports, MPVE for mesh reports.
    pub fn primary_error(&self) -> f64 {
        self.mpjpe_mm.or(self.mpve_mm).unwrap_or(f64::NAN)
    }

    /// Checks documented ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| KogError::Contract(format!("{what} {v} out of range"));
        if self.samples == 0 {
            return Err(KogError::Contract("report over zero samples".into()));
        }
        for (name, v) in [("mpjpe", self.mpjpe_mm), ("mpve", self.mpve_mm)] {
            if let Some(v) = v.filter(|v| !(*v >= 0.0)) {
                return Err(bad(name, v));
            }
        }
        for (name, v) in [("pck", self.pck_percent), ("auc", self.auc)] {
            if let Some(v) = v.filter(|v| !(0.0..=100.0).contains(v)) {
                return Err(bad(name, v));
            }
        }
        Ok(())
    }
}
