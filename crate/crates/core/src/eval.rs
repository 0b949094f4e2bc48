//! Geodesic-error evaluation of predicted vertex correspondences.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CseError, Result};
use crate::geodesics::{approximate_diameter, EdgeGraph, DIAMETER_SAMPLES, NORMALIZED_DIAMETER};
use crate::mesh::Mesh;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.1, 0.2, 0.3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAccuracy {
    pub threshold: f64,
    /// Fraction of points with error at or below the threshold.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_geodesic_error: f64,
    pub accuracy_at: Vec<ThresholdAccuracy>,
    pub per_point_errors: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Error quantile by the nearest-rank rule.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut sorted = self.per_point_errors.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.is_empty() {
            return 0.0;
        }
        let rank = ((q.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize).max(1);
        sorted[rank - 1]
    }
}

/// Geodesic distance between each predicted vertex and its ground truth.
pub fn point_errors(graph: &EdgeGraph, predicted: &[usize], truth: &[usize]) -> Result<Vec<f64>> {
    if predicted.len() != truth.len() {
        return Err(CseError::LengthMismatch {
            what: "predicted vertices",
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    predicted
        .par_iter()
        .zip(truth)
        .map(|(&p, &t)| if p == t { Ok(0.0) } else { graph.distance_between(t, p) })
        .collect()
}

pub fn evaluate(mesh: &Mesh, predicted: &[usize], truth: &[usize]) -> Result<EvalReport> {
    evaluate_with(mesh, predicted, truth, &DEFAULT_THRESHOLDS)
}

/// Errors are in mesh units, which equal normalized units on a mesh
/// rescaled to geodesic diameter 2.5; other meshes get a warning.
pub fn evaluate_with(
    mesh: &Mesh,
    predicted: &[usize],
    truth: &[usize],
    thresholds: &[f64],
) -> Result<EvalReport> {
    let graph = EdgeGraph::new(mesh);
    let errors = point_errors(&graph, predicted, truth)?;
    let mut warnings = Vec::new();
    let diameter = approximate_diameter(mesh, DIAMETER_SAMPLES);
    if (diameter / NORMALIZED_DIAMETER - 1.0).abs() > 0.01 {
        let msg = format!(
            "mesh diameter is {diameter:.4}, not {NORMALIZED_DIAMETER}; errors are in mesh units"
        );
        warn!("{msg}");
        warnings.push(msg);
    }
    let n = errors.len().max(1) as f64;
    let mean = crate::linalg::pairwise_sum(&errors) / n;
    let mut sorted_thresholds = thresholds.to_vec();
    sorted_thresholds.sort_by(f64::total_cmp);
    let accuracy_at = sorted_thresholds
        .into_iter()
        .map(|threshold| ThresholdAccuracy {
            threshold,
            accuracy: errors.iter().filter(|&&e| e <= threshold).count() as f64 / n,
        })
        .collect();
    Ok(EvalReport {
        mean_geodesic_error: mean,
        accuracy_at,
        per_point_errors: errors,
        warnings,
    })
}
