//! Canonical-frame vehicle discrimination.
//!
//! Tracked objects are aligned into a per-object canonical coordinate
//! system: origin at the fitted rectangle's sensor-nearest corner, x along
//! the fitted length axis into the vehicle, y along the width axis into the
//! vehicle (mirrored so the point mass lies on +y, exploiting lateral
//! vehicle symmetry), z above local ground. The aligned 3D hits are binned
//! into a fixed occupancy grid normalized to unit sum, and a linear
//! classifier trained with L2-regularized hinge loss separates vehicles
//! from clutter.

use serde::{Deserialize, Serialize};

use crate::angles::sin_cos;
use crate::covariance::Measurement;
use crate::error::{CoreError, Result};
use crate::scan::{ScanPoint, SensorOrigin};

/// Pose-normalized 3D hits.
#[derive(Debug, Clone)]
pub struct CanonicalCloud {
    pub points: Vec<[f64; 3]>,
    /// World position of the corner used as origin.
    pub origin: [f64; 2],
    /// Whether the lateral mirror was applied.
    pub mirrored: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Extent along the canonical length axis (m).
    pub x_extent: f64,
    pub y_extent: f64,
    pub z_extent: f64,
    pub cell: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_extent: 6.0,
            y_extent: 3.0,
            z_extent: 2.5,
            cell: 0.25,
        }
    }
}

impl GridConfig {
    pub fn dims(&self) -> (usize, usize, usize) {
        (
            (self.x_extent / self.cell).round() as usize,
            (self.y_extent / self.cell).round() as usize,
            (self.z_extent / self.cell).round() as usize,
        )
    }

    pub fn len(&self) -> usize {
        let (nx, ny, nz) = self.dims();
        nx * ny * nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalized occupancy counts over the canonical grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub counts: Vec<f64>,
    pub config: GridConfig,
    /// Points that fell outside the grid.
    pub dropped: usize,
}

/// Aligns 3D hits into the canonical frame defined by a fitted measurement.
pub fn canonicalize(
    points: &[ScanPoint],
    meas: &Measurement,
    sensor: &SensorOrigin,
    ground_height: f64,
) -> Result<CanonicalCloud> {
    if points.is_empty() {
        return Err(CoreError::EmptyCluster);
    }
    let state = &meas.state;
    let ((sx, sy), corner) = state.nearest_corner([sensor.x, sensor.y]);
    let (s, c) = sin_cos(state.t_theta);

    let mut out: Vec<[f64; 3]> = Vec::with_capacity(points.len());
    let mut mean_y = 0.0;
    for p in points {
        let dx = p.x - corner[0];
        let dy = p.y - corner[1];
        // Coordinates along the vehicle axes, measured from the corner.
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        // Into the vehicle along the length axis.
        let xi = -sx * lx;
        let eta = -sy * ly;
        mean_y += eta;
        out.push([xi, eta, p.z - ground_height]);
    }
    mean_y /= out.len() as f64;
    let mirrored = mean_y < 0.0;
    if mirrored {
        for p in &mut out {
            p[1] = -p[1];
        }
    }
    Ok(CanonicalCloud {
        points: out,
        origin: corner,
        mirrored,
    })
}

/// Bins a canonical cloud into the occupancy grid, normalized to unit sum.
pub fn bin(cloud: &CanonicalCloud, config: &GridConfig) -> FeatureGrid {
    let (nx, ny, nz) = config.dims();
    let mut counts = vec![0.0; nx * ny * nz];
    let mut dropped = 0usize;
    for p in &cloud.points {
        let ix = (p[0] / config.cell).floor();
        let iy = (p[1] / config.cell).floor();
        let iz = (p[2] / config.cell).floor();
        if ix >= 0.0
            && iy >= 0.0
            && iz >= 0.0
            && (ix as usize) < nx
            && (iy as usize) < ny
            && (iz as usize) < nz
        {
            counts[((ix as usize) * ny + iy as usize) * nz + iz as usize] += 1.0;
        } else {
            dropped += 1;
        }
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        for c in &mut counts {
            *c /= total;
        }
    }
    FeatureGrid {
        counts,
        config: *config,
        dropped,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// L2 regularization strength.
    pub reg: f64,
    /// Full-batch subgradient epochs.
    pub epochs: usize,
    /// Initial step size of the decaying schedule.
    pub step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            reg: 3e-5,
            epochs: 8000,
            step: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub n_positive: usize,
    pub n_negative: usize,
    pub epochs: usize,
    pub reg: f64,
    pub final_objective: f64,
}

/// Linear decision function over a feature grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub grid_config: GridConfig,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub metadata: TrainMeta,
}

/// Trains by deterministic full-batch subgradient descent on
/// `reg/2 ||w||^2 + mean hinge(1 - y f(g))`; the bias is unregularized.
/// Full-batch averaging makes the result invariant to duplicating the
/// training set and exactly antisymmetric under label flips.
pub fn train(
    positives: &[FeatureGrid],
    negatives: &[FeatureGrid],
    cfg: &TrainConfig,
) -> Result<LinearClassifier> {
    if positives.is_empty() {
        return Err(CoreError::EmptyClass("positive"));
    }
    if negatives.is_empty() {
        return Err(CoreError::EmptyClass("negative"));
    }
    let dim = positives[0].counts.len();
    for g in positives.iter().chain(negatives) {
        if g.counts.len() != dim {
            return Err(CoreError::ShapeMismatch(format!(
                "grid of {} features among {}-feature set",
                g.counts.len(),
                dim
            )));
        }
    }

    // Occupancy grids are sparse (a few hundred of the ~3000 cells), so
    // samples are stored as index/value pairs and the L2 decay is folded
    // into a lazy scale factor on the weight vector.
    struct Sparse {
        idx: Vec<u32>,
        val: Vec<f64>,
        y: f64,
    }
    let sparse: Vec<Sparse> = positives
        .iter()
        .map(|g| (g, 1.0))
        .chain(negatives.iter().map(|g| (g, -1.0)))
        .map(|(g, y)| {
            let mut idx = Vec::new();
            let mut val = Vec::new();
            for (i, &c) in g.counts.iter().enumerate() {
                if c != 0.0 {
                    idx.push(i as u32);
                    val.push(c);
                }
            }
            Sparse { idx, val, y }
        })
        .collect();
    let n = sparse.len() as f64;

    let mut v = vec![0.0f64; dim];
    let mut scale = 1.0f64;
    let mut b = 0.0f64;
    let mut objective = f64::INFINITY;

    for epoch in 0..cfg.epochs {
        let eta = cfg.step / (1.0 + cfg.reg * cfg.step * epoch as f64);
        let mut gb = 0.0;
        let mut hinge_sum = 0.0;
        // Which samples violate the margin under the current weights.
        let mut active: Vec<usize> = Vec::new();
        for (k, s) in sparse.iter().enumerate() {
            let mut dot_sv = 0.0;
            for (i, x) in s.idx.iter().zip(&s.val) {
                dot_sv += v[*i as usize] * x;
            }
            let margin = 1.0 - s.y * (scale * dot_sv + b);
            if margin > 0.0 {
                hinge_sum += margin;
                active.push(k);
                gb -= s.y;
            }
        }
        // w <- (1 - eta reg) w + (eta / n) sum_active y x
        scale *= 1.0 - eta * cfg.reg;
        if scale.abs() < 1e-9 {
            for vi in v.iter_mut() {
                *vi *= scale;
            }
            scale = 1.0;
        }
        for &k in &active {
            let s = &sparse[k];
            let coef = eta * s.y / (n * scale);
            for (i, x) in s.idx.iter().zip(&s.val) {
                v[*i as usize] += coef * x;
            }
        }
        b -= eta * gb / n;
        let w_norm2: f64 = v.iter().map(|x| x * x).sum::<f64>() * scale * scale;
        objective = 0.5 * cfg.reg * w_norm2 + hinge_sum / n;
    }
    let w: Vec<f64> = v.iter().map(|x| x * scale).collect();

    Ok(LinearClassifier {
        grid_config: positives[0].config,
        weights: w,
        bias: b,
        metadata: TrainMeta {
            n_positive: positives.len(),
            n_negative: negatives.len(),
            epochs: cfg.epochs,
            reg: cfg.reg,
            final_objective: objective,
        },
    })
}

/// `<weights, grid> + bias`; positive means vehicle.
pub fn score(grid: &FeatureGrid, clf: &LinearClassifier) -> Result<f64> {
    if grid.counts.len() != clf.weights.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "grid has {} features, classifier {}",
            grid.counts.len(),
            clf.weights.len()
        )));
    }
    Ok(dot(&clf.weights, &grid.counts) + clf.bias)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
