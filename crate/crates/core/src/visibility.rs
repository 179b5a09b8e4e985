//! Partial-visibility handling.
//!
//! When a vehicle turns so that only an end (or a side) stays in view, the
//! fitted rectangle shrinks and its center slides toward the visible
//! portion. Left uncorrected this injects a phantom velocity into the
//! tracker. Three mechanisms counter it:
//!
//! * size loss is detected by comparing the measured length/width to a
//!   long-term robust average,
//! * the measured center is re-anchored at the sensor-nearest corner so
//!   the full-size center stays put,
//! * the measurement covariance is widened along the target dimension
//!   whose far edge was not observed.
//!
//! Edge displacements live in the target frame: `x_f`/`x_r` are the front
//! and rear edge positions along the length axis, `y_r`/`y_l` the right
//! (+y) and left (-y) side positions, with `l = x_f - x_r` and
//! `w = y_r - y_l`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::angles::sin_cos;
use crate::covariance::{Measurement, VisibleEdges};
use crate::filter::MatchState;
use crate::scan::SensorOrigin;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VisibilityConfig {
    /// Measurements required before loss detection activates.
    pub min_history: usize,
    /// Retained size samples per dimension.
    pub history_cap: usize,
    /// Absolute floor of the loss threshold (m).
    pub loss_abs: f64,
    /// Fractional part of the loss threshold.
    pub loss_frac: f64,
    /// Variance assigned to a masked direction (m^2).
    pub masked_position_var: f64,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            min_history: 5,
            history_cap: 50,
            loss_abs: 0.5,
            loss_frac: 0.2,
            masked_position_var: 0.25,
        }
    }
}

impl VisibilityConfig {
    pub fn loss_threshold(&self, robust: f64) -> f64 {
        self.loss_abs.max(self.loss_frac * robust)
    }
}

/// Bounded history of measured sizes with running medians.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SizeMemory {
    length_samples: Vec<f64>,
    width_samples: Vec<f64>,
    cap: usize,
}

impl SizeMemory {
    pub fn new(cap: usize) -> Self {
        Self {
            length_samples: Vec::new(),
            width_samples: Vec::new(),
            cap,
        }
    }

    pub fn push_length(&mut self, l: f64) {
        push_bounded(&mut self.length_samples, l, self.cap);
    }

    pub fn push_width(&mut self, w: f64) {
        push_bounded(&mut self.width_samples, w, self.cap);
    }

    pub fn len(&self) -> usize {
        self.length_samples.len().min(self.width_samples.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn robust_l(&self) -> Option<f64> {
        median(&self.length_samples)
    }

    pub fn robust_w(&self) -> Option<f64> {
        median(&self.width_samples)
    }
}

fn push_bounded(v: &mut Vec<f64>, x: f64, cap: usize) {
    v.push(x);
    if v.len() > cap.max(1) {
        v.remove(0);
    }
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

/// Edge displacements in the target frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EdgeFrameDelta {
    pub dx_f: f64,
    pub dx_r: f64,
    pub dy_r: f64,
    pub dy_l: f64,
}

/// Flags edges lost to self-occlusion by comparing measured size to memory.
///
/// Requires `min_history` samples; with less, everything is assumed
/// visible. When the length comes up short, the end farther from the sensor
/// (in the target frame) is the one that left view; same for the width.
pub fn detect_visibility_loss(
    meas: &Measurement,
    memory: &SizeMemory,
    sensor: &SensorOrigin,
    cfg: &VisibilityConfig,
) -> VisibleEdges {
    let mut edges = VisibleEdges::all();
    if memory.len() < cfg.min_history {
        return edges;
    }
    let state = &meas.state;
    let (s, c) = sin_cos(state.t_theta);
    // Sensor direction in the target frame.
    let dx = sensor.x - state.tx;
    let dy = sensor.y - state.ty;
    let local_x = c * dx + s * dy;
    let local_y = -s * dx + c * dy;

    if let Some(robust_l) = memory.robust_l() {
        if robust_l - state.l > cfg.loss_threshold(robust_l) {
            if local_x >= 0.0 {
                edges.rear = false;
            } else {
                edges.front = false;
            }
        }
    }
    if let Some(robust_w) = memory.robust_w() {
        if robust_w - state.w > cfg.loss_threshold(robust_w) {
            if local_y >= 0.0 {
                edges.left = false;
            } else {
                edges.right = false;
            }
        }
    }
    edges
}

/// Maps edge displacements to center/size displacements:
/// `(dtx, dty) = R(theta) (1/2 (dx_f + dx_r), 1/2 (dy_r + dy_l))`,
/// `dl = dx_f - dx_r`, `dw = dy_r - dy_l`.
pub fn edge_deltas_to_center(delta: &EdgeFrameDelta, t_theta: f64) -> (f64, f64, f64, f64) {
    let (s, c) = sin_cos(t_theta);
    let mx = 0.5 * (delta.dx_f + delta.dx_r);
    let my = 0.5 * (delta.dy_r + delta.dy_l);
    (
        c * mx - s * my,
        s * mx + c * my,
        delta.dx_f - delta.dx_r,
        delta.dy_r - delta.dy_l,
    )
}

/// Offset that moves the measured center to where the full-size center
/// would be, holding the sensor-nearest corner fixed.
///
/// Per lost dimension, the remembered robust size replaces the measured
/// one; dimensions still fully visible contribute nothing. With nothing
/// lost (or no history) the offset is zero. The direction points away from
/// the sensor: a shrunken visible extent pulls the measured center toward
/// the sensor, and re-anchoring pushes it back out.
pub fn anchor_correction(
    _track_pose: &MatchState,
    meas: &Measurement,
    memory: &SizeMemory,
    sensor: &SensorOrigin,
) -> (f64, f64) {
    let state = &meas.state;
    let ((sx, sy), _) = state.nearest_corner([sensor.x, sensor.y]);
    let dl = if !meas.visible_edges.length_full() {
        memory.robust_l().map_or(0.0, |r| (r - state.l).max(0.0))
    } else {
        0.0
    };
    let dw = if !meas.visible_edges.width_full() {
        memory.robust_w().map_or(0.0, |r| (r - state.w).max(0.0))
    } else {
        0.0
    };
    let (s, c) = sin_cos(state.t_theta);
    let ax = sx * dl / 2.0;
    let ay = sy * dw / 2.0;
    (-(c * ax - s * ay), -(s * ax + c * ay))
}

/// Widens the measurement covariance along target dimensions whose far edge
/// was not observed.
///
/// The covariance is rotated into the target frame; a lost dimension is
/// decoupled (cross terms zeroed) and its variance raised to the masked
/// prior, leaving the marginals of the observed directions untouched. The
/// operation is idempotent for a fixed flag set and preserves positive
/// semi-definiteness.
pub fn mask_covariance(
    pose_cov: &Matrix3<f64>,
    visible_edges: &VisibleEdges,
    state: &MatchState,
    cfg: &VisibilityConfig,
) -> Matrix3<f64> {
    if visible_edges.all_visible() {
        return *pose_cov;
    }
    let (s, c) = sin_cos(state.t_theta);
    #[rustfmt::skip]
    let rot = Matrix3::new(
        c, -s, 0.0,
        s,  c, 0.0,
        0.0, 0.0, 1.0,
    );
    let mut local = rot.transpose() * pose_cov * rot;
    if !visible_edges.length_full() {
        decouple(&mut local, 0, cfg.masked_position_var);
    }
    if !visible_edges.width_full() {
        decouple(&mut local, 1, cfg.masked_position_var);
    }
    let out = rot * local * rot.transpose();
    0.5 * (out + out.transpose())
}

fn decouple(m: &mut Matrix3<f64>, idx: usize, floor_var: f64) {
    for k in 0..3 {
        if k != idx {
            m[(idx, k)] = 0.0;
            m[(k, idx)] = 0.0;
        }
    }
    m[(idx, idx)] = m[(idx, idx)].max(floor_var);
}

/// Convenience used by the tracker: measured sizes enter the memory only on
/// dimensions that were fully observed, so occluded views do not drag the
/// robust average down.
pub fn record_size(memory: &mut SizeMemory, meas: &Measurement) {
    if meas.visible_edges.length_full() {
        memory.push_length(meas.state.l);
    }
    if meas.visible_edges.width_full() {
        memory.push_width(meas.state.w);
    }
}
