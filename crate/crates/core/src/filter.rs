//! The view-dependent rectangle filter and its normalization.
//!
//! The filter lives in a local frame with x along the vehicle length and the
//! origin at the rectangle center. It is the sum of up to four uniform
//! rectangles:
//!
//! * a negative surround, `(l + 1.5) x (w + 1.0)` at -0.25,
//! * a positive interior, `l x w` at +0.35 (net +0.10 over the surround),
//! * a side edge strip of depth 0.6 weighted `|sin beta|`,
//! * an end edge strip of depth 0.8 weighted `|cos beta|`,
//!
//! where `beta = t_theta - phi` is the angle between the vehicle orientation
//! and the ray to the sensor. Edge strips straddle the rectangle boundary on
//! the sensor-facing sides, centered on the ridge of surface Gaussians they
//! are matched to; the dominant edge spans its full dimension while the
//! other is shortened so the two never overlap. The whole sum is scaled by
//! `alpha` so that its squared integral is one, which removes the
//! range-dependent hit-count variation from the response.

use serde::{Deserialize, Serialize};

use crate::angles::{sin_cos, wrap_angle};
use crate::error::{CoreError, Result};

/// The 5-dimensional optimization variable: pose and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchState {
    pub tx: f64,
    pub ty: f64,
    /// Orientation of the length axis, wrapped to `(-pi, pi]`.
    pub t_theta: f64,
    /// Width (m).
    pub w: f64,
    /// Length (m).
    pub l: f64,
}

impl MatchState {
    pub fn new(tx: f64, ty: f64, t_theta: f64, w: f64, l: f64) -> Self {
        Self {
            tx,
            ty,
            t_theta: wrap_angle(t_theta),
            w,
            l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.l > 0.0) {
            return Err(CoreError::InvalidState(format!(
                "non-positive size w = {}, l = {}",
                self.w, self.l
            )));
        }
        for v in [self.tx, self.ty, self.t_theta, self.w, self.l] {
            if !v.is_finite() {
                return Err(CoreError::InvalidState("non-finite component".into()));
            }
        }
        Ok(())
    }

    /// World positions of the four rectangle corners, keyed by the local
    /// sign pair `(sx, sy)`.
    pub fn corners(&self) -> [((f64, f64), [f64; 2]); 4] {
        let (s, c) = sin_cos(self.t_theta);
        let mut out = [((0.0, 0.0), [0.0; 2]); 4];
        for (k, &(sx, sy)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
            .iter()
            .enumerate()
        {
            let lx = sx * self.l / 2.0;
            let ly = sy * self.w / 2.0;
            out[k] = (
                (sx, sy),
                [
                    self.tx + c * lx - s * ly,
                    self.ty + s * lx + c * ly,
                ],
            );
        }
        out
    }

    /// The corner nearest to `target` (world xy), as `((sx, sy), position)`.
    pub fn nearest_corner(&self, target: [f64; 2]) -> ((f64, f64), [f64; 2]) {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (signs, pos) in self.corners() {
            let d = (pos[0] - target[0]).powi(2) + (pos[1] - target[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = Some((signs, pos));
            }
        }
        best.unwrap()
    }
}

/// Which of the four regions a rectangle plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RectKind {
    Surround,
    Interior,
    SideEdge,
    EndEdge,
}

/// One weighted axis-aligned rectangle in the filter-local frame.
///
/// `dx_dl` and `dy_dw` carry the derivatives of the x-bounds with respect to
/// the length and of the y-bounds with respect to the width; `dh_dtheta` is
/// the derivative of the weight through `beta`. These feed the analytic
/// response derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub height: f64,
    pub kind: RectKind,
    pub dx_dl: [f64; 2],
    pub dy_dw: [f64; 2],
    pub dh_dtheta: f64,
}

impl Rect {
    /// Plain rectangle with no parameter sensitivities.
    pub fn plain(xmin: f64, xmax: f64, ymin: f64, ymax: f64, height: f64) -> Self {
        Self {
            xmin,
            xmax,
            ymin,
            ymax,
            height,
            kind: RectKind::Interior,
            dx_dl: [0.0; 2],
            dy_dw: [0.0; 2],
            dh_dtheta: 0.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn depth(&self) -> f64 {
        self.ymax - self.ymin
    }

    /// Second derivative of the weight with respect to `t_theta`; for edge
    /// strips `|sin|''= -|sin|` (and likewise for `|cos|`), zero otherwise.
    pub fn d2h_dtheta2(&self) -> f64 {
        match self.kind {
            RectKind::SideEdge | RectKind::EndEdge => -self.height,
            _ => 0.0,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }
}

/// Region weights and insets; Table defaults, loadable from a config file so
/// learned weights can drop in without code change.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FilterTable {
    pub surround_weight: f64,
    /// Sits on top of the overlapping surround; the net interior value is
    /// `interior_weight + surround_weight`.
    pub interior_weight: f64,
    /// Multiplies `|sin beta|` for the side edge.
    pub side_weight_scale: f64,
    /// Multiplies `|cos beta|` for the end edge.
    pub end_weight_scale: f64,
    /// Surround is `(l + surround_margin_l) x (w + surround_margin_w)`.
    pub surround_margin_l: f64,
    pub surround_margin_w: f64,
    /// Side edge depth in y (m); also the end-edge span reduction.
    pub side_depth: f64,
    /// End edge depth in x (m); also the side-edge span reduction.
    pub end_depth: f64,
    /// Edges whose angular factor falls below this are omitted.
    pub edge_epsilon: f64,
}

impl Default for FilterTable {
    fn default() -> Self {
        Self {
            surround_weight: -0.25,
            interior_weight: 0.35,
            side_weight_scale: 1.0,
            end_weight_scale: 1.0,
            surround_margin_l: 1.5,
            surround_margin_w: 1.0,
            side_depth: 0.6,
            end_depth: 0.8,
            edge_epsilon: 1e-3,
        }
    }
}

impl FilterTable {
    /// Returns a copy with every region weight multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            surround_weight: k * self.surround_weight,
            interior_weight: k * self.interior_weight,
            side_weight_scale: k * self.side_weight_scale,
            end_weight_scale: k * self.end_weight_scale,
            ..self.clone()
        }
    }
}

/// A built filter: rectangles, sensor angle, and normalization.
#[derive(Debug, Clone)]
pub struct FilterSpec {
    pub rects: Vec<Rect>,
    pub beta: f64,
    pub alpha: f64,
    pub phi: f64,
}

impl FilterSpec {
    /// Unnormalized field value `s(x, y)` at a local point.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        self.rects
            .iter()
            .filter(|r| r.contains(x, y))
            .map(|r| r.height)
            .sum()
    }
}

/// Builds the filter for a state and viewing angle per the region table.
pub fn build_filter(state: &MatchState, phi: f64, table: &FilterTable) -> Result<FilterSpec> {
    state.validate()?;
    let beta = wrap_angle(state.t_theta - phi);
    let (sb, cb) = sin_cos(beta);
    let half_l = state.l / 2.0;
    let half_w = state.w / 2.0;

    let mut rects = Vec::with_capacity(4);

    rects.push(Rect {
        xmin: -(state.l + table.surround_margin_l) / 2.0,
        xmax: (state.l + table.surround_margin_l) / 2.0,
        ymin: -(state.w + table.surround_margin_w) / 2.0,
        ymax: (state.w + table.surround_margin_w) / 2.0,
        height: table.surround_weight,
        kind: RectKind::Surround,
        dx_dl: [-0.5, 0.5],
        dy_dw: [-0.5, 0.5],
        dh_dtheta: 0.0,
    });

    rects.push(Rect {
        xmin: -half_l,
        xmax: half_l,
        ymin: -half_w,
        ymax: half_w,
        height: table.interior_weight,
        kind: RectKind::Interior,
        dx_dl: [-0.5, 0.5],
        dy_dw: [-0.5, 0.5],
        dh_dtheta: 0.0,
    });

    // The dominant edge spans its full dimension; ties go to the side edge.
    // Each strip is centered on its boundary line: the expected signal is a
    // ridge of surface Gaussians along the visible face, so the matched
    // strip straddles the rectangle edge. Sub-dominant spans are reduced by
    // the other strip's depth, centered, which tiles exactly against the
    // dominant strip's straddle band at the shared corner.
    let side_dominant = sb.abs() >= cb.abs();
    let side_present = sb.abs() >= table.edge_epsilon;
    let end_present = cb.abs() >= table.edge_epsilon;

    if side_present {
        // Sensor direction in the local frame is (cos beta, -sin beta), so
        // sin beta > 0 puts the sensor-facing side at -y.
        let sy = if sb > 0.0 { -1.0 } else { 1.0 };
        let boundary = sy * half_w;
        let half_depth = table.side_depth / 2.0;
        let half_span = if side_dominant {
            half_l
        } else {
            (state.l - table.end_depth) / 2.0
        };
        rects.push(Rect {
            xmin: -half_span,
            xmax: half_span,
            ymin: boundary - half_depth,
            ymax: boundary + half_depth,
            height: table.side_weight_scale * sb.abs(),
            kind: RectKind::SideEdge,
            dx_dl: [-0.5, 0.5],
            dy_dw: [sy * 0.5, sy * 0.5],
            dh_dtheta: table.side_weight_scale * sb.signum() * cb,
        });
    }

    if end_present {
        let sx = if cb > 0.0 { 1.0 } else { -1.0 };
        let boundary = sx * half_l;
        let half_depth = table.end_depth / 2.0;
        let half_span = if !side_dominant {
            half_w
        } else {
            (state.w - table.side_depth) / 2.0
        };
        rects.push(Rect {
            xmin: boundary - half_depth,
            xmax: boundary + half_depth,
            ymin: -half_span,
            ymax: half_span,
            height: table.end_weight_scale * cb.abs(),
            kind: RectKind::EndEdge,
            dx_dl: [sx * 0.5, sx * 0.5],
            dy_dw: [-0.5, 0.5],
            dh_dtheta: table.end_weight_scale * (-cb.signum()) * sb,
        });
    }

    let alpha = normalize_filter(&rects)?;
    Ok(FilterSpec {
        rects,
        beta,
        alpha,
        phi,
    })
}

/// Normalization constant `alpha = 1 / sqrt(integral of s^2)`.
///
/// Exact: the plane is cut along every rectangle boundary and the squared
/// net height is summed cell by cell.
pub fn normalize_filter(rects: &[Rect]) -> Result<f64> {
    if rects.is_empty() {
        return Err(CoreError::DegenerateFilter("no rectangles".into()));
    }
    let energy = squared_integral(rects);
    // False for zero and NaN alike; both are degenerate.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(energy > 0.0) {
        return Err(CoreError::DegenerateFilter(format!(
            "squared integral = {energy}"
        )));
    }
    Ok(1.0 / energy.sqrt())
}

/// Integral of the squared summed field over the plane, by arrangement
/// decomposition.
pub fn squared_integral(rects: &[Rect]) -> f64 {
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.xmin, r.xmax]).collect();
    let mut ys: Vec<f64> = rects.iter().flat_map(|r| [r.ymin, r.ymax]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.dedup();

    let mut terms = Vec::with_capacity((xs.len() - 1) * (ys.len() - 1));
    for ix in 0..xs.len().saturating_sub(1) {
        let (x0, x1) = (xs[ix], xs[ix + 1]);
        for iy in 0..ys.len().saturating_sub(1) {
            let (y0, y1) = (ys[iy], ys[iy + 1]);
            let net: f64 = rects
                .iter()
                .filter(|r| r.xmin <= x0 && x1 <= r.xmax && r.ymin <= y0 && y1 <= r.ymax)
                .map(|r| r.height)
                .sum();
            terms.push(net * net * (x1 - x0) * (y1 - y0));
        }
    }
    // Canonical summation order so that reflected rectangle sets produce a
    // bitwise-identical integral.
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}
