//! Closed-form matched-filter response and its exact derivatives.
//!
//! The signal is a sum of unit-mass isotropic Gaussians at the cluster's
//! planar means. Because the filter is a sum of axis-aligned rectangles,
//! its response to one Gaussian separates into products of 1D step
//! integrals,
//!
//! ```text
//! I(x_a, x_m) = 1/2 (1 + erf((x_m - x_a) / (sqrt(2) sigma)))
//! ```
//!
//! so the full response is a corner sum over rectangles and points, with no
//! discrete convolution. Rectangles stay axis-aligned; the data is moved
//! into the filter frame instead, rotated by the negative filter angle.
//!
//! `evaluate` returns the response together with its gradient and full
//! second-order Hessian over `(tx, ty, t_theta, w, l)` and the per-point
//! partials of the pose gradient needed for the perturbation covariance.
//! Three dependencies are accounted for exactly: the local point positions
//! depend on `(tx, ty, t_theta)`, the rectangle corners depend on `(w, l)`,
//! and the edge weights depend on `t_theta` through `beta`. The
//! normalization `alpha` is recomputed per call but treated as a constant in
//! all derivatives.

use nalgebra::{Matrix3, Matrix3x2, Matrix5, Vector2, Vector3, Vector5};

use crate::angles::sin_cos;
use crate::error::{CoreError, Result};
use crate::filter::{build_filter, FilterSpec, FilterTable, MatchState, Rect};
use crate::scan::Cluster;

/// Cluster means expressed in the filter-local frame.
#[derive(Debug, Clone)]
pub struct LocalPoints {
    pub coords: Vec<[f64; 2]>,
    pub origin: [f64; 2],
    pub angle: f64,
}

/// Mass of a 1D Gaussian `N(x_m, sigma)` above a step at `x_a`.
pub fn step_integral(x_a: f64, x_m: f64, sigma: f64) -> f64 {
    0.5 * (1.0 + libm::erf((x_m - x_a) / (std::f64::consts::SQRT_2 * sigma)))
}

/// Edges further than this many sigmas contribute a saturated step and a
/// zero density; `erf` rounds to +-1 beyond 6 already, so the cutoff is
/// exact in f64.
const TAIL_SIGMAS: f64 = 9.0;

/// Step integral alone at distance `d = u - e`.
#[inline]
fn step_piece(d: f64, sigma: f64) -> f64 {
    if d > TAIL_SIGMAS * sigma {
        1.0
    } else if d < -TAIL_SIGMAS * sigma {
        0.0
    } else {
        0.5 * (1.0 + libm::erf(d / (std::f64::consts::SQRT_2 * sigma)))
    }
}

/// `(step integral, pdf, pdf * d / sigma^2)` at distance `d = u - e`.
#[inline]
fn edge_pieces(d: f64, sigma: f64, inv_sig2: f64, norm: f64) -> (f64, f64, f64) {
    if d > TAIL_SIGMAS * sigma {
        return (1.0, 0.0, 0.0);
    }
    if d < -TAIL_SIGMAS * sigma {
        return (0.0, 0.0, 0.0);
    }
    let c = 0.5 * (1.0 + libm::erf(d / (std::f64::consts::SQRT_2 * sigma)));
    let g = norm * (-0.5 * d * d * inv_sig2).exp();
    (c, g, d * inv_sig2 * g)
}

/// Mass of a 2D Gaussian centered at `m` inside `rect`, times its height.
pub fn rect_integral(rect: &Rect, m: [f64; 2], sigma: f64) -> f64 {
    let ix = step_integral(rect.xmin, m[0], sigma) - step_integral(rect.xmax, m[0], sigma);
    let iy = step_integral(rect.ymin, m[1], sigma) - step_integral(rect.ymax, m[1], sigma);
    rect.height * ix * iy
}

/// Transforms planar means into the filter frame: `R(-t_theta) (m - m0)`.
pub fn to_filter_frame(means: &[[f64; 2]], m0: [f64; 2], t_theta: f64) -> LocalPoints {
    let (s, c) = sin_cos(t_theta);
    let coords = means
        .iter()
        .map(|m| {
            let dx = m[0] - m0[0];
            let dy = m[1] - m0[1];
            [c * dx + s * dy, -s * dx + c * dy]
        })
        .collect();
    LocalPoints {
        coords,
        origin: m0,
        angle: t_theta,
    }
}

/// Response value with exact derivatives.
#[derive(Debug, Clone)]
pub struct MatchEval {
    /// Normalized response `M`.
    pub value: f64,
    /// Gradient over `(tx, ty, t_theta, w, l)`.
    pub grad: Vector5<f64>,
    /// Full symmetric Hessian over the same five parameters.
    pub hess: Matrix5<f64>,
    /// Per-point `3 x 2` partials of the pose gradient with respect to the
    /// point's planar coordinates.
    pub point_partials: Vec<Matrix3x2<f64>>,
    /// Normalization used for this evaluation.
    pub alpha: f64,
}

impl MatchEval {
    /// Pose part of the gradient.
    pub fn grad_t(&self) -> Vector3<f64> {
        Vector3::new(self.grad[0], self.grad[1], self.grad[2])
    }

    /// Size part of the gradient, `(d/dw, d/dl)`.
    pub fn grad_w(&self) -> Vector2<f64> {
        Vector2::new(self.grad[3], self.grad[4])
    }

    /// Pose block of the Hessian.
    pub fn hess_t(&self) -> Matrix3<f64> {
        self.hess.fixed_view::<3, 3>(0, 0).into_owned()
    }
}

/// Evaluates the normalized response and all derivatives; `alpha` comes from
/// the freshly built filter.
pub fn evaluate(
    cluster: &Cluster,
    state: &MatchState,
    phi: f64,
    table: &FilterTable,
) -> Result<MatchEval> {
    let spec = build_filter(state, phi, table)?;
    evaluate_with_spec(cluster, state, &spec)
}

/// Same as [`evaluate`] but with the normalization pinned by the caller.
/// Used by finite-difference checks and anywhere `alpha` must stay frozen
/// across nearby states.
pub fn evaluate_frozen_alpha(
    cluster: &Cluster,
    state: &MatchState,
    phi: f64,
    table: &FilterTable,
    alpha: f64,
) -> Result<MatchEval> {
    let mut spec = build_filter(state, phi, table)?;
    spec.alpha = alpha;
    evaluate_with_spec(cluster, state, &spec)
}

/// Normalized response value only; cheaper than a full evaluation.
pub fn evaluate_value(
    cluster: &Cluster,
    state: &MatchState,
    phi: f64,
    table: &FilterTable,
) -> Result<f64> {
    let spec = build_filter(state, phi, table)?;
    Ok(response_value(cluster, state, &spec))
}

pub(crate) fn response_value(cluster: &Cluster, state: &MatchState, spec: &FilterSpec) -> f64 {
    let sigma = cluster.sigma;
    let (s_th, c_th) = sin_cos(state.t_theta);
    let mut total = 0.0;
    for m in &cluster.planar_means {
        let dx = m[0] - state.tx;
        let dy = m[1] - state.ty;
        let ux = c_th * dx + s_th * dy;
        let uy = -s_th * dx + c_th * dy;
        for r in &spec.rects {
            let ix = step_piece(ux - r.xmin, sigma) - step_piece(ux - r.xmax, sigma);
            if ix == 0.0 {
                continue;
            }
            let iy = step_piece(uy - r.ymin, sigma) - step_piece(uy - r.ymax, sigma);
            total += r.height * ix * iy;
        }
    }
    spec.alpha * total
}

/// Per-axis integral pieces of one rectangle for one point.
///
/// For the x axis (the y axis is symmetric with `w` in place of `l`):
/// `f` is the in-slab mass, `fu` its derivative in the local coordinate,
/// `fuu` the second, `fl` the derivative through the moving bounds,
/// `fll` and `flu` the corresponding second derivatives.
#[derive(Clone, Copy, Default)]
struct AxisPieces {
    f: f64,
    fu: f64,
    fuu: f64,
    fl: f64,
    fll: f64,
    flu: f64,
}

fn evaluate_with_spec(cluster: &Cluster, state: &MatchState, spec: &FilterSpec) -> Result<MatchEval> {
    evaluate_with_spec_mode(cluster, state, spec, true)
}

/// Gradient/Hessian-only evaluation for the optimizer's inner loop; skips
/// the per-point partial matrices.
pub(crate) fn evaluate_for_optimizer(
    cluster: &Cluster,
    state: &MatchState,
    phi: f64,
    table: &FilterTable,
) -> Result<MatchEval> {
    let spec = build_filter(state, phi, table)?;
    evaluate_with_spec_mode(cluster, state, &spec, false)
}

fn evaluate_with_spec_mode(
    cluster: &Cluster,
    state: &MatchState,
    spec: &FilterSpec,
    with_point_partials: bool,
) -> Result<MatchEval> {
    if cluster.is_empty() {
        return Err(CoreError::EmptyCluster);
    }
    let sigma = cluster.sigma;
    let (s_th, c_th) = sin_cos(state.t_theta);

    // Shared 1D pieces per unique edge coordinate: rectangles reuse slots so
    // each erf/exp pair is computed once per point and axis.
    let mut x_slots: Vec<(f64, f64, f64)> = Vec::with_capacity(8); // (coord, q, _)
    let mut y_slots: Vec<(f64, f64, f64)> = Vec::with_capacity(8);
    let slot_of = |slots: &mut Vec<(f64, f64, f64)>, coord: f64, q: f64| -> usize {
        if let Some(i) = slots
            .iter()
            .position(|&(c, qq, _)| c == coord && qq == q)
        {
            i
        } else {
            slots.push((coord, q, 0.0));
            slots.len() - 1
        }
    };
    struct RectSlots {
        x0: usize,
        x1: usize,
        y0: usize,
        y1: usize,
    }
    let rect_slots: Vec<RectSlots> = spec
        .rects
        .iter()
        .map(|r| RectSlots {
            x0: slot_of(&mut x_slots, r.xmin, r.dx_dl[0]),
            x1: slot_of(&mut x_slots, r.xmax, r.dx_dl[1]),
            y0: slot_of(&mut y_slots, r.ymin, r.dy_dw[0]),
            y1: slot_of(&mut y_slots, r.ymax, r.dy_dw[1]),
        })
        .collect();

    let inv_sig2 = 1.0 / (sigma * sigma);
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());

    // Per-slot values for the current point: (C, pdf, pdf').
    let mut xv = vec![(0.0f64, 0.0f64, 0.0f64); x_slots.len()];
    let mut yv = vec![(0.0f64, 0.0f64, 0.0f64); y_slots.len()];

    let mut value = 0.0;
    let mut grad = Vector5::zeros();
    let mut hess = Matrix5::zeros();
    let mut point_partials = Vec::with_capacity(cluster.planar_means.len());

    for m in &cluster.planar_means {
        let dx = m[0] - state.tx;
        let dy = m[1] - state.ty;
        let ux = c_th * dx + s_th * dy;
        let uy = -s_th * dx + c_th * dy;

        for (slot, &(e, _, _)) in x_slots.iter().enumerate() {
            xv[slot] = edge_pieces(ux - e, sigma, inv_sig2, norm);
        }
        for (slot, &(e, _, _)) in y_slots.iter().enumerate() {
            yv[slot] = edge_pieces(uy - e, sigma, inv_sig2, norm);
        }

        // Local coordinate derivatives with respect to (tx, ty, theta):
        // a_p = d ux / d p, b_p = d uy / d p. Size parameters move the
        // rectangle bounds instead, handled per rectangle below.
        let (a0, a1, a2) = (-c_th, -s_th, uy);
        let (b0, b1, b2) = (s_th, -c_th, -ux);
        // Derivatives of the local coordinates with respect to the point's
        // world position: d u / d m = R(-theta).
        let ux_m = [c_th, s_th];
        let uy_m = [-s_th, c_th];

        let mut pp = Matrix3x2::zeros();

        for (r, slots) in spec.rects.iter().zip(&rect_slots) {
            let (c0, g0, t0) = xv[slots.x0];
            let (c1, g1, t1) = xv[slots.x1];
            let (q0, q1) = (r.dx_dl[0], r.dx_dl[1]);
            let x = AxisPieces {
                f: c0 - c1,
                fu: g0 - g1,
                fuu: -t0 + t1,
                fl: -g0 * q0 + g1 * q1,
                fll: -t0 * q0 * q0 + t1 * q1 * q1,
                flu: t0 * q0 - t1 * q1,
            };
            let (c0, g0, t0) = yv[slots.y0];
            let (c1, g1, t1) = yv[slots.y1];
            let (q0, q1) = (r.dy_dw[0], r.dy_dw[1]);
            let y = AxisPieces {
                f: c0 - c1,
                fu: g0 - g1,
                fuu: -t0 + t1,
                fl: -g0 * q0 + g1 * q1,
                fll: -t0 * q0 * q0 + t1 * q1 * q1,
                flu: t0 * q0 - t1 * q1,
            };

            let h = r.height;
            let hp = r.dh_dtheta;
            let hpp = r.d2h_dtheta2();
            let f = x.f * y.f;

            value += h * f;

            // First derivatives of the per-point, per-rectangle term, with
            // the (tx, ty, theta, w, l) sparsity written out.
            let x0p = x.fu * a0;
            let x1p = x.fu * a1;
            let x2p = x.fu * a2;
            let y0p = y.fu * b0;
            let y1p = y.fu * b1;
            let y2p = y.fu * b2;

            grad[0] += h * (x0p * y.f + x.f * y0p);
            grad[1] += h * (x1p * y.f + x.f * y1p);
            grad[2] += hp * f + h * (x2p * y.f + x.f * y2p);
            grad[3] += h * x.f * y.fl;
            grad[4] += h * x.fl * y.f;

            // Pose block. Second derivatives of the local coordinates:
            // d2 ux = -ux and d2 uy = -uy for (theta, theta);
            // (tx, theta) -> (s, c); (ty, theta) -> (-c, s).
            hess[(0, 0)] += h * (x.fuu * a0 * a0 * y.f + 2.0 * x0p * y0p + x.f * y.fuu * b0 * b0);
            hess[(0, 1)] += h * (x.fuu * a0 * a1 * y.f + x0p * y1p + x1p * y0p + x.f * y.fuu * b0 * b1);
            hess[(1, 1)] += h * (x.fuu * a1 * a1 * y.f + 2.0 * x1p * y1p + x.f * y.fuu * b1 * b1);
            hess[(0, 2)] += hp * (x0p * y.f + x.f * y0p)
                + h * ((x.fuu * a0 * a2 + x.fu * s_th) * y.f
                    + x0p * y2p
                    + x2p * y0p
                    + x.f * (y.fuu * b0 * b2 + y.fu * c_th));
            hess[(1, 2)] += hp * (x1p * y.f + x.f * y1p)
                + h * ((x.fuu * a1 * a2 - x.fu * c_th) * y.f
                    + x1p * y2p
                    + x2p * y1p
                    + x.f * (y.fuu * b1 * b2 + y.fu * s_th));
            hess[(2, 2)] += hpp * f
                + 2.0 * hp * (x2p * y.f + x.f * y2p)
                + h * ((x.fuu * a2 * a2 - x.fu * ux) * y.f
                    + 2.0 * x2p * y2p
                    + x.f * (y.fuu * b2 * b2 - y.fu * uy));
            // Width column: y bounds move with w.
            hess[(0, 3)] += h * (x0p * y.fl + x.f * y.flu * b0);
            hess[(1, 3)] += h * (x1p * y.fl + x.f * y.flu * b1);
            hess[(2, 3)] += hp * x.f * y.fl + h * (x2p * y.fl + x.f * y.flu * b2);
            hess[(3, 3)] += h * x.f * y.fll;
            // Length column: x bounds move with l.
            hess[(0, 4)] += h * (x.flu * a0 * y.f + x.fl * y0p);
            hess[(1, 4)] += h * (x.flu * a1 * y.f + x.fl * y1p);
            hess[(2, 4)] += hp * x.fl * y.f + h * (x.flu * a2 * y.f + x.fl * y2p);
            hess[(3, 4)] += h * x.fl * y.fl;
            hess[(4, 4)] += h * x.fll * y.f;

            if !with_point_partials {
                continue;
            }
            // Partials of the pose gradient with respect to the point's
            // world coordinates.
            let xp = [x0p, x1p, x2p];
            let yp = [y0p, y1p, y2p];
            let ap = [a0, a1, a2];
            let bp = [b0, b1, b2];
            for v in 0..2 {
                let x_m = x.fu * ux_m[v];
                let y_m = y.fu * uy_m[v];
                for p in 0..3 {
                    let dux_p = if p == 2 { uy_m[v] } else { 0.0 };
                    let duy_p = if p == 2 { -ux_m[v] } else { 0.0 };
                    let x_p_m = x.fuu * ux_m[v] * ap[p] + x.fu * dux_p;
                    let y_p_m = y.fuu * uy_m[v] * bp[p] + y.fu * duy_p;
                    let hgrad = if p == 2 { hp } else { 0.0 };
                    let term = hgrad * (x_m * y.f + x.f * y_m)
                        + h * (x_p_m * y.f + xp[p] * y_m + x_m * yp[p] + x.f * y_p_m);
                    pp[(p, v)] += term;
                }
            }
        }

        if with_point_partials {
            point_partials.push(pp * spec.alpha);
        }
    }

    let alpha = spec.alpha;
    value *= alpha;
    grad *= alpha;
    hess *= alpha;
    // Fill the lower triangle.
    for p in 0..5 {
        for q in 0..p {
            hess[(p, q)] = hess[(q, p)];
        }
    }

    Ok(MatchEval {
        value,
        grad,
        hess,
        point_partials,
        alpha,
    })
}
