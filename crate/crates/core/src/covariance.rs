//! First-order pose covariance by perturbation of the point positions.
//!
//! At the optimum the pose gradient vanishes; perturbing one hit by
//! `dp` shifts the optimum by `dt = -(H^-1) G dp`, where `H` is the pose
//! Hessian and `G` the 3x2 partial of that point's pose-gradient
//! contribution. With i.i.d. per-point noise of std `sigma_p` this
//! accumulates to
//!
//! ```text
//! R_t = sigma_p^2  H^-1 (sum_i G_i G_i^T) H^-1
//! ```
//!
//! The response magnitude cancels (H and G scale together), so the
//! covariance does not depend on the filter weights' absolute scale.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::filter::MatchState;
use crate::matching::MatchEval;

/// Which rectangle edges were actually observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleEdges {
    /// +x end of the vehicle.
    pub front: bool,
    /// -x end.
    pub rear: bool,
    /// +y side.
    pub right: bool,
    /// -y side.
    pub left: bool,
}

impl VisibleEdges {
    pub fn all() -> Self {
        Self {
            front: true,
            rear: true,
            right: true,
            left: true,
        }
    }

    pub fn all_visible(&self) -> bool {
        self.front && self.rear && self.right && self.left
    }

    /// Both ends observed, so the measured length is trustworthy.
    pub fn length_full(&self) -> bool {
        self.front && self.rear
    }

    pub fn width_full(&self) -> bool {
        self.right && self.left
    }
}

impl Default for VisibleEdges {
    fn default() -> Self {
        Self::all()
    }
}

/// One optimized measurement handed to the tracker.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub state: MatchState,
    /// Pose covariance over `(tx, ty, t_theta)`, symmetric PSD.
    pub pose_cov: Matrix3<f64>,
    pub score: f64,
    pub visible_edges: VisibleEdges,
    pub sigma_p: f64,
}

/// Pessimistic covariance substituted when the Hessian is degenerate:
/// 1 m in position, 30 degrees in angle.
pub fn fallback_covariance() -> Matrix3<f64> {
    let ang = 30.0_f64.to_radians();
    Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, ang * ang))
}

/// First-order covariance of the fitted pose; see the module docs.
///
/// Fails with [`CoreError::SingularHessian`] when the pose Hessian is
/// numerically singular (e.g. a cluster that does not constrain the angle);
/// callers substitute [`fallback_covariance`].
pub fn pose_covariance(eval: &MatchEval, sigma_p: f64) -> Result<Matrix3<f64>> {
    let h = eval.hess_t();
    let scale = (h[(0, 0)].abs() + h[(1, 1)].abs() + h[(2, 2)].abs()) / 3.0;
    let det = h.determinant();
    // `scale > 0.0` is false for zero and NaN alike; both are degenerate.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(scale > 0.0) || det.abs() < 1e-12 * scale.powi(3) {
        return Err(CoreError::SingularHessian { det });
    }
    let h_inv = h
        .try_inverse()
        .ok_or(CoreError::SingularHessian { det })?;

    let mut kernel = Matrix3::zeros();
    for g in &eval.point_partials {
        kernel += g * g.transpose();
    }
    let r = sigma_p * sigma_p * h_inv * kernel * h_inv.transpose();
    Ok(0.5 * (r + r.transpose()))
}
