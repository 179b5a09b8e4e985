//! Levenberg-Marquardt maximization of the matched-filter response over
//! pose and size.
//!
//! The full second-order Hessian is used rather than a Gauss-Newton
//! approximation; away from the optimum it is generally indefinite, so the
//! damped system `(-H + lambda D)` is inflated until its smallest eigenvalue
//! is positive before solving. Steps are accepted only if the normalized
//! response increases. The normalization `alpha` (and optionally the viewing
//! angle `phi`) are refreshed after every accepted step and held constant
//! inside each linear solve.

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::angles::{wrap_angle, wrap_axis};
use crate::error::{CoreError, Result};
use crate::filter::{build_filter, FilterTable, MatchState};
use crate::matching::{response_value, MatchEval};
use crate::scan::{Cluster, SensorOrigin};

/// Size clamp applied at initialization and after every step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SizeBounds {
    pub min_l: f64,
    pub max_l: f64,
    pub min_w: f64,
    pub max_w: f64,
}

impl Default for SizeBounds {
    fn default() -> Self {
        Self {
            min_l: 1.0,
            max_l: 12.0,
            min_w: 0.8,
            max_w: 3.5,
        }
    }
}

impl SizeBounds {
    pub fn clamp(&self, w: f64, l: f64) -> (f64, f64) {
        (
            w.clamp(self.min_w, self.max_w),
            l.clamp(self.min_l, self.max_l),
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub lm_lambda_init: f64,
    pub lm_lambda_up: f64,
    pub lm_lambda_down: f64,
    /// Convergence when every translation/size step component is below this
    /// (m) and the angle step is below the same number (rad).
    pub convergence_tol: f64,
    /// Starting sigma of the coarse-to-fine continuation; rounds shrink it
    /// geometrically until the cluster's own sigma is reached.
    pub coarse_sigma: f64,
    /// Run the value-only size polish after the Levenberg-Marquardt pass.
    pub size_polish: bool,
    pub size_bounds: SizeBounds,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            lm_lambda_init: 1e-3,
            lm_lambda_up: 5.0,
            lm_lambda_down: 0.2,
            convergence_tol: 1e-3,
            coarse_sigma: 0.4,
            size_polish: true,
            size_bounds: SizeBounds::default(),
        }
    }
}

/// Outcome of one fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: MatchState,
    pub score: f64,
    pub iterations: usize,
    pub converged: bool,
    pub eval: MatchEval,
}

/// Starting state from the cluster bounding box.
///
/// The length axis follows the longer box dimension; of the two opposite
/// headings along that axis, the one pointing toward the sensor is chosen so
/// the dominant end edge faces it. Sizes are clamped to the configured
/// bounds with `l >= w`.
pub fn initialize_state(cluster: &Cluster, phi: f64, bounds: &SizeBounds) -> Result<MatchState> {
    if cluster.is_empty() {
        return Err(CoreError::EmptyCluster);
    }
    let center = cluster.bbox.center();
    let ext = cluster.bbox.extent();
    let (theta0, l0, w0) = if ext[0] >= ext[1] {
        (0.0, ext[0], ext[1])
    } else {
        (std::f64::consts::FRAC_PI_2, ext[1], ext[0])
    };
    let theta = if wrap_angle(theta0 - phi).abs() <= std::f64::consts::FRAC_PI_2 {
        theta0
    } else {
        wrap_angle(theta0 + std::f64::consts::PI)
    };
    let (w, l) = bounds.clamp(w0, l0);
    Ok(MatchState::new(center[0], center[1], theta, w, l))
}

/// Fits with a fixed viewing angle.
pub fn fit(
    cluster: &Cluster,
    init: &MatchState,
    phi: f64,
    cfg: &OptimizerConfig,
    table: &FilterTable,
) -> Result<FitResult> {
    fit_with(cluster, init, cfg, table, |_| phi)
}

/// Fits with the viewing angle refreshed from the current center after each
/// accepted step, which is what the tracker uses.
pub fn fit_with_sensor(
    cluster: &Cluster,
    init: &MatchState,
    sensor: &SensorOrigin,
    cfg: &OptimizerConfig,
    table: &FilterTable,
) -> Result<FitResult> {
    fit_with(cluster, init, cfg, table, |s: &MatchState| {
        crate::angles::atan2(sensor.y - s.ty, sensor.x - s.tx)
    })
}

/// Value-only refinement of `(w, l)` along boundary-anchored directions.
///
/// The optimizer's gradient treats `alpha` as constant, so it cannot see
/// the normalization cost of growing the rectangle; joint steps can leave
/// the size past its true optimum with no model direction pointing back.
/// This pass grows or shrinks one size dimension at a time, either holding
/// the sensor-facing boundary fixed or resizing symmetrically, and accepts
/// only steps that raise the fully normalized score.
fn polish_size(
    cluster: &Cluster,
    state: &mut MatchState,
    score: &mut f64,
    phi: f64,
    cfg: &OptimizerConfig,
    table: &FilterTable,
) -> Result<bool> {
    let mut improved = false;
    let mut step = 0.16;
    let floor = cfg.convergence_tol.max(0.1);
    while step >= floor {
        for along_w in [true, false] {
            // Best of the four variants (grow/shrink, anchored/symmetric)
            // is applied repeatedly while it pays.
            loop {
                let beta = crate::angles::wrap_angle(state.t_theta - phi);
                let (sb, cb) = crate::angles::sin_cos(beta);
                let (s, c) = crate::angles::sin_cos(state.t_theta);
                let mut best: Option<(f64, MatchState)> = None;
                for variant in 0..4 {
                    let delta = if variant % 2 == 0 { step } else { -step };
                    let anchored = variant < 2;
                    let mut cand = *state;
                    if along_w {
                        // Sensor-facing side: sin beta > 0 faces -y.
                        let sy = if sb > 0.0 { -1.0 } else { 1.0 };
                        cand.w += delta;
                        if anchored {
                            let shift = -sy * delta / 2.0; // facing boundary fixed
                            cand.tx += -s * shift;
                            cand.ty += c * shift;
                        }
                    } else {
                        let sx = if cb > 0.0 { 1.0 } else { -1.0 };
                        cand.l += delta;
                        if anchored {
                            let shift = -sx * delta / 2.0;
                            cand.tx += c * shift;
                            cand.ty += s * shift;
                        }
                    }
                    let (cw, cl) = cfg.size_bounds.clamp(cand.w, cand.l);
                    if cw != cand.w || cl != cand.l {
                        continue;
                    }
                    let spec = build_filter(&cand, phi, table)?;
                    let trial = response_value(cluster, &cand, &spec);
                    if trial > *score && best.is_none_or(|(b, _)| trial > b) {
                        best = Some((trial, cand));
                    }
                }
                match best {
                    Some((trial, cand)) => {
                        *state = cand;
                        *score = trial;
                        improved = true;
                    }
                    None => break,
                }
            }
        }
        step *= 0.5;
    }
    Ok(improved)
}

fn fit_with(
    cluster: &Cluster,
    init: &MatchState,
    cfg: &OptimizerConfig,
    table: &FilterTable,
    phi_of: impl Fn(&MatchState) -> f64,
) -> Result<FitResult> {
    if cluster.is_empty() {
        return Err(CoreError::EmptyCluster);
    }
    init.validate()?;

    let mut state = *init;
    let (w, l) = cfg.size_bounds.clamp(state.w, state.l);
    state.w = w;
    state.l = l;

    // Coarse-to-fine continuation: a bounding-box start can be tens of
    // degrees off in orientation, while the response basin at the cluster's
    // own sigma is only a few degrees wide. Early rounds run with an
    // inflated sigma to widen the basin, the final round uses the true
    // sigma. Still a single start and a single trajectory.
    let mut stages = Vec::new();
    let mut s = cfg.coarse_sigma;
    while s > cluster.sigma * 1.05 {
        stages.push(s);
        s *= 0.35;
    }
    stages.push(cluster.sigma);

    let mut iterations = 0;
    let mut converged = false;
    let mut final_result: Option<(f64, crate::matching::MatchEval)> = None;

    // Fast path: if the first damped step at the cluster's own sigma is
    // already below tolerance, the start is an optimum; skip the
    // continuation entirely. A warm start (small but not converged first
    // step) skips the coarse rounds and refines at the true sigma only.
    let warm;
    {
        let before = state;
        let mut probe_state = state;
        let (conv, score, eval) = lm_stage(
            cluster,
            &mut probe_state,
            cfg,
            table,
            &phi_of,
            1.0,
            &mut iterations,
            1,
            false,
        )?;
        if conv {
            let _ = eval;
            let full = crate::matching::evaluate(cluster, &probe_state, phi_of(&probe_state), table)?;
            return Ok(FitResult {
                state: probe_state,
                score,
                iterations,
                converged: true,
                eval: full,
            });
        }
        let step = (probe_state.tx - before.tx)
            .abs()
            .max((probe_state.ty - before.ty).abs())
            .max((probe_state.w - before.w).abs())
            .max((probe_state.l - before.l).abs())
            .max(wrap_angle(probe_state.t_theta - before.t_theta).abs());
        warm = step < 0.05;
        state = probe_state;
    }
    if warm {
        stages = vec![cluster.sigma];
    }

    for (si, &stage_sigma) in stages.iter().enumerate() {
        let is_final = si + 1 == stages.len();
        let stage_cluster;
        let cl: &Cluster = if is_final {
            cluster
        } else {
            // Coarse rounds only locate the basin; a thinned cluster is
            // plenty and much cheaper.
            stage_cluster = thinned(cluster, 48, stage_sigma);
            &stage_cluster
        };
        let tol_scale = if is_final { 1.0 } else { 30.0 };
        // Coarse rounds only need to land inside the fine basin.
        let stage_cap = if is_final {
            cfg.max_iterations
        } else {
            (iterations + 6).min(cfg.max_iterations)
        };
        let (conv, score, eval) = lm_stage(
            cl,
            &mut state,
            cfg,
            table,
            &phi_of,
            tol_scale,
            &mut iterations,
            stage_cap,
            is_final,
        )?;
        if is_final {
            converged = conv;
            final_result = Some((score, eval));
        }
    }
    let (score, eval) = final_result.expect("final stage always runs");
    // The inner loop skips the per-point partials; the reported evaluation
    // carries them for the covariance step.
    let _ = eval;
    let eval = crate::matching::evaluate(cluster, &state, phi_of(&state), table)?;

    Ok(FitResult {
        state,
        score,
        iterations,
        converged,
        eval,
    })
}

fn thinned(cluster: &Cluster, max_points: usize, sigma: f64) -> Cluster {
    if cluster.len() <= max_points {
        return Cluster {
            sigma,
            ..cluster.clone()
        };
    }
    let stride = cluster.len() as f64 / max_points as f64;
    let pts: Vec<_> = (0..max_points)
        .map(|i| cluster.points[(i as f64 * stride) as usize])
        .collect();
    Cluster::from_points(pts, sigma).expect("thinned cluster is nonempty")
}

#[allow(clippy::too_many_arguments)]
fn lm_stage(
    cluster: &Cluster,
    state_io: &mut MatchState,
    cfg: &OptimizerConfig,
    table: &FilterTable,
    phi_of: &impl Fn(&MatchState) -> f64,
    tol_scale: f64,
    iterations: &mut usize,
    stage_cap: usize,
    with_polish: bool,
) -> Result<(bool, f64, crate::matching::MatchEval)> {
    let mut state = *state_io;
    let tol = cfg.convergence_tol * tol_scale;

    let mut phi = phi_of(&state);
    let mut eval = crate::matching::evaluate_for_optimizer(cluster, &state, phi, table)?;
    let mut score = eval.value;
    let mut lambda = cfg.lm_lambda_init;
    let mut converged = false;

    // One iteration = one accepted step; a rejected trial raises lambda
    // and retries within the same iteration.
    'outer: while *iterations < stage_cap {
        *iterations += 1;

        let g = eval.grad;
        let neg_h = -eval.hess;
        let mut damping = Matrix5::zeros();
        for i in 0..5 {
            damping[(i, i)] = neg_h[(i, i)].abs().max(1.0);
        }

        loop {
            // Inflate lambda until the damped system is positive definite.
            let mut system;
            loop {
                system = neg_h + lambda * damping;
                let min_eig = system
                    .symmetric_eigenvalues()
                    .iter()
                    .fold(f64::INFINITY, |a, &b| a.min(b));
                if min_eig > 1e-9 {
                    break;
                }
                lambda *= 2.0;
                if !lambda.is_finite() {
                    break 'outer;
                }
            }

            let delta: Vector5<f64> = match system.cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    lambda *= 2.0;
                    continue;
                }
            };

            let mut candidate = MatchState::new(
                state.tx + delta[0],
                state.ty + delta[1],
                state.t_theta + delta[2],
                state.w + delta[3],
                state.l + delta[4],
            );
            let (cw, cl) = cfg.size_bounds.clamp(candidate.w, candidate.l);
            candidate.w = cw;
            candidate.l = cl;

            // Applied step, after clamping and wrapping.
            let step_lin = (candidate.tx - state.tx)
                .abs()
                .max((candidate.ty - state.ty).abs())
                .max((candidate.w - state.w).abs())
                .max((candidate.l - state.l).abs());
            let step_ang = wrap_angle(candidate.t_theta - state.t_theta).abs();
            let small = step_lin < tol && step_ang < tol;

            let trial_spec = build_filter(&candidate, phi, table)?;
            let trial = response_value(cluster, &candidate, &trial_spec);

            if trial > score {
                state = candidate;
                lambda = (lambda * cfg.lm_lambda_down).max(1e-12);
                phi = phi_of(&state);
                eval = crate::matching::evaluate_for_optimizer(cluster, &state, phi, table)?;
                score = eval.value;
                if small {
                    converged = true;
                    break 'outer;
                }
                break;
            }

            lambda *= cfg.lm_lambda_up;
            if small {
                // The damped step has shrunk below the tolerance and still
                // cannot improve the score: at an optimum within tol.
                converged = true;
                break 'outer;
            }
            if lambda > 1e14 {
                // No acceptable step at any damping; give up.
                break 'outer;
            }
        }
    }

    if with_polish
        && cfg.size_polish
        && polish_size(cluster, &mut state, &mut score, phi, cfg, table)?
    {
        phi = phi_of(&state);
        eval = crate::matching::evaluate(cluster, &state, phi, table)?;
        score = eval.value;
    }

    *state_io = state;
    Ok((converged, score, eval))
}

/// Orientation error between two states, identifying `theta` and
/// `theta + pi` (the rectangle response cannot distinguish them).
pub fn axis_error(theta_a: f64, theta_b: f64) -> f64 {
    wrap_axis(theta_a - theta_b).abs()
}
