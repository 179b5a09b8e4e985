//! Wall-clock profiling of the measurement path, shared by the `bench` CLI
//! subcommand and the throughput acceptance check.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::covariance::pose_covariance;
use crate::error::{CoreError, Result};
use crate::filter::FilterTable;
use crate::optimizer::{fit, initialize_state, OptimizerConfig};
use crate::scan::{cluster_points, remove_ground, viewing_angle, Cluster, Frame, ScanConfig};

/// Timing of repeated fit + covariance runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitTiming {
    pub fits: usize,
    pub mean_points_per_cluster: f64,
    pub mean_fit_us: f64,
    pub mean_covariance_us: f64,
    pub mean_total_us: f64,
    pub mean_iterations: f64,
}

/// Measures fit + covariance per cluster, on a single thread.
///
/// Every cluster is fit from its bounding-box initialization; the loop
/// repeats over the cluster list until at least `min_fits` fits ran.
pub fn time_fits(
    clusters: &[(Cluster, f64)],
    min_fits: usize,
    optimizer: &OptimizerConfig,
    table: &FilterTable,
    sigma_p: f64,
) -> Result<FitTiming> {
    if clusters.is_empty() {
        return Err(CoreError::InvalidInput("no clusters to time".into()));
    }
    let mut fit_ns = 0u128;
    let mut cov_ns = 0u128;
    let mut iterations = 0usize;
    let mut fits = 0usize;
    let mut points = 0usize;
    while fits < min_fits {
        for (cluster, phi) in clusters {
            let t0 = Instant::now();
            let init = initialize_state(cluster, *phi, &optimizer.size_bounds)?;
            let res = fit(cluster, &init, *phi, optimizer, table)?;
            let t1 = Instant::now();
            let _ = pose_covariance(&res.eval, sigma_p);
            let t2 = Instant::now();
            fit_ns += (t1 - t0).as_nanos();
            cov_ns += (t2 - t1).as_nanos();
            iterations += res.iterations;
            points += cluster.len();
            fits += 1;
        }
    }
    Ok(FitTiming {
        fits,
        mean_points_per_cluster: points as f64 / fits as f64,
        mean_fit_us: fit_ns as f64 / fits as f64 / 1000.0,
        mean_covariance_us: cov_ns as f64 / fits as f64 / 1000.0,
        mean_total_us: (fit_ns + cov_ns) as f64 / fits as f64 / 1000.0,
        mean_iterations: iterations as f64 / fits as f64,
    })
}

/// Per-stage report over a frame sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub mean_targets_per_frame: f64,
    /// Ground removal + clustering alone.
    pub mean_preprocess_ms: f64,
    /// One full tracker step (includes pre-processing, association, fits,
    /// covariance, visibility handling and the EKF update).
    pub mean_frame_ms: f64,
    pub fit: FitTiming,
}

/// Times pre-processing and full tracker steps over recorded frames, then
/// isolates fit + covariance cost over the frames' clusters.
pub fn bench_frames(
    frames: &[Frame],
    run: &crate::config::RunConfig,
    min_fits: usize,
) -> Result<BenchReport> {
    if frames.is_empty() {
        return Err(CoreError::InvalidInput("no frames".into()));
    }
    let scan: &ScanConfig = &run.scan;

    // Stage timing: ground removal + clustering.
    let mut pre_ns = 0u128;
    let mut all_clusters: Vec<(Cluster, f64)> = Vec::new();
    for frame in frames {
        let t0 = Instant::now();
        let pts = remove_ground(frame, scan.ground_height, scan.ground_margin);
        let clusters = cluster_points(&pts, scan.cluster_gap, scan.sigma)?;
        pre_ns += t0.elapsed().as_nanos();
        for c in clusters {
            let phi = viewing_angle(&c, &frame.sensor);
            all_clusters.push((c, phi));
        }
    }
    let targets = all_clusters.len() as f64 / frames.len() as f64;

    // Full tracker steps.
    let mut tracker = crate::tracker::Tracker::new(run);
    let mut step_ns = 0u128;
    for frame in frames {
        let t0 = Instant::now();
        tracker.step(frame)?;
        step_ns += t0.elapsed().as_nanos();
    }

    // Keep only reasonably sampled clusters for the per-fit statistics.
    let dense: Vec<(Cluster, f64)> = all_clusters
        .iter()
        .filter(|(c, _)| c.len() >= 20)
        .cloned()
        .collect();
    let pool = if dense.is_empty() { all_clusters } else { dense };
    let fit = time_fits(&pool, min_fits, &run.optimizer, &run.filter, run.sigma_p)?;

    Ok(BenchReport {
        frames: frames.len(),
        mean_targets_per_frame: targets,
        mean_preprocess_ms: pre_ns as f64 / frames.len() as f64 / 1e6,
        mean_frame_ms: step_ns as f64 / frames.len() as f64 / 1e6,
        fit,
    })
}
