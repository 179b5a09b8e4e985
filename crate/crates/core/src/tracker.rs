//! Multi-target tracker: per frame, clusters are assigned to predicted
//! tracks by a greedy auction, each track's merged cluster is fit with the
//! matched filter, the measurement covariance passes through the visibility
//! corrections, and an EKF with constant-turn-rate kinematics carries the
//! state. Unclaimed clusters seed tentative tracks; tracks confirm after a
//! run of hits and die after a run of misses.
//!
//! All objects are tracked regardless of type; vehicle discrimination is a
//! separate post-tracking stage.

use nalgebra::{Matrix3, Matrix3x5, Matrix5, Vector3};
use serde::{Deserialize, Serialize};

use crate::angles::wrap_angle;
use crate::covariance::{fallback_covariance, pose_covariance, Measurement, VisibleEdges};
use crate::ctrv::{self, KinState};
use crate::error::{CoreError, Result};
use crate::filter::{FilterTable, MatchState};
use crate::optimizer::{fit_with_sensor, initialize_state, OptimizerConfig};
use crate::scan::{cluster_points, remove_ground, Cluster, Frame, ScanConfig, SensorOrigin};
use crate::visibility::{
    anchor_correction, detect_visibility_loss, mask_covariance, record_size, SizeMemory,
    VisibilityConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub kin: KinState,
    pub kin_cov: Matrix5<f64>,
    pub size_memory: SizeMemory,
    pub last_measurement: Option<Measurement>,
    pub age: u32,
    pub missed_count: u32,
    pub hit_streak: u32,
    pub status: TrackStatus,
}

impl Track {
    /// Current best size estimate: robust memory, else the last measurement.
    pub fn size(&self) -> (f64, f64) {
        let l = self
            .size_memory
            .robust_l()
            .or(self.last_measurement.as_ref().map(|m| m.state.l))
            .unwrap_or(4.0);
        let w = self
            .size_memory
            .robust_w()
            .or(self.last_measurement.as_ref().map(|m| m.state.w))
            .unwrap_or(1.8);
        (l, w)
    }

    pub fn pose(&self) -> MatchState {
        let (l, w) = self.size();
        MatchState::new(self.kin.x, self.kin.y, self.kin.heading, w, l)
    }
}

/// Cluster-to-track pairing for one frame.
#[derive(Debug, Clone, Default)]
pub struct Assignment {
    /// `(cluster index, track id)`; a track may appear several times.
    pub pairs: Vec<(usize, u64)>,
    pub unassigned_clusters: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Association gate (m).
    pub gate: f64,
    /// Consecutive hits to confirm a tentative track.
    pub confirm_hits: u32,
    /// Consecutive misses before a track dies.
    pub miss_limit: u32,
    /// Process noise: linear acceleration std (m/s^2).
    pub accel_std: f64,
    /// Process noise: yaw acceleration std (rad/s^2).
    pub yaw_accel_std: f64,
    /// Initial speed std for new tracks (m/s).
    pub init_speed_std: f64,
    /// Initial yaw-rate std for new tracks (rad/s).
    pub init_yaw_rate_std: f64,
    /// Apply anchor correction and covariance masking.
    pub visibility_correction: bool,
    /// Floor added to the measured position variance (m^2): the
    /// perturbation covariance models point noise only, not model error
    /// from partially visible extents.
    pub position_var_floor: f64,
    /// Floor added to the measured heading variance (rad^2).
    pub heading_var_floor: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gate: 2.0,
            confirm_hits: 3,
            miss_limit: 5,
            accel_std: 1.0,
            yaw_accel_std: 0.5,
            init_speed_std: 5.0,
            init_yaw_rate_std: 0.5,
            visibility_correction: true,
            position_var_floor: 0.0025,
            heading_var_floor: 0.0012,
        }
    }
}

/// Greedy auction: candidate `(track, cluster)` pairs within the gate bid in
/// increasing center-distance order; each cluster joins its best still-open
/// bid. Leftover clusters whose centroid falls inside a track's
/// gate-inflated predicted rectangle also merge to it (several clusters may
/// back one target); the rest seed new tracks.
pub fn assign(clusters: &[Cluster], tracks: &[Track], gate: f64) -> Assignment {
    let mut pairs: Vec<(usize, u64)> = Vec::new();
    let mut cluster_taken = vec![false; clusters.len()];

    let mut bids: Vec<(f64, usize, usize)> = Vec::new(); // (dist, track idx, cluster idx)
    for (ti, t) in tracks.iter().enumerate() {
        for (ci, c) in clusters.iter().enumerate() {
            let cen = c.centroid();
            let d = ((cen[0] - t.kin.x).powi(2) + (cen[1] - t.kin.y).powi(2)).sqrt();
            if d <= gate {
                bids.push((d, ti, ci));
            }
        }
    }
    bids.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    for &(_, ti, ci) in &bids {
        if !cluster_taken[ci] {
            cluster_taken[ci] = true;
            pairs.push((ci, tracks[ti].id));
        }
    }

    // Merge phase: unclaimed clusters inside a track's inflated predicted
    // rectangle. A long target's visible face can sit further than the
    // gate from its anchored center, so this is not restricted to tracks
    // that already won a cluster.
    for (ci, c) in clusters.iter().enumerate() {
        if cluster_taken[ci] {
            continue;
        }
        let cen = c.centroid();
        let mut best: Option<(f64, usize)> = None;
        for (ti, t) in tracks.iter().enumerate() {
            let pose = t.pose();
            let (s, co) = crate::angles::sin_cos(pose.t_theta);
            let dx = cen[0] - pose.tx;
            let dy = cen[1] - pose.ty;
            let lx = co * dx + s * dy;
            let ly = -s * dx + co * dy;
            if lx.abs() <= pose.l / 2.0 + gate && ly.abs() <= pose.w / 2.0 + gate {
                let d = (dx * dx + dy * dy).sqrt();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, ti));
                }
            }
        }
        if let Some((_, ti)) = best {
            cluster_taken[ci] = true;
            pairs.push((ci, tracks[ti].id));
        }
    }

    let unassigned_clusters = (0..clusters.len()).filter(|&i| !cluster_taken[i]).collect();
    Assignment {
        pairs,
        unassigned_clusters,
    }
}

/// Per-track EKF measurement update with `h(x) = (x, y, heading)`.
///
/// `offset` is the anchor correction already expressed as a shift of the
/// measured center; applying it to the innovation is algebraically identical
/// to offsetting the state before the update and undoing it afterwards.
fn ekf_update(
    track: &mut Track,
    meas: &Measurement,
    masked_cov: &Matrix3<f64>,
    offset: (f64, f64),
) -> Result<()> {
    let eig = masked_cov.symmetric_eigenvalues();
    if eig.iter().any(|e| *e < -1e-12) {
        return Err(CoreError::NotPositiveSemiDefinite);
    }

    let mut h = Matrix3x5::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 2)] = 1.0;

    let x = track.kin.to_vector();
    let z = Vector3::new(
        meas.state.tx + offset.0,
        meas.state.ty + offset.1,
        meas.state.t_theta,
    );
    let mut innovation = z - h * x;
    // The filter cannot tell heading from heading + pi; fold the innovation
    // onto the nearer axis representative before wrapping.
    innovation[2] = crate::angles::wrap_axis(innovation[2]);

    let s_mat = h * track.kin_cov * h.transpose() + masked_cov;
    let s_inv = s_mat
        .try_inverse()
        .ok_or(CoreError::NotPositiveSemiDefinite)?;
    let k = track.kin_cov * h.transpose() * s_inv;
    let new_x = x + k * innovation;
    let i5 = Matrix5::identity();
    let p = (i5 - k * h) * track.kin_cov * (i5 - k * h).transpose()
        + k * masked_cov * k.transpose();
    track.kin = KinState::from_vector(&new_x);
    track.kin_cov = 0.5 * (p + p.transpose());
    Ok(())
}

/// Full predict-plus-update for one track and one measurement, exposed for
/// direct use in tests.
pub fn update(
    track: &Track,
    meas: &Measurement,
    sensor: &SensorOrigin,
    dt: f64,
    tracker_cfg: &TrackerConfig,
    vis_cfg: &VisibilityConfig,
) -> Result<Track> {
    let mut t = track.clone();
    if dt > 0.0 {
        predict_track(&mut t, dt, tracker_cfg);
    }
    apply_measurement(&mut t, meas, sensor, tracker_cfg, vis_cfg)?;
    Ok(t)
}

fn predict_track(track: &mut Track, dt: f64, cfg: &TrackerConfig) {
    let f = ctrv::jacobian(&track.kin, dt);
    let q = ctrv::process_noise(&track.kin, dt, cfg.accel_std, cfg.yaw_accel_std);
    track.kin = ctrv::predict_state(&track.kin, dt);
    let p = f * track.kin_cov * f.transpose() + q;
    track.kin_cov = 0.5 * (p + p.transpose());
}

fn apply_measurement(
    track: &mut Track,
    meas: &Measurement,
    sensor: &SensorOrigin,
    cfg: &TrackerConfig,
    vis_cfg: &VisibilityConfig,
) -> Result<()> {
    let mut meas = meas.clone();
    meas.visible_edges = detect_visibility_loss(&meas, &track.size_memory, sensor, vis_cfg);
    meas.pose_cov[(0, 0)] += cfg.position_var_floor;
    meas.pose_cov[(1, 1)] += cfg.position_var_floor;
    meas.pose_cov[(2, 2)] += cfg.heading_var_floor;

    let (masked, offset) = if cfg.visibility_correction {
        (
            mask_covariance(&meas.pose_cov, &meas.visible_edges, &meas.state, vis_cfg),
            anchor_correction(&track.pose(), &meas, &track.size_memory, sensor),
        )
    } else {
        (meas.pose_cov, (0.0, 0.0))
    };

    ekf_update(track, &meas, &masked, offset)?;
    canonicalize_motion(track);
    record_size(&mut track.size_memory, &meas);
    track.last_measurement = Some(meas);
    Ok(())
}

/// Rounds a warm-start pose to a coarse grid (0.1 m, 0.05 rad); the fit is
/// robust to far larger init perturbations.
fn snap_init(state: &MatchState) -> MatchState {
    let snap = |v: f64, q: f64| (v / q).round() * q;
    MatchState::new(
        snap(state.tx, 0.1),
        snap(state.ty, 0.1),
        snap(state.t_theta, 0.05),
        snap(state.w, 0.1),
        snap(state.l, 0.1),
    )
}

/// `(heading + pi, -speed)` describes the same motion; keep the
/// representative with non-negative speed so headings settle on the travel
/// direction once the target moves.
fn canonicalize_motion(track: &mut Track) {
    if track.kin.speed < 0.0 {
        track.kin.speed = -track.kin.speed;
        track.kin.heading = wrap_angle(track.kin.heading + std::f64::consts::PI);
        for k in 0..5 {
            if k != 3 {
                track.kin_cov[(3, k)] = -track.kin_cov[(3, k)];
                track.kin_cov[(k, 3)] = -track.kin_cov[(k, 3)];
            }
        }
    }
}

/// Output of one tracker step.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame_id: u64,
    pub timestamp: f64,
    /// `(track id, measurement)` for every track updated this frame.
    pub measurements: Vec<(u64, Measurement)>,
}

/// State snapshot used for serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub yaw_rate: f64,
    pub l: f64,
    pub w: f64,
    pub status: TrackStatus,
    pub cov_diag: [f64; 5],
}

/// The per-frame tracking loop with its configuration and track set.
pub struct Tracker {
    pub tracker_cfg: TrackerConfig,
    pub scan_cfg: ScanConfig,
    pub optimizer_cfg: OptimizerConfig,
    pub filter_table: FilterTable,
    pub visibility_cfg: VisibilityConfig,
    pub sigma_p: f64,
    pub tracks: Vec<Track>,
    next_id: u64,
    last_timestamp: Option<f64>,
}

impl Tracker {
    pub fn new(run: &crate::config::RunConfig) -> Self {
        Self {
            tracker_cfg: run.tracker.clone(),
            scan_cfg: run.scan.clone(),
            optimizer_cfg: run.optimizer.clone(),
            filter_table: run.filter.clone(),
            visibility_cfg: run.visibility.clone(),
            sigma_p: run.sigma_p,
            tracks: Vec::new(),
            next_id: 0,
            last_timestamp: None,
        }
    }

    /// Measures one cluster: warm-started fit, covariance, visibility flags.
    fn measure(
        &self,
        cluster: &Cluster,
        init: &MatchState,
        sensor: &SensorOrigin,
    ) -> Result<Measurement> {
        let res = fit_with_sensor(
            cluster,
            init,
            sensor,
            &self.optimizer_cfg,
            &self.filter_table,
        )?;
        let pose_cov = match pose_covariance(&res.eval, self.sigma_p) {
            Ok(c) => c,
            Err(CoreError::SingularHessian { .. }) => fallback_covariance(),
            Err(e) => return Err(e),
        };
        Ok(Measurement {
            state: res.state,
            pose_cov,
            score: res.score,
            visible_edges: VisibleEdges::all(),
            sigma_p: self.sigma_p,
        })
    }

    fn spawn_track(&mut self, meas: Measurement) {
        let mut kin_cov = Matrix5::zeros();
        kin_cov[(0, 0)] = meas.pose_cov[(0, 0)].max(1e-4);
        kin_cov[(1, 1)] = meas.pose_cov[(1, 1)].max(1e-4);
        kin_cov[(2, 2)] = meas.pose_cov[(2, 2)].max(1e-6);
        kin_cov[(0, 1)] = meas.pose_cov[(0, 1)];
        kin_cov[(1, 0)] = meas.pose_cov[(1, 0)];
        kin_cov[(3, 3)] = self.tracker_cfg.init_speed_std.powi(2);
        kin_cov[(4, 4)] = self.tracker_cfg.init_yaw_rate_std.powi(2);
        let mut memory = SizeMemory::new(self.visibility_cfg.history_cap);
        record_size(&mut memory, &meas);
        self.tracks.push(Track {
            id: self.next_id,
            kin: KinState {
                x: meas.state.tx,
                y: meas.state.ty,
                heading: meas.state.t_theta,
                speed: 0.0,
                yaw_rate: 0.0,
            },
            kin_cov,
            size_memory: memory,
            last_measurement: Some(meas),
            age: 0,
            missed_count: 0,
            hit_streak: 1,
            status: TrackStatus::Tentative,
        });
        self.next_id += 1;
    }

    /// Runs the full loop on one frame and returns what was measured.
    pub fn step(&mut self, frame: &Frame) -> Result<FrameOutput> {
        let dt = match self.last_timestamp {
            Some(t0) => {
                let dt = frame.timestamp - t0;
                if dt <= 0.0 {
                    return Err(CoreError::InvalidInput(format!(
                        "non-increasing timestamp {} after {}",
                        frame.timestamp, t0
                    )));
                }
                dt
            }
            None => 0.0,
        };
        self.last_timestamp = Some(frame.timestamp);

        let points = remove_ground(frame, self.scan_cfg.ground_height, self.scan_cfg.ground_margin);
        let clusters = cluster_points(&points, self.scan_cfg.cluster_gap, self.scan_cfg.sigma)?;

        if dt > 0.0 {
            for t in &mut self.tracks {
                predict_track(t, dt, &self.tracker_cfg);
                t.age += 1;
            }
        }

        let assignment = assign(&clusters, &self.tracks, self.tracker_cfg.gate);

        let mut measurements: Vec<(u64, Measurement)> = Vec::new();
        let mut updated: Vec<u64> = Vec::new();

        // Group clusters per track, preserving track order.
        for ti in 0..self.tracks.len() {
            let id = self.tracks[ti].id;
            let merged: Vec<&Cluster> = assignment
                .pairs
                .iter()
                .filter(|(_, tid)| *tid == id)
                .map(|(ci, _)| &clusters[*ci])
                .collect();
            if merged.is_empty() {
                continue;
            }
            let cluster = Cluster::merge(&merged)?;
            // Snap the warm start to a coarse grid: identical returns then
            // produce bit-identical fits regardless of sub-centimeter
            // prediction wiggle, so stationary targets measure dead still.
            let init = snap_init(&self.tracks[ti].pose());
            let meas = self.measure(&cluster, &init, &frame.sensor)?;
            let track = &mut self.tracks[ti];
            apply_measurement(
                track,
                &meas,
                &frame.sensor,
                &self.tracker_cfg,
                &self.visibility_cfg,
            )?;
            track.missed_count = 0;
            track.hit_streak += 1;
            if track.status == TrackStatus::Tentative
                && track.hit_streak >= self.tracker_cfg.confirm_hits
            {
                track.status = TrackStatus::Confirmed;
            }
            measurements.push((id, track.last_measurement.clone().unwrap()));
            updated.push(id);
        }

        for t in &mut self.tracks {
            if !updated.contains(&t.id) {
                t.missed_count += 1;
                t.hit_streak = 0;
                if t.missed_count >= self.tracker_cfg.miss_limit {
                    t.status = TrackStatus::Dead;
                }
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Dead);

        // New tracks from unclaimed clusters.
        for &ci in &assignment.unassigned_clusters {
            let cluster = &clusters[ci];
            let phi = crate::scan::viewing_angle(cluster, &frame.sensor);
            let init = initialize_state(cluster, phi, &self.optimizer_cfg.size_bounds)?;
            let meas = self.measure(cluster, &init, &frame.sensor)?;
            measurements.push((self.next_id, meas.clone()));
            self.spawn_track(meas);
        }

        Ok(FrameOutput {
            frame_id: frame.frame_id,
            timestamp: frame.timestamp,
            measurements,
        })
    }

    /// Serializable snapshot of the live tracks.
    pub fn records(&self) -> Vec<TrackRecord> {
        self.tracks
            .iter()
            .map(|t| {
                let (l, w) = t.size();
                TrackRecord {
                    id: t.id,
                    x: t.kin.x,
                    y: t.kin.y,
                    heading: t.kin.heading,
                    speed: t.kin.speed,
                    yaw_rate: t.kin.yaw_rate,
                    l,
                    w,
                    status: t.status,
                    cov_diag: [
                        t.kin_cov[(0, 0)],
                        t.kin_cov[(1, 1)],
                        t.kin_cov[(2, 2)],
                        t.kin_cov[(3, 3)],
                        t.kin_cov[(4, 4)],
                    ],
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::ScanPoint;

    fn make_track(id: u64, x: f64, y: f64) -> Track {
        Track {
            id,
            kin: KinState {
                x,
                y,
                heading: 0.0,
                speed: 0.0,
                yaw_rate: 0.0,
            },
            kin_cov: Matrix5::identity() * 0.1,
            size_memory: SizeMemory::new(50),
            last_measurement: None,
            age: 0,
            missed_count: 0,
            hit_streak: 0,
            status: TrackStatus::Confirmed,
        }
    }

    fn cluster_at(x: f64, y: f64) -> Cluster {
        Cluster::from_points(
            vec![ScanPoint {
                x,
                y,
                z: 1.0,
                frame_id: 0,
            }],
            0.15,
        )
        .unwrap()
    }

    #[test]
    fn assign_nearby() {
        let tracks = vec![make_track(7, 0.0, 0.0)];
        let clusters = vec![cluster_at(0.3, 0.1)];
        let a = assign(&clusters, &tracks, 2.0);
        assert_eq!(a.pairs, vec![(0, 7)]);
        assert!(a.unassigned_clusters.is_empty());
    }

    #[test]
    fn assign_outside_gate() {
        let tracks = vec![make_track(7, 0.0, 0.0)];
        let clusters = vec![cluster_at(10.0, 0.0)];
        let a = assign(&clusters, &tracks, 2.0);
        assert!(a.pairs.is_empty());
        assert_eq!(a.unassigned_clusters, vec![0]);
    }

    #[test]
    fn assign_merges_split_cluster() {
        let mut t = make_track(3, 0.0, 0.0);
        for _ in 0..6 {
            t.size_memory.push_length(4.5);
            t.size_memory.push_width(1.8);
        }
        let tracks = vec![t];
        // Two fragments of the same vehicle: one close to the center, the
        // second within the inflated rectangle but farther than the gate
        // from the center along the length axis.
        let clusters = vec![cluster_at(0.4, 0.0), cluster_at(-2.1, 0.3)];
        let a = assign(&clusters, &tracks, 2.0);
        assert_eq!(a.pairs.len(), 2);
        assert!(a.pairs.iter().all(|&(_, id)| id == 3));
        assert!(a.unassigned_clusters.is_empty());
    }

    #[test]
    fn update_rejects_non_psd() {
        let track = make_track(0, 0.0, 0.0);
        let meas = Measurement {
            state: MatchState::new(0.0, 0.0, 0.0, 1.8, 4.5),
            pose_cov: Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0)),
            score: 1.0,
            visible_edges: VisibleEdges::all(),
            sigma_p: 0.05,
        };
        let sensor = SensorOrigin {
            x: 10.0,
            y: 0.0,
            z: 2.0,
        };
        let r = update(
            &track,
            &meas,
            &sensor,
            0.1,
            &TrackerConfig::default(),
            &VisibilityConfig::default(),
        );
        assert!(matches!(r, Err(CoreError::NotPositiveSemiDefinite)));
    }

    #[test]
    fn coasting_grows_covariance() {
        let mut t = make_track(0, 0.0, 0.0);
        let cfg = TrackerConfig::default();
        let mut last = t.kin_cov.trace();
        for _ in 0..5 {
            predict_track(&mut t, 0.1, &cfg);
            let tr = t.kin_cov.trace();
            assert!(tr >= last);
            last = tr;
        }
    }
}
