//! Synthetic LADAR frames by ray casting.
//!
//! A scanning sensor sweeps an azimuth fan over several elevation rows; each
//! ray keeps its nearest intersection among vehicle boxes, clutter
//! ellipsoids and the ground plane `z = 0`, perturbed by Gaussian range
//! noise along the ray. Hits carry the id of the object they struck (`-1`
//! for ground), which is the ground truth the acceptance tests consume.
//! Because rays are angularly uniform, surface sampling density follows the
//! subtended solid angle on its own.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::angles::wrap_angle;
use crate::error::{CoreError, Result};
use crate::scan::{Frame, ScanPoint, SensorOrigin};

/// Ground label in synthesized frames.
pub const GROUND_LABEL: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Vehicle,
    Clutter,
}

/// Pose over time.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Static {
        x: f64,
        y: f64,
        heading: f64,
    },
    Line {
        x0: f64,
        y0: f64,
        vx: f64,
        vy: f64,
    },
    Circle {
        cx: f64,
        cy: f64,
        radius: f64,
        /// rad/s; positive is counter-clockwise.
        angular_rate: f64,
        phase: f64,
    },
    /// Piecewise-linear in position and heading.
    Waypoints {
        points: Vec<Waypoint>,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Trajectory {
    pub fn pose_at(&self, t: f64) -> (f64, f64, f64) {
        match self {
            Trajectory::Static { x, y, heading } => (*x, *y, *heading),
            Trajectory::Line { x0, y0, vx, vy } => {
                (x0 + vx * t, y0 + vy * t, vy.atan2(*vx))
            }
            Trajectory::Circle {
                cx,
                cy,
                radius,
                angular_rate,
                phase,
            } => {
                let a = phase + angular_rate * t;
                let heading = a + std::f64::consts::FRAC_PI_2 * angular_rate.signum();
                (
                    cx + radius * a.cos(),
                    cy + radius * a.sin(),
                    wrap_angle(heading),
                )
            }
            Trajectory::Waypoints { points } => {
                assert!(!points.is_empty(), "empty waypoint list");
                if t <= points[0].t {
                    let p = points[0];
                    return (p.x, p.y, p.heading);
                }
                for pair in points.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    if t <= b.t {
                        let u = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 1.0 };
                        let dh = wrap_angle(b.heading - a.heading);
                        return (
                            a.x + u * (b.x - a.x),
                            a.y + u * (b.y - a.y),
                            wrap_angle(a.heading + u * dh),
                        );
                    }
                }
                let p = *points.last().unwrap();
                (p.x, p.y, p.heading)
            }
        }
    }
}

/// Axis lengths and offset of one clutter ellipsoid in the object frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

/// One box of a vehicle, in the vehicle frame: `offset` displaces its
/// center in the footprint plane, the box spans `[z0, z0 + size[2]]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BoxPart {
    pub offset: [f64; 2],
    pub size: [f64; 3],
    pub z0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneObject {
    pub id: i64,
    pub kind: ObjectKind,
    /// Footprint `(l, w, h)`; the ground truth the fit is compared against.
    pub size: [f64; 3],
    pub trajectory: Trajectory,
    /// Extra structure above the body (e.g. a cab); vehicles only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<BoxPart>,
    /// Clutter shape; empty for vehicles.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ellipsoids: Vec<Ellipsoid>,
}

impl SceneObject {
    /// A plain box.
    pub fn vehicle(id: i64, size: [f64; 3], trajectory: Trajectory) -> Self {
        Self {
            id,
            kind: ObjectKind::Vehicle,
            size,
            trajectory,
            parts: vec![BoxPart {
                offset: [0.0, 0.0],
                size,
                z0: 0.0,
            }],
            ellipsoids: Vec::new(),
        }
    }

    /// A body box with a taller cab over the rear half of the footprint,
    /// which is what puts hits in the filter's interior region at ordinary
    /// viewing angles.
    pub fn vehicle_with_cab(id: i64, size: [f64; 3], trajectory: Trajectory) -> Self {
        let [l, w, h] = size;
        Self {
            id,
            kind: ObjectKind::Vehicle,
            size,
            trajectory,
            parts: vec![
                BoxPart {
                    offset: [0.0, 0.0],
                    size,
                    z0: 0.0,
                },
                BoxPart {
                    offset: [-0.18 * l, 0.0],
                    size: [0.45 * l, 0.86 * w, 0.65 * h],
                    z0: h,
                },
            ],
            ellipsoids: Vec::new(),
        }
    }

    /// A blob of random ellipsoids standing in for a bush or tree.
    pub fn clutter(id: i64, trajectory: Trajectory, rng: &mut impl Rng) -> Self {
        let n = rng.random_range(3..=7);
        let ellipsoids = (0..n)
            .map(|_| {
                let cx = rng.random_range(-1.2..1.2);
                let cy = rng.random_range(-1.2..1.2);
                let cz = rng.random_range(0.3..1.6);
                Ellipsoid {
                    center: [cx, cy, cz],
                    semi_axes: [
                        rng.random_range(0.25..1.0),
                        rng.random_range(0.25..1.0),
                        rng.random_range(0.3..1.2),
                    ],
                }
            })
            .collect();
        Self {
            id,
            kind: ObjectKind::Clutter,
            size: [0.0; 3],
            trajectory,
            parts: Vec::new(),
            ellipsoids,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    pub trajectory: Trajectory,
    /// Mount height above ground (m).
    pub height: f64,
    /// Total azimuth fan (rad), centered on the sensor heading.
    pub azimuth_fov: f64,
    pub azimuth_step: f64,
    pub elevation_rows: usize,
    /// Elevation of the first row (rad, negative looks down).
    pub elevation_start: f64,
    pub elevation_step: f64,
    pub range_noise_std: f64,
    pub max_range: f64,
    pub frame_rate: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            trajectory: Trajectory::Static {
                x: 0.0,
                y: 0.0,
                heading: 0.0,
            },
            height: 2.0,
            azimuth_fov: 120f64.to_radians(),
            azimuth_step: 0.25f64.to_radians(),
            elevation_rows: 8,
            elevation_start: -1.0f64.to_radians(),
            elevation_step: -1.0f64.to_radians(),
            range_noise_std: 0.03,
            max_range: 80.0,
            frame_rate: 10.0,
        }
    }
}

/// A full scene description; serializes as the scenario file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration: f64,
    pub sensor: SensorModel,
    pub objects: Vec<SceneObject>,
}

struct PlacedObject<'a> {
    obj: &'a SceneObject,
    x: f64,
    y: f64,
    heading: f64,
}

/// First positive ray parameter hitting an upright box of size `(l, w, h)`
/// centered at `(x, y)`, spanning `[z0, z0 + h]`.
fn ray_box(
    origin: [f64; 3],
    dir: [f64; 3],
    x: f64,
    y: f64,
    heading: f64,
    size: [f64; 3],
    z0: f64,
) -> Option<f64> {
    let (s, c) = crate::angles::sin_cos(heading);
    // Into the box frame.
    let ox = origin[0] - x;
    let oy = origin[1] - y;
    let o = [c * ox + s * oy, -s * ox + c * oy, origin[2]];
    let d = [
        c * dir[0] + s * dir[1],
        -s * dir[0] + c * dir[1],
        dir[2],
    ];
    let bounds = [
        (-size[0] / 2.0, size[0] / 2.0),
        (-size[1] / 2.0, size[1] / 2.0),
        (z0, z0 + size[2]),
    ];
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < bounds[k].0 || o[k] > bounds[k].1 {
                return None;
            }
            continue;
        }
        let mut a = (bounds[k].0 - o[k]) / d[k];
        let mut b = (bounds[k].1 - o[k]) / d[k];
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    if t0 > 1e-9 {
        Some(t0)
    } else {
        None
    }
}

fn ray_ellipsoid(
    origin: [f64; 3],
    dir: [f64; 3],
    center: [f64; 3],
    semi: [f64; 3],
) -> Option<f64> {
    let o = [
        (origin[0] - center[0]) / semi[0],
        (origin[1] - center[1]) / semi[1],
        (origin[2] - center[2]) / semi[2],
    ];
    let d = [dir[0] / semi[0], dir[1] / semi[1], dir[2] / semi[2]];
    let a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let b = 2.0 * (o[0] * d[0] + o[1] * d[1] + o[2] * d[2]);
    let c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - 1.0;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t = (-b - sq) / (2.0 * a);
    if t > 1e-9 {
        Some(t)
    } else {
        let t = (-b + sq) / (2.0 * a);
        if t > 1e-9 {
            Some(t)
        } else {
            None
        }
    }
}

/// Standard normal via Box-Muller, consuming exactly two draws.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Renders one frame at time `t`.
pub fn render_frame(scene: &Scenario, frame_id: u64, t: f64, rng: &mut ChaCha8Rng) -> Frame {
    let (sx, sy, sheading) = scene.sensor.trajectory.pose_at(t);
    let sz = scene.sensor.height;
    let origin = [sx, sy, sz];

    let placed: Vec<PlacedObject> = scene
        .objects
        .iter()
        .map(|obj| {
            let (x, y, heading) = obj.trajectory.pose_at(t);
            PlacedObject { obj, x, y, heading }
        })
        .collect();

    let n_az = (scene.sensor.azimuth_fov / scene.sensor.azimuth_step).round() as usize + 1;
    let mut points = Vec::new();
    let mut labels = Vec::new();

    for row in 0..scene.sensor.elevation_rows {
        let el = scene.sensor.elevation_start + row as f64 * scene.sensor.elevation_step;
        let (sel, cel) = (el.sin(), el.cos());
        for k in 0..n_az {
            let az = sheading - scene.sensor.azimuth_fov / 2.0
                + k as f64 * scene.sensor.azimuth_step;
            let dir = [cel * az.cos(), cel * az.sin(), sel];

            let mut best: Option<(f64, i64)> = None;
            for p in &placed {
                let hit = match p.obj.kind {
                    ObjectKind::Vehicle => {
                        let (s, c) = crate::angles::sin_cos(p.heading);
                        p.obj
                            .parts
                            .iter()
                            .filter_map(|part| {
                                ray_box(
                                    origin,
                                    dir,
                                    p.x + c * part.offset[0] - s * part.offset[1],
                                    p.y + s * part.offset[0] + c * part.offset[1],
                                    p.heading,
                                    part.size,
                                    part.z0,
                                )
                            })
                            .fold(None, |acc: Option<f64>, t| {
                                Some(acc.map_or(t, |a| a.min(t)))
                            })
                    }
                    ObjectKind::Clutter => {
                        let (s, c) = crate::angles::sin_cos(p.heading);
                        p.obj
                            .ellipsoids
                            .iter()
                            .filter_map(|e| {
                                let center = [
                                    p.x + c * e.center[0] - s * e.center[1],
                                    p.y + s * e.center[0] + c * e.center[1],
                                    e.center[2],
                                ];
                                ray_ellipsoid(origin, dir, center, e.semi_axes)
                            })
                            .fold(None, |acc: Option<f64>, t| {
                                Some(acc.map_or(t, |a| a.min(t)))
                            })
                    }
                };
                if let Some(t_hit) = hit {
                    if best.is_none_or(|(bt, _)| t_hit < bt) {
                        best = Some((t_hit, p.obj.id));
                    }
                }
            }
            // Ground plane.
            if dir[2] < -1e-12 {
                let t_ground = -origin[2] / dir[2];
                if t_ground > 1e-9 && best.is_none_or(|(bt, _)| t_ground < bt) {
                    best = Some((t_ground, GROUND_LABEL));
                }
            }

            if let Some((range, label)) = best {
                if range <= scene.sensor.max_range {
                    let noisy = range + scene.sensor.range_noise_std * gauss(rng);
                    points.push(ScanPoint {
                        x: origin[0] + noisy * dir[0],
                        y: origin[1] + noisy * dir[1],
                        z: origin[2] + noisy * dir[2],
                        frame_id,
                    });
                    labels.push(label);
                }
            }
        }
    }

    Frame {
        frame_id,
        timestamp: t,
        sensor: SensorOrigin {
            x: origin[0],
            y: origin[1],
            z: origin[2],
        },
        points,
        labels: Some(labels),
    }
}

/// Renders the whole scenario: `ceil(duration * rate)` frames with strictly
/// increasing timestamps. Bit-identical for a fixed seed.
pub fn render_sequence(scene: &Scenario) -> Result<Vec<Frame>> {
    if scene.sensor.frame_rate <= 0.0 || scene.duration <= 0.0 {
        return Err(CoreError::InvalidInput(
            "duration and frame rate must be positive".into(),
        ));
    }
    let n = (scene.duration * scene.sensor.frame_rate).ceil() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    Ok((0..n)
        .map(|i| render_frame(scene, i, i as f64 / scene.sensor.frame_rate, &mut rng))
        .collect())
}

/// Points of `frame` labeled with `id`.
pub fn points_with_label(frame: &Frame, id: i64) -> Vec<ScanPoint> {
    match &frame.labels {
        Some(labels) => frame
            .points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == id)
            .map(|(p, _)| *p)
            .collect(),
        None => Vec::new(),
    }
}
