//! Independent numerical oracles and scene builders shared by the
//! integration and acceptance suites. Nothing here reuses the closed-form
//! implementation paths it is meant to check.

#![allow(dead_code)]

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use boxtrack_core::filter::{FilterSpec, MatchState, Rect};
use boxtrack_core::scan::{Cluster, ScanPoint};

// ---------------------------------------------------------------------
// erf oracle: Maclaurin series for small arguments, Lentz continued
// fraction for the complementary function at large ones.
// ---------------------------------------------------------------------

/// erf(x) accurate to ~1e-14, independent of libm.
pub fn erf_oracle(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax <= 2.5 {
        erf_series(ax)
    } else {
        1.0 - erfc_cf(ax)
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) * sum_n (-1)^n x^(2n+1) / (n! (2n+1))
    let mut term = x;
    let mut sum = x;
    let x2 = x * x;
    for n in 1..200 {
        term *= -x2 / n as f64;
        let add = term / (2.0 * n as f64 + 1.0);
        sum += add;
        if add.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

fn erfc_cf(x: f64) -> f64 {
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + 1/(2x + 2/(x + 3/(2x + ...))))
    // evaluated with the modified Lentz algorithm.
    let tiny = 1e-300;
    let mut f: f64 = x.max(tiny);
    let mut c = f;
    let mut d = 0.0f64;
    for n in 1..300 {
        // A&S 7.1.14: numerators 1, 2, 3, ... with denominators
        // alternating 2x, x after the leading x.
        let a = n as f64;
        let b = if n % 2 == 1 { 2.0 * x } else { x };
        d = b + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() / f
}

// ---------------------------------------------------------------------
// Quadrature oracles.
// ---------------------------------------------------------------------

/// Composite-Simpson integral of `f` over `[a, b]` with step <= `max_step`.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, max_step: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut n = ((b - a) / max_step).ceil() as usize;
    n = n.max(4);
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

fn gauss_pdf(d: f64, sigma: f64) -> f64 {
    (-0.5 * d * d / (sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Mass of a unit 2D Gaussian inside a rectangle, by tensor-product Simpson
/// quadrature clipped to +-8 sigma around the mean.
pub fn rect_mass_quadrature(rect: &Rect, m: [f64; 2], sigma: f64, max_step: f64) -> f64 {
    let x0 = rect.xmin.max(m[0] - 8.0 * sigma);
    let x1 = rect.xmax.min(m[0] + 8.0 * sigma);
    let y0 = rect.ymin.max(m[1] - 8.0 * sigma);
    let y1 = rect.ymax.min(m[1] + 8.0 * sigma);
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let ix = simpson(|x| gauss_pdf(x - m[0], sigma), x0, x1, max_step);
    let iy = simpson(|y| gauss_pdf(y - m[1], sigma), y0, y1, max_step);
    ix * iy
}

/// Brute-force response: integral of the Gaussian-mixture signal against
/// the normalized filter, cell by cell over the rectangle arrangement.
///
/// The data is rotated into the filter frame with a locally written
/// transform (the closed form under test is never called).
pub fn response_quadrature(
    cluster: &Cluster,
    state: &boxtrack_core::filter::MatchState,
    spec: &FilterSpec,
    max_step: f64,
) -> f64 {
    let (s, c) = (state.t_theta.sin(), state.t_theta.cos());
    let local: Vec<[f64; 2]> = cluster
        .planar_means
        .iter()
        .map(|m| {
            let dx = m[0] - state.tx;
            let dy = m[1] - state.ty;
            [c * dx + s * dy, -s * dx + c * dy]
        })
        .collect();

    // Cut the plane along every rectangle edge; within a cell the filter is
    // the constant sum of covering heights.
    let mut xs: Vec<f64> = spec.rects.iter().flat_map(|r| [r.xmin, r.xmax]).collect();
    let mut ys: Vec<f64> = spec.rects.iter().flat_map(|r| [r.ymin, r.ymax]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();

    let mut total = 0.0;
    for ix in 0..xs.len() - 1 {
        for iy in 0..ys.len() - 1 {
            let cell = Rect::plain(xs[ix], xs[ix + 1], ys[iy], ys[iy + 1], 1.0);
            let net: f64 = spec
                .rects
                .iter()
                .filter(|r| {
                    r.xmin <= cell.xmin
                        && cell.xmax <= r.xmax
                        && r.ymin <= cell.ymin
                        && cell.ymax <= r.ymax
                })
                .map(|r| r.height)
                .sum();
            if net == 0.0 {
                continue;
            }
            for m in &local {
                total += net * rect_mass_quadrature(&cell, *m, cluster.sigma, max_step);
            }
        }
    }
    spec.alpha * total
}

/// Exact squared integral of a rectangle sum via pairwise intersection
/// areas: `integral s^2 = sum_ij h_i h_j area(R_i \cap R_j)`. An algebraic
/// route independent of the arrangement decomposition.
pub fn squared_integral_pairwise(rects: &[Rect]) -> f64 {
    let mut total = 0.0;
    for a in rects {
        for b in rects {
            let w = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
            let h = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
            total += a.height * b.height * w * h;
        }
    }
    total
}

/// Monte-Carlo estimate of the squared integral over the bounding box.
pub fn squared_integral_monte_carlo(rects: &[Rect], samples: usize, seed: u64) -> f64 {
    use rand::Rng;
    let x0 = rects.iter().map(|r| r.xmin).fold(f64::INFINITY, f64::min);
    let x1 = rects.iter().map(|r| r.xmax).fold(f64::NEG_INFINITY, f64::max);
    let y0 = rects.iter().map(|r| r.ymin).fold(f64::INFINITY, f64::min);
    let y1 = rects.iter().map(|r| r.ymax).fold(f64::NEG_INFINITY, f64::max);
    let area = (x1 - x0) * (y1 - y0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for _ in 0..samples {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        let s: f64 = rects
            .iter()
            .filter(|r| x >= r.xmin && x <= r.xmax && y >= r.ymin && y <= r.ymax)
            .map(|r| r.height)
            .sum();
        sum += s * s;
    }
    area * sum / samples as f64
}

// ---------------------------------------------------------------------
// Cluster builders.
// ---------------------------------------------------------------------

pub fn cluster_from(means: &[[f64; 2]], sigma: f64) -> Cluster {
    let pts: Vec<ScanPoint> = means
        .iter()
        .map(|m| ScanPoint {
            x: m[0],
            y: m[1],
            z: 1.0,
            frame_id: 0,
        })
        .collect();
    Cluster::from_points(pts, sigma).unwrap()
}

/// Deterministic pseudo-random cluster of `n` points in a box around the
/// origin, pure xorshift (no dependency on the crate's RNG choices).
pub fn random_cluster(seed: u64, n: usize, spread: [f64; 2], sigma: f64) -> Cluster {
    let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).max(1);
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let means: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                (next() - 0.5) * 2.0 * spread[0],
                (next() - 0.5) * 2.0 * spread[1],
            ]
        })
        .collect();
    cluster_from(&means, sigma)
}

// ---------------------------------------------------------------------
// Standard synthetic scenes.
// ---------------------------------------------------------------------

use boxtrack_core::synth::{Scenario, SceneObject, SensorModel, Trajectory, Waypoint};

/// Ground-vehicle sensor: 2 m mast, shallow look-down. Plain boxes seen
/// from here give almost no roof hits, so visible extents collapse on
/// head/tail views.
pub fn low_sensor() -> SensorModel {
    SensorModel {
        height: 2.0,
        azimuth_fov: 120f64.to_radians(),
        azimuth_step: 0.25f64.to_radians(),
        elevation_rows: 10,
        elevation_start: -1.0f64.to_radians(),
        elevation_step: -0.9f64.to_radians(),
        range_noise_std: 0.05,
        max_range: 80.0,
        frame_rate: 10.0,
        ..SensorModel::default()
    }
}

/// Mast sensor used for the accuracy scenes: taller, denser rows, so
/// clusters are well sampled with interior hits.
pub fn mast_sensor() -> SensorModel {
    SensorModel {
        height: 3.0,
        azimuth_fov: 180f64.to_radians(),
        azimuth_step: 0.25f64.to_radians(),
        elevation_rows: 12,
        elevation_start: -2.0f64.to_radians(),
        elevation_step: -1.0f64.to_radians(),
        range_noise_std: 0.05,
        max_range: 80.0,
        frame_rate: 10.0,
        ..SensorModel::default()
    }
}

pub const TRUE_L: f64 = 4.4;
pub const TRUE_W: f64 = 1.8;

/// One cab vehicle standing at `(x, y, heading)`.
pub fn standing_vehicle_scene(seed: u64, x: f64, y: f64, heading: f64, duration: f64) -> Scenario {
    Scenario {
        seed,
        duration,
        sensor: mast_sensor(),
        objects: vec![SceneObject::vehicle_with_cab(
            0,
            [TRUE_L, TRUE_W, 1.0],
            Trajectory::Static { x, y, heading },
        )],
    }
}

/// Constant-velocity crossing target.
pub fn crossing_scene(seed: u64, speed: f64, duration: f64) -> Scenario {
    Scenario {
        seed,
        duration,
        sensor: mast_sensor(),
        objects: vec![SceneObject::vehicle_with_cab(
            0,
            [TRUE_L, TRUE_W, 1.0],
            Trajectory::Line {
                x0: 18.0,
                y0: -0.5 * speed * duration,
                vx: 0.0,
                vy: speed,
            },
        )],
    }
}

/// Target circling in front of the sensor (plain box so visible extents
/// really collapse on head/tail views).
pub fn circling_scene(seed: u64, duration: f64) -> Scenario {
    let speed = 3.0;
    let radius = 10.0;
    Scenario {
        seed,
        duration,
        sensor: low_sensor(),
        objects: vec![SceneObject::vehicle(
            0,
            [TRUE_L, TRUE_W, 1.6],
            Trajectory::Circle {
                cx: 22.0,
                cy: 0.0,
                radius,
                angular_rate: speed / radius,
                phase: 0.0,
            },
        )],
    }
}

/// Stationary target that swings from side view to rear-only view over
/// one second in the middle of the run.
pub fn rotating_scene(seed: u64) -> Scenario {
    let (x, y) = (15.0, 0.0);
    Scenario {
        seed,
        duration: 5.0,
        sensor: low_sensor(),
        objects: vec![SceneObject::vehicle(
            0,
            [TRUE_L, TRUE_W, 1.6],
            Trajectory::Waypoints {
                points: vec![
                    Waypoint { t: 0.0, x, y, heading: std::f64::consts::FRAC_PI_2 - 0.6 },
                    Waypoint { t: 1.5, x, y, heading: std::f64::consts::FRAC_PI_2 - 0.6 },
                    Waypoint { t: 4.0, x, y, heading: 0.0 },
                    Waypoint { t: 5.0, x, y, heading: 0.0 },
                ],
            },
        )],
    }
}

/// Dense multi-target scene: `n` standing vehicles plus some clutter.
pub fn crowd_scene(seed: u64, n_vehicles: usize, duration: f64) -> Scenario {
    let mut objects = Vec::new();
    let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).max(1);
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut placed: Vec<(f64, f64)> = Vec::new();
    let mut id = 0i64;
    let mut attempts = 0u32;
    while (id as usize) < n_vehicles {
        attempts += 1;
        assert!(attempts < 200_000, "scene placement starved");
        let bearing = (next() - 0.5) * 140f64.to_radians();
        let range = 8.0 + next() * 36.0;
        let (x, y) = (range * bearing.cos(), range * bearing.sin());
        if placed.iter().any(|&(px, py)| ((px - x).powi(2) + (py - y).powi(2)).sqrt() < 4.5) {
            continue;
        }
        placed.push((x, y));
        objects.push(SceneObject::vehicle_with_cab(
            id,
            [TRUE_L, TRUE_W, 1.0],
            Trajectory::Static {
                x,
                y,
                heading: next() * std::f64::consts::TAU,
            },
        ));
        id += 1;
    }
    Scenario {
        seed,
        duration,
        sensor: SensorModel {
            azimuth_fov: 160f64.to_radians(),
            max_range: 60.0,
            ..mast_sensor()
        },
        objects,
    }
}

/// Random (cluster, state, phi) configuration for oracle checks, kept
/// clear of edge-omission and dominance switches so finite differences see
/// a smooth function.
pub fn random_config(seed: u64) -> (boxtrack_core::scan::Cluster, MatchState, f64) {
    let mut s = seed.wrapping_mul(0x2545f4914f6cdd1d).max(3);
    let mut next = move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let n = 10 + (next() * 30.0) as usize;
    let cluster = random_cluster(seed ^ 0xabcd, n, [2.8, 1.4], 0.1 + 0.1 * next());
    let state = MatchState::new(
        (next() - 0.5) * 0.8,
        (next() - 0.5) * 0.8,
        (next() - 0.5) * 2.0 * std::f64::consts::PI,
        1.2 + 1.8 * next(),
        3.0 + 3.0 * next(),
    );
    // Keep clear of edge-omission and dominance switches so central
    // differences see a smooth function.
    let mut phi = (next() - 0.5) * 2.0 * std::f64::consts::PI;
    let mut guard = 0;
    loop {
        let beta = boxtrack_core::angles::wrap_angle(state.t_theta - phi);
        let (sb, cb) = (beta.sin().abs(), beta.cos().abs());
        if sb > 6e-3 && cb > 6e-3 && (sb - cb).abs() > 6e-3 {
            break;
        }
        phi += 0.05;
        guard += 1;
        assert!(guard < 200);
    }
    (cluster, state, phi)
}
