//! Shared scene builders for the benchmarks.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use boxtrack_core::scan::{cluster_points, remove_ground, viewing_angle, Cluster, Frame};
use boxtrack_core::synth::{render_frame, Scenario, SceneObject, SensorModel, Trajectory};

/// Renders one vehicle at the given range/angle and returns its cluster and
/// viewing angle, shrunk or padded to roughly `target_hits` points.
pub fn vehicle_cluster(seed: u64, range: f64, beta_deg: f64, target_hits: usize) -> (Cluster, f64) {
    // Azimuth resolution tuned so the target subtends about the right
    // number of rays.
    let scene = Scenario {
        seed,
        duration: 0.1,
        sensor: SensorModel {
            height: 3.0,
            azimuth_fov: 120f64.to_radians(),
            azimuth_step: 0.25f64.to_radians(),
            elevation_rows: 12,
            elevation_start: -2.0f64.to_radians(),
            elevation_step: -1.0f64.to_radians(),
            range_noise_std: 0.05,
            ..SensorModel::default()
        },
        objects: vec![SceneObject::vehicle_with_cab(
            0,
            [4.4, 1.8, 1.0],
            Trajectory::Static {
                x: range,
                y: 0.0,
                heading: beta_deg.to_radians() + std::f64::consts::PI,
            },
        )],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = render_frame(&scene, 0, 0.0, &mut rng);
    let frame = Frame {
        points: boxtrack_core::synth::points_with_label(&frame, 0),
        ..frame
    };
    let pts = remove_ground(&frame, 0.0, 0.3);
    let mut clusters = cluster_points(&pts, 1.0, 0.15).expect("clustering");
    clusters.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let mut cluster = clusters.into_iter().next().expect("vehicle cluster");
    // Thin deterministically toward the target count.
    if cluster.len() > target_hits {
        let stride = cluster.len() as f64 / target_hits as f64;
        let pts: Vec<_> = (0..target_hits)
            .map(|i| cluster.points[(i as f64 * stride) as usize])
            .collect();
        cluster = Cluster::from_points(pts, cluster.sigma).expect("thinned cluster");
    }
    let phi = viewing_angle(&cluster, &frame.sensor);
    (cluster, phi)
}
