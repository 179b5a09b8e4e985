//! LADAR frames, ground removal, clustering, and planar projection.
//!
//! A frame is a set of 3D hits in fixed world coordinates plus the sensor
//! origin it was taken from. Points above the ground plane are grouped into
//! clusters by single-linkage on planar distance; each cluster projects into
//! the horizontal plane as a sum of isotropic Gaussians (one per hit, common
//! standard deviation `sigma`), which is the signal the matched filter is
//! evaluated against.

use serde::{Deserialize, Serialize};

use crate::angles;
use crate::error::{CoreError, Result};

/// One LADAR hit in fixed world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub frame_id: u64,
}

/// Per-frame sensor position in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorOrigin {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// One frame of LADAR data.
///
/// `labels` is present only for synthesized frames: `-1` marks a ground hit,
/// any other value is the id of the scene object the ray hit first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: u64,
    pub timestamp: f64,
    pub sensor: SensorOrigin,
    pub points: Vec<ScanPoint>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub labels: Option<Vec<i64>>,
}

/// Axis-aligned planar bounding box over cluster means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarBBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl PlanarBBox {
    pub fn extent(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }
}

/// A group of points belonging to at most one object, projected into the
/// horizontal plane as a Gaussian mixture with per-point std `sigma`.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub points: Vec<ScanPoint>,
    pub planar_means: Vec<[f64; 2]>,
    pub sigma: f64,
    pub bbox: PlanarBBox,
}

impl Cluster {
    /// Builds a cluster from points, projecting each to its planar mean.
    pub fn from_points(points: Vec<ScanPoint>, sigma: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(CoreError::EmptyCluster);
        }
        if sigma <= 0.0 {
            return Err(CoreError::InvalidInput(format!("sigma = {sigma}")));
        }
        let planar_means: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
        let mut bbox = PlanarBBox {
            min: [f64::INFINITY; 2],
            max: [f64::NEG_INFINITY; 2],
        };
        for m in &planar_means {
            for (k, &v) in m.iter().enumerate() {
                bbox.min[k] = bbox.min[k].min(v);
                bbox.max[k] = bbox.max[k].max(v);
            }
        }
        Ok(Self {
            points,
            planar_means,
            sigma,
            bbox,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Unweighted mean of the planar means.
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.planar_means.len() as f64;
        let (sx, sy) = self
            .planar_means
            .iter()
            .fold((0.0, 0.0), |(ax, ay), m| (ax + m[0], ay + m[1]));
        [sx / n, sy / n]
    }

    /// Merges several clusters into one (shared `sigma`), preserving point
    /// order cluster by cluster.
    pub fn merge(clusters: &[&Cluster]) -> Result<Self> {
        let sigma = clusters
            .first()
            .ok_or(CoreError::EmptyCluster)?
            .sigma;
        let points: Vec<ScanPoint> = clusters
            .iter()
            .flat_map(|c| c.points.iter().copied())
            .collect();
        Self::from_points(points, sigma)
    }
}

/// Pre-processing parameters for ground removal and clustering.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    /// Ground plane height supplied by the scene (m).
    pub ground_height: f64,
    /// Points within this margin above the ground are discarded (m).
    pub ground_margin: f64,
    /// Single-linkage clustering gap (m).
    pub cluster_gap: f64,
    /// Per-point surface Gaussian std (m).
    pub sigma: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            ground_height: 0.0,
            ground_margin: 0.3,
            cluster_gap: 1.0,
            sigma: 0.15,
        }
    }
}

/// Drops points at or below `ground_height + margin`, preserving order.
pub fn remove_ground(frame: &Frame, ground_height: f64, margin: f64) -> Vec<ScanPoint> {
    frame
        .points
        .iter()
        .filter(|p| p.z - ground_height > margin)
        .copied()
        .collect()
}

/// Groups points into connected components under planar distance <= `gap`.
///
/// Grid-hashed single linkage: points are bucketed into cells of side `gap`
/// and only the 3x3 neighborhood of each cell is scanned for links, so the
/// result is identical to full pairwise linkage. Clusters are ordered by
/// their smallest input index, points keep input order.
pub fn cluster_points(points: &[ScanPoint], gap: f64, sigma: f64) -> Result<Vec<Cluster>> {
    if gap <= 0.0 {
        return Err(CoreError::InvalidInput(format!("gap = {gap}")));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }

    let cell_of = |p: &ScanPoint| -> (i64, i64) {
        ((p.x / gap).floor() as i64, (p.y / gap).floor() as i64)
    };

    let mut grid: std::collections::HashMap<(i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell_of(p)).or_default().push(i);
    }

    let mut uf = UnionFind::new(points.len());
    let gap2 = gap * gap;
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = cell_of(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = grid.get(&(cx + dx, cy + dy)) {
                    for &j in bucket {
                        if j <= i {
                            continue;
                        }
                        let q = &points[j];
                        let ddx = p.x - q.x;
                        let ddy = p.y - q.y;
                        if ddx * ddx + ddy * ddy <= gap2 {
                            uf.union(i, j);
                        }
                    }
                }
            }
        }
    }

    // Group by root, first-seen order.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for i in 0..points.len() {
        let r = uf.find(i);
        let slot = *root_slot.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(i);
    }

    groups
        .into_iter()
        .map(|idx| Cluster::from_points(idx.into_iter().map(|i| points[i]).collect(), sigma))
        .collect()
}

/// Viewing angle from the cluster centroid toward the sensor, in `(-pi, pi]`.
pub fn viewing_angle(cluster: &Cluster, sensor: &SensorOrigin) -> f64 {
    let c = cluster.centroid();
    angles::atan2(sensor.y - c[1], sensor.x - c[0])
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}
