//! Synthetic scenes in unit-cube coordinates.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::octree::{
    aggregate_mips, build_octree, cell_side, BuildConfig, CloudPoint, LightingOctree, PointCloud,
    WorldBBox,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Plane,
    Box,
    Shell,
}

impl std::str::FromStr for SceneKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(SceneKind::Plane),
            "box" => Ok(SceneKind::Box),
            "shell" => Ok(SceneKind::Shell),
            other => Err(crate::Error::InvalidConfig(format!("unknown scene {other:?}"))),
        }
    }
}

impl SceneKind {
    /// Point cloud dense enough to touch every crossed leaf at `depth`.
    pub fn cloud(self, depth: u8) -> PointCloud {
        let res = 2usize << depth;
        match self {
            SceneKind::Plane => plane_cloud(1usize << depth, 0.5 + 1e-3, [0.8, 0.8, 0.8]),
            SceneKind::Box => emissive_box_cloud(res),
            SceneKind::Shell => sphere_shell_cloud([0.5; 3], 0.4, 2 * res, [1.0, 1.0, 1.0]),
        }
    }

    pub fn octree(self, depth: u8) -> Result<LightingOctree> {
        build_octree(&self.cloud(depth), WorldBBox::UNIT, &BuildConfig::new(depth))
    }
}

/// `n x n` points at cell centers of the plane `z = height`.
pub fn plane_cloud(n: usize, height: f64, color: [f64; 3]) -> PointCloud {
    (0..n * n)
        .map(|i| CloudPoint {
            position: [
                ((i % n) as f64 + 0.5) / n as f64,
                ((i / n) as f64 + 0.5) / n as f64,
                height,
            ],
            color,
        })
        .collect()
}

/// Inner walls of the box `[0.1, 0.9]^3`, sampled `res` points per unit
/// length. Walls carry distinct colors and a bright panel sits in the
/// middle of the `+y` face.
pub fn emissive_box_cloud(res: usize) -> PointCloud {
    emissive_box_cloud_thick(res, 0.0)
}

/// [`emissive_box_cloud`] with every wall extruded outward by `thickness`,
/// in layers `1 / res` apart.
pub fn emissive_box_cloud_thick(res: usize, thickness: f64) -> PointCloud {
    let (lo, hi) = (0.1, 0.9);
    let n = ((hi - lo) * res as f64).ceil() as usize + 1;
    let layers = (thickness * res as f64).round() as usize;
    let coord = |i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut points = Vec::with_capacity(6 * n * n * (layers + 1));
    for axis in 0..3 {
        for upper in [false, true] {
            for layer in 0..=layers {
                let offset = layer as f64 / res as f64;
                let side = if upper { hi + offset } else { lo - offset };
                for i in 0..n {
                    for j in 0..n {
                        let mut p = [0.0; 3];
                        p[axis] = side;
                        p[(axis + 1) % 3] = coord(i);
                        p[(axis + 2) % 3] = coord(j);
                        points.push(CloudPoint {
                            position: p,
                            color: box_wall_color(axis, upper, p),
                        });
                    }
                }
            }
        }
    }
    PointCloud { points }
}

fn box_wall_color(axis: usize, upper: bool, p: [f64; 3]) -> [f64; 3] {
    let panel = axis == 1 && upper && (0.35..0.65).contains(&p[0]) && (0.35..0.65).contains(&p[2]);
    if panel {
        return [3.0, 2.8, 2.5];
    }
    match (axis, upper) {
        (0, false) => [0.6, 0.15, 0.1],
        (0, true) => [0.1, 0.5, 0.15],
        (1, false) => [0.3, 0.25, 0.2],
        (1, true) => [0.4, 0.4, 0.45],
        (2, false) => [0.2, 0.2, 0.6],
        _ => [0.5, 0.45, 0.3],
    }
}

/// Points on a sphere, `n` azimuth by `n / 2` polar samples.
pub fn sphere_shell_cloud(center: [f64; 3], radius: f64, n: usize, color: [f64; 3]) -> PointCloud {
    let rows = (n / 2).max(1);
    let mut points = Vec::with_capacity(n * rows);
    for r in 0..rows {
        let theta = PI * (r as f64 + 0.5) / rows as f64;
        // fewer samples near the poles
        let count = ((n as f64 * theta.sin()).ceil() as usize).max(1);
        for k in 0..count {
            let phi = 2.0 * PI * k as f64 / count as f64;
            points.push(CloudPoint {
                position: [
                    center[0] + radius * theta.sin() * phi.cos(),
                    center[1] + radius * theta.cos(),
                    center[2] + radius * theta.sin() * phi.sin(),
                ],
                color,
            });
        }
    }
    PointCloud { points }
}

/// Closed spherical shell of uniform radiance around the cube center, two
/// leaf sides thick from `radius` outward so that it is opaque.
pub fn uniform_shell_octree(depth: u8, radius: f64, radiance: [f64; 3]) -> Result<LightingOctree> {
    let leaf = cell_side(depth);
    let mut points = Vec::new();
    for layer in 0..=4 {
        let r = radius + layer as f64 * leaf / 2.0;
        let n = (16.0 * r / leaf).ceil() as usize;
        points.extend(sphere_shell_cloud([0.5; 3], r, n, radiance).points);
    }
    build_octree(&PointCloud { points }, WorldBBox::UNIT, &BuildConfig::new(depth))
}

/// Random cloud with random leaf colors and densities, re-aggregated.
/// Densities give per-leaf optical depths between 0 and `max_leaf_optical`.
pub fn random_octree(seed: u64, depth: u8, points: usize, max_leaf_optical: f64) -> LightingOctree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud: PointCloud = (0..points.max(1))
        .map(|_| CloudPoint {
            position: [rng.random(), rng.random(), rng.random()],
            color: [rng.random::<f64>() * 2.0, rng.random(), rng.random::<f64>() * 0.5],
        })
        .collect();
    let mut tree = build_octree(&cloud, WorldBBox::UNIT, &BuildConfig::new(depth))
        .expect("random cloud is inside the unit cube");
    let leaf = cell_side(depth);
    for f in tree.features_mut(depth) {
        if f.sigma > 0.0 {
            f.sigma = rng.random::<f64>() * max_leaf_optical / leaf;
        }
    }
    aggregate_mips(&mut tree);
    tree
}
