use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{Cone, Vec3, MAX_HALF_ANGLE};
use crate::error::{Error, Result};
use crate::octree::LightingOctree;
use crate::renderer::{trace_cone, MarchConfig, OracleField};

use super::{Material, MaterialKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadeConfig {
    pub march: MarchConfig,
    /// Cone apex offset along the normal, in leaf sides.
    pub apex_offset: f64,
    pub diffuse_half_angle: f64,
    /// Smallest specular half-angle, reached as roughness goes to zero.
    pub min_half_angle: f64,
}

impl Default for ShadeConfig {
    fn default() -> Self {
        Self {
            march: MarchConfig {
                growth: 0.5,
                ..MarchConfig::unit()
            },
            apex_offset: 1.5,
            diffuse_half_angle: PI / 6.0,
            min_half_angle: 1e-3,
        }
    }
}

/// Any unit vector orthogonal to `n`, and a third completing the frame.
fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t = n.cross(&helper).normalize();
    (t, n.cross(&t))
}

/// The six diffuse cone axes with their weights: one along the normal with
/// weight 1/4 and five tilted 30 degrees off it, evenly spread in azimuth,
/// with weight 3/20 each.
pub fn diffuse_cones(normal: &Vec3) -> [(Vec3, f64); 6] {
    let n = normal.normalize();
    let (t, b) = tangent_frame(&n);
    let tilt = PI / 6.0;
    let mut out = [(n, 0.25); 6];
    for (k, slot) in out.iter_mut().skip(1).enumerate() {
        let phi = 2.0 * PI * k as f64 / 5.0;
        let dir = n * tilt.cos() + (t * phi.cos() + b * phi.sin()) * tilt.sin();
        *slot = (dir, 0.15);
    }
    out
}

fn to_unit_checked(octree: &LightingOctree, position: &Vec3) -> Result<Vec3> {
    let p = [position.x, position.y, position.z];
    if !octree.bbox().contains(p) {
        return Err(Error::OutsideBBox(p));
    }
    Ok(octree.bbox().to_unit(p).into())
}

/// Outgoing radiance at a surface point lit by the octree. `view_dir`
/// points from the eye toward the surface.
pub fn shade_point(
    position: &Vec3,
    normal: &Vec3,
    view_dir: &Vec3,
    material: &Material,
    octree: &LightingOctree,
    cfg: &ShadeConfig,
) -> Result<[f64; 3]> {
    let p = to_unit_checked(octree, position)?;
    let n = normal.normalize();
    let apex = p + n * (cfg.apex_offset * octree.leaf_side());
    let mut light = [0.0; 3];
    match material.kind {
        MaterialKind::Diffuse => {
            // normalized cosine-weighted quadrature
            let mut norm = 0.0;
            for (axis, w) in diffuse_cones(&n) {
                let k = w * axis.dot(&n);
                let cone = Cone::new(apex, axis, cfg.diffuse_half_angle)?;
                let l = trace_cone(octree, &cone, &cfg.march)?.radiance;
                for c in 0..3 {
                    light[c] += k * l[c];
                }
                norm += k;
            }
            light = light.map(|v| v / norm);
        }
        MaterialKind::Metallic => {
            let d = view_dir.normalize();
            let r = d - n * (2.0 * d.dot(&n));
            let theta = (material.roughness * PI / 4.0).clamp(cfg.min_half_angle, MAX_HALF_ANGLE);
            let cone = Cone::new(apex, r, theta)?;
            light = trace_cone(octree, &cone, &cfg.march)?.radiance;
        }
    }
    Ok([0, 1, 2].map(|c| material.albedo[c] * light[c]))
}

/// Monte-Carlo reference for diffuse shading: `rays` cosine-distributed
/// directions from the same apex, each traced by the brute-force marcher.
pub fn diffuse_reference(
    field: &OracleField,
    octree: &LightingOctree,
    position: &Vec3,
    normal: &Vec3,
    albedo: [f64; 3],
    rays: usize,
    apex_offset: f64,
    rng: &mut impl Rng,
) -> Result<[f64; 3]> {
    let p = to_unit_checked(octree, position)?;
    let n = normal.normalize();
    let (t, b) = tangent_frame(&n);
    let apex = p + n * (apex_offset * octree.leaf_side());
    let mut sum = [0.0; 3];
    for _ in 0..rays {
        let (u1, u2): (f64, f64) = (rng.random(), rng.random());
        let r = u1.sqrt();
        let phi = 2.0 * PI * u2;
        let dir = t * (r * phi.cos()) + b * (r * phi.sin()) + n * (1.0 - u1).max(0.0).sqrt();
        let l = field.trace(&Cone::new(apex, dir, 0.0)?);
        for c in 0..3 {
            sum[c] += l[c];
        }
    }
    Ok([0, 1, 2].map(|c| albedo[c] * sum[c] / rays.max(1) as f64))
}
