//! Virtual object insertion: triangle meshes shaded by cone-tracing the
//! lighting octree and composited over the input photograph.

mod composite;
mod grid;
mod shade;

pub use composite::{insert_render, occlusion_depth, occlusion_depth_from_cloud, Composite};
pub use grid::{intersect_brute_force, intersect_triangle, CellVisit, Hit, Ray, TriGrid};
pub use shade::{diffuse_cones, diffuse_reference, shade_point, ShadeConfig};

use std::str::FromStr;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::camera::Vec3;
use crate::error::{Error, Result};

/// Triangles with area at or below this are rejected.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialKind {
    #[default]
    Diffuse,
    Metallic,
}

impl FromStr for MaterialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffuse" => Ok(MaterialKind::Diffuse),
            "metallic" => Ok(MaterialKind::Metallic),
            other => Err(Error::InvalidConfig(format!("material {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub kind: MaterialKind,
    pub albedo: [f64; 3],
    /// Specular spread for metallic surfaces, in `(0, 1]`.
    pub roughness: f64,
}

impl Material {
    pub fn diffuse(albedo: [f64; 3]) -> Self {
        Self {
            kind: MaterialKind::Diffuse,
            albedo,
            roughness: 1.0,
        }
    }

    pub fn metallic(albedo: [f64; 3], roughness: f64) -> Self {
        Self {
            kind: MaterialKind::Metallic,
            albedo,
            roughness,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.albedo.iter().all(|a| (0.0..=1.0).contains(a)) {
            return Err(Error::InvalidConfig(format!("albedo {:?}", self.albedo)));
        }
        if self.kind == MaterialKind::Metallic && !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return Err(Error::InvalidConfig(format!("roughness {}", self.roughness)));
        }
        Ok(())
    }
}

impl Default for Material {
    fn default() -> Self {
        Self::diffuse([1.0; 3])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub material: Material,
}

impl TriangleMesh {
    /// Checks index ranges and rejects degenerate triangles.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, material: Material) -> Result<Self> {
        material.validate()?;
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("no triangles".into()));
        }
        if let Some(v) = vertices.iter().find(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("non-finite vertex {v:?}")));
        }
        for (i, t) in triangles.iter().enumerate() {
            if t.iter().any(|&k| k as usize >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {i} indexes past {} vertices",
                    vertices.len()
                )));
            }
            let [a, b, c] = t.map(|k| vertices[k as usize]);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(Error::InvalidMesh(format!("triangle {i} is degenerate")));
            }
        }
        Ok(Self {
            vertices,
            triangles,
            material,
        })
    }

    /// Parses `v` and `f` records; polygons are fan-triangulated and all
    /// other records are ignored. Face indices may be negative (relative)
    /// and may carry `/vt/vn` suffixes.
    pub fn parse_obj(text: &str, material: Material) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = |what: &str| Error::InvalidMesh(format!("line {}: {what}", line_no + 1));
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|t| t.parse::<f64>().map_err(|_| bad("bad vertex coordinate")))
                        .collect::<Result<_>>()?;
                    if c.len() != 3 {
                        return Err(bad("vertex needs three coordinates"));
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|t| {
                            let head = t.split('/').next().unwrap_or("");
                            let k: i64 = head.parse().map_err(|_| bad("bad face index"))?;
                            let n = vertices.len() as i64;
                            let k = if k < 0 { n + k } else { k - 1 };
                            if k < 0 || k >= n {
                                return Err(bad("face index out of range"));
                            }
                            Ok(k as u32)
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(bad("face needs three vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles, material)
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        s
    }

    /// Applies a 4x4 affine transform to every vertex.
    pub fn transformed(&self, m: &Matrix4<f64>) -> Result<Self> {
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let p = m * Vector4::new(v.x, v.y, v.z, 1.0);
                Vec3::new(p.x, p.y, p.z) / p.w
            })
            .collect();
        Self::new(vertices, self.triangles.clone(), self.material)
    }

    /// Latitude-longitude sphere.
    pub fn uv_sphere(center: Vec3, radius: f64, segments: usize, rings: usize, material: Material) -> Result<Self> {
        let (segments, rings) = (segments.max(3), rings.max(2));
        let mut vertices = vec![center + Vec3::new(0.0, radius, 0.0)];
        for r in 1..rings {
            let theta = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..segments {
                let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                vertices.push(
                    center + radius * Vec3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin()),
                );
            }
        }
        vertices.push(center - Vec3::new(0.0, radius, 0.0));
        let bottom = (vertices.len() - 1) as u32;
        let ring = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
        let mut triangles = Vec::new();
        for s in 0..segments {
            triangles.push([0, ring(1, s + 1), ring(1, s)]);
            triangles.push([bottom, ring(rings - 1, s), ring(rings - 1, s + 1)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b, c, d) = (ring(r, s), ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1));
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        Self::new(vertices, triangles, material)
    }

    /// Axis-aligned box of the vertices.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }
}

/// Parses a row-major 4x4 transform from a 16-number JSON array.
pub fn transform_from_json(text: &str) -> Result<Matrix4<f64>> {
    let m: Vec<f64> = serde_json::from_str(text)?;
    if m.len() != 16 || !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidConfig(format!("transform needs 16 finite numbers, got {}", m.len())));
    }
    Ok(Matrix4::from_row_slice(&m))
}

#[cfg(test)]
mod tests;
