//! Pinhole and equirectangular camera models.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageHdr;
use crate::octree::{CloudPoint, PointCloud, WorldBBox};

pub type Vec3 = Vector3<f64>;

/// Pinhole intrinsics in pixels. Camera frame is right-handed with +z
/// forward and +y down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(format!("intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Ray direction through the center of pixel (u, v), scaled so that
    /// its z component is 1.
    pub fn pixel_ray(&self, u: usize, v: usize) -> Vec3 {
        Vec3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    /// Continuous pixel coordinates of a camera-frame point with z > 0.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn at(position: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::from(position),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let orthonormal = (rotation.transpose() * rotation - Matrix3::identity()).abs().max() < 1e-6;
        if !orthonormal || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "pose rotation is not a proper rotation: {rotation}"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite pose translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// From 16 numbers of a row-major 4x4 matrix.
    pub fn from_row_major(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::InvalidConfig(format!(
                "pose needs 16 numbers, got {}",
                m.len()
            )));
        }
        let mat = Matrix4::from_row_slice(m);
        let rotation = mat.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = Vec3::new(mat[(0, 3)], mat[(1, 3)], mat[(2, 3)]);
        Self::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m[(0, 3)] = self.translation.x;
        m[(1, 3)] = self.translation.y;
        m[(2, 3)] = self.translation.z;
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// The same pose expressed in the unit-cube frame of `bbox`.
    pub fn to_unit(&self, bbox: &WorldBBox) -> CameraPose {
        CameraPose {
            rotation: self.rotation,
            translation: Vec3::from(bbox.to_unit(self.translation.into())),
        }
    }
}

/// JSON camera description: intrinsics are optional for panorama poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default = "identity16")]
    pub cam_to_world: Vec<f64>,
}

fn identity16() -> Vec<f64> {
    CameraPose::identity().to_row_major().to_vec()
}

impl CameraJson {
    pub fn from_parts(intrinsics: Option<&Intrinsics>, pose: &CameraPose) -> Self {
        Self {
            fx: intrinsics.map(|k| k.fx),
            fy: intrinsics.map(|k| k.fy),
            cx: intrinsics.map(|k| k.cx),
            cy: intrinsics.map(|k| k.cy),
            width: intrinsics.map(|k| k.width),
            height: intrinsics.map(|k| k.height),
            cam_to_world: pose.to_row_major().to_vec(),
        }
    }

    pub fn pose(&self) -> Result<CameraPose> {
        CameraPose::from_row_major(&self.cam_to_world)
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        match (self.fx, self.fy, self.cx, self.cy, self.width, self.height) {
            (Some(fx), Some(fy), Some(cx), Some(cy), Some(width), Some(height)) => {
                let k = Intrinsics {
                    fx,
                    fy,
                    cx,
                    cy,
                    width,
                    height,
                };
                k.validate()?;
                Ok(k)
            }
            _ => Err(Error::InvalidConfig(
                "camera JSON is missing intrinsics fields".into(),
            )),
        }
    }
}

/// The rendering primitive: a cone with apex, unit axis and half-angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cone {
    pub apex: Vec3,
    pub axis: Vec3,
    pub half_angle: f64,
}

impl Cone {
    /// Normalizes `axis`; fails on a zero axis or a half-angle outside
    /// `[0, pi/4)`.
    pub fn new(apex: Vec3, axis: Vec3, half_angle: f64) -> Result<Self> {
        let norm = axis.norm();
        if !(norm > 0.0 && norm.is_finite()) || !apex.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(format!("cone axis {axis:?}")));
        }
        if !(0.0..PI / 4.0).contains(&half_angle) {
            return Err(Error::InvalidConfig(format!("cone half-angle {half_angle}")));
        }
        Ok(Self {
            apex,
            axis: axis / norm,
            half_angle,
        })
    }
}

/// Camera-frame direction of equirectangular pixel (u, v): +y up, azimuth
/// zero along +z.
pub fn equirect_direction(u: usize, v: usize, width: usize, height: usize) -> Vec3 {
    let phi = 2.0 * PI * (u as f64 + 0.5) / width as f64 - PI;
    let theta = PI * (v as f64 + 0.5) / height as f64;
    Vec3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos())
}

/// Largest half-angle a cone may have.
pub const MAX_HALF_ANGLE: f64 = PI / 4.0 - 1e-9;

/// Default panorama cone half-angle: half the polar extent of one pixel,
/// capped below pi/4 for tiny panoramas.
pub fn default_panorama_angle(height: usize) -> f64 {
    (PI / (2.0 * height as f64)).min(MAX_HALF_ANGLE)
}

/// Row-major cones covering the full sphere around `pose`.
pub fn panorama_cones(
    width: usize,
    height: usize,
    pose: &CameraPose,
    half_angle: Option<f64>,
) -> Result<Vec<Cone>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidConfig("empty panorama".into()));
    }
    let theta = half_angle.unwrap_or_else(|| default_panorama_angle(height));
    let mut cones = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            let dir = pose.rotation * equirect_direction(u, v, width, height);
            cones.push(Cone::new(pose.translation, dir, theta)?);
        }
    }
    Ok(cones)
}

/// Row-major cones through pixel centers; the default half-angle covers
/// half a pixel at unit focal distance.
pub fn perspective_cones(
    intrinsics: &Intrinsics,
    pose: &CameraPose,
    half_angle: Option<f64>,
) -> Result<Vec<Cone>> {
    intrinsics.validate()?;
    let theta = half_angle.unwrap_or_else(|| (1.0 / (2.0 * intrinsics.fx)).atan());
    let mut cones = Vec::with_capacity(intrinsics.width * intrinsics.height);
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let dir = pose.rotation * intrinsics.pixel_ray(u, v);
            cones.push(Cone::new(pose.translation, dir, theta)?);
        }
    }
    Ok(cones)
}

/// Lifts every valid depth pixel (finite, > 0) to a camera-frame point
/// colored by the matching RGB pixel.
pub fn backproject(depth: &ImageHdr, rgb: &ImageHdr, intrinsics: &Intrinsics) -> Result<PointCloud> {
    intrinsics.validate()?;
    if depth.width != rgb.width || depth.height != rgb.height {
        return Err(Error::SizeMismatch(format!(
            "depth {}x{} vs rgb {}x{}",
            depth.width, depth.height, rgb.width, rgb.height
        )));
    }
    if depth.width != intrinsics.width || depth.height != intrinsics.height {
        return Err(Error::SizeMismatch(format!(
            "images {}x{} vs intrinsics {}x{}",
            depth.width, depth.height, intrinsics.width, intrinsics.height
        )));
    }
    let mut points = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let z = depth.value(u, v);
            if !(z.is_finite() && z > 0.0) {
                continue;
            }
            let p = intrinsics.pixel_ray(u, v) * z;
            points.push(CloudPoint {
                position: p.into(),
                color: rgb.rgb(u, v),
            });
        }
    }
    if points.is_empty() {
        return Err(Error::NoValidPixels);
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_intrinsics() -> Intrinsics {
        Intrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.5,
            cy: 0.5,
            width: 1,
            height: 1,
        }
    }

    #[test]
    fn principal_ray_backprojects_on_axis() {
        let depth = ImageHdr::from_data(1, 1, 1, vec![2.0]).unwrap();
        let rgb = ImageHdr::from_data(1, 1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let cloud = backproject(&depth, &rgb, &unit_intrinsics()).unwrap();
        assert_eq!(cloud.points[0].position, [0.0, 0.0, 2.0]);
        assert!((cloud.points[0].color[1] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn invalid_depth_pixels_are_skipped() {
        let k = Intrinsics {
            width: 3,
            height: 1,
            cx: 1.5,
            ..unit_intrinsics()
        };
        let depth = ImageHdr::from_data(3, 1, 1, vec![0.0, f32::NAN, 1.0]).unwrap();
        let rgb = ImageHdr::new(3, 1, 3);
        assert_eq!(backproject(&depth, &rgb, &k).unwrap().len(), 1);
        let none = ImageHdr::from_data(3, 1, 1, vec![0.0, -1.0, 0.0]).unwrap();
        assert!(matches!(backproject(&none, &rgb, &k), Err(Error::NoValidPixels)));
        let small = ImageHdr::new(2, 1, 3);
        assert!(matches!(backproject(&depth, &small, &k), Err(Error::SizeMismatch(_))));
    }

    #[test]
    fn uniform_depth_plane_is_coplanar() {
        let k = Intrinsics {
            fx: 2.0,
            fy: 2.0,
            cx: 1.0,
            cy: 1.0,
            width: 2,
            height: 2,
        };
        let depth = ImageHdr::from_data(2, 2, 1, vec![3.0; 4]).unwrap();
        let cloud = backproject(&depth, &ImageHdr::new(2, 2, 3), &k).unwrap();
        // (u + 0.5 - 1) / 2 * 3 = -0.75 or 0.75
        let expected = [[-0.75, -0.75], [0.75, -0.75], [-0.75, 0.75], [0.75, 0.75]];
        for (p, e) in cloud.points.iter().zip(expected) {
            assert_eq!(p.position, [e[0], e[1], 3.0]);
        }
    }

    #[test]
    fn panorama_forward_and_pole() {
        let (w, h) = (64, 32);
        let cones = panorama_cones(w, h, &CameraPose::identity(), None).unwrap();
        let center = cones[(h / 2) * w + w / 2].axis;
        assert!(center.z > 0.99, "{center:?}");
        let top = cones[w / 2].axis;
        assert!(top.y > 0.99, "{top:?}");
        assert!((cones[0].half_angle - PI / 64.0).abs() < 1e-15);
    }

    #[test]
    fn four_by_two_equator_azimuths() {
        let cones = panorama_cones(4, 2, &CameraPose::identity(), None).unwrap();
        let expected = [-3.0 * PI / 4.0, -PI / 4.0, PI / 4.0, 3.0 * PI / 4.0];
        for (u, phi) in expected.iter().enumerate() {
            let d = cones[u].axis;
            assert!((d.x.atan2(d.z) - phi).abs() < 1e-12);
            // v = 0 row sits at polar angle pi/4
            assert!((d.y - (PI / 4.0).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn panorama_solid_angle_sums_to_four_pi() {
        for h in [32usize, 64] {
            let w = 2 * h;
            let mut total = 0.0;
            for v in 0..h {
                for u in 0..w {
                    let d = equirect_direction(u, v, w, h);
                    assert!((d.norm() - 1.0).abs() < 1e-12);
                    let theta = PI * (v as f64 + 0.5) / h as f64;
                    total += theta.sin() * (PI / h as f64) * (2.0 * PI / w as f64);
                }
            }
            assert!((total / (4.0 * PI) - 1.0).abs() < 0.01, "{total}");
        }
    }

    #[test]
    fn perspective_principal_and_corner() {
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 2.0,
            cy: 2.0,
            width: 4,
            height: 4,
        };
        let cones = perspective_cones(&k, &CameraPose::identity(), None).unwrap();
        // pixel (1,1) center is (1.5,1.5): offset -0.5 / 100
        let d = cones[5].axis;
        let e = Vec3::new(-0.005, -0.005, 1.0).normalize();
        assert!((d - e).norm() < 1e-12);
        // corner (0,0): offset -1.5 / 100
        let e = Vec3::new(-0.015, -0.015, 1.0).normalize();
        assert!((cones[0].axis - e).norm() < 1e-12);
        assert!((cones[0].half_angle - (1.0f64 / 200.0).atan()).abs() < 1e-15);
        let wide = Intrinsics { fx: 1e12, ..k };
        assert!(perspective_cones(&wide, &CameraPose::identity(), None).unwrap()[0].half_angle < 1e-11);
    }

    #[test]
    fn pose_json_roundtrip_and_validation() {
        let rot = nalgebra::Rotation3::from_euler_angles(0.1, -0.4, 1.2).into_inner();
        let pose = CameraPose::new(rot, Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let json = CameraJson::from_parts(None, &pose);
        let text = serde_json::to_string(&json).unwrap();
        let back: CameraJson = serde_json::from_str(&text).unwrap();
        let p2 = back.pose().unwrap();
        assert!((p2.rotation - pose.rotation).abs().max() < 1e-15);
        assert!(back.intrinsics().is_err());
        let mut bad = pose.to_row_major();
        bad[0] = 2.0;
        assert!(CameraPose::from_row_major(&bad).is_err());
    }

    proptest! {
        #[test]
        fn backproject_inverts_projection(
            fx in 50.0..500.0f64, fy in 50.0..500.0f64,
            w in 1usize..12, h in 1usize..12,
            depths in prop::collection::vec(0.1..20.0f64, 144),
        ) {
            let k = Intrinsics { fx, fy, cx: w as f64 / 2.0, cy: h as f64 / 2.0, width: w, height: h };
            let data: Vec<f32> = depths[..w * h].iter().map(|d| *d as f32).collect();
            let depth = ImageHdr::from_data(w, h, 1, data).unwrap();
            let cloud = backproject(&depth, &ImageHdr::new(w, h, 3), &k).unwrap();
            for (i, p) in cloud.points.iter().enumerate() {
                let (u, v) = k.project(Vec3::from(p.position)).unwrap();
                let (eu, ev) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
                prop_assert!((u - eu).abs() <= 1e-5 * eu.max(1.0));
                prop_assert!((v - ev).abs() <= 1e-5 * ev.max(1.0));
                prop_assert!((p.position[2] - depth.data[i] as f64).abs() <= 1e-5 * p.position[2]);
            }
        }
    }
}
