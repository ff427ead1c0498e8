use rayon::prelude::*;

use crate::camera::{CameraPose, Intrinsics, Vec3};
use crate::error::{Error, Result};
use crate::image::{ImageHdr, DISPLAY_GAMMA};
use crate::octree::{LightingOctree, PointCloud};

use super::{shade_point, Ray, ShadeConfig, TriGrid, TriangleMesh};

/// Depth buffer taken straight from a depth map; pixels without a valid
/// positive depth become `+inf`.
pub fn occlusion_depth(depth: &ImageHdr) -> ImageHdr {
    depth
        .first_channel()
        .map(|z| if z.is_finite() && z > 0.0 { z } else { f32::INFINITY })
}

/// Nearest camera-space depth of world points per pixel, `+inf` where no
/// point lands.
pub fn occlusion_depth_from_cloud(cloud: &PointCloud, intrinsics: &Intrinsics, pose: &CameraPose) -> Result<ImageHdr> {
    intrinsics.validate()?;
    let mut out = ImageHdr::new(intrinsics.width, intrinsics.height, 1);
    out.data.fill(f32::INFINITY);
    let inv_rot = pose.rotation.transpose();
    for p in &cloud.points {
        let local = inv_rot * (Vec3::from(p.position) - pose.translation);
        let Some((x, y)) = intrinsics.project(local) else { continue };
        let (u, v) = (x.floor(), y.floor());
        if u < 0.0 || v < 0.0 || u >= intrinsics.width as f64 || v >= intrinsics.height as f64 {
            continue;
        }
        let slot = &mut out.pixel_mut(u as usize, v as usize)[0];
        *slot = slot.min(local.z as f32);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub hdr: ImageHdr,
    /// `x / (1 + x)` followed by display gamma.
    pub ldr: ImageHdr,
    /// Pixels where the object is visible.
    pub mask: Vec<bool>,
}

/// Renders `mesh` (after `transform`) into the photograph. Rays are
/// parameterized by camera depth so the object depth compares directly
/// with `depth`. Pixels the object does not cover keep their input value.
#[allow(clippy::too_many_arguments)]
pub fn insert_render(
    image: &ImageHdr,
    depth: &ImageHdr,
    intrinsics: &Intrinsics,
    pose: &CameraPose,
    mesh: &TriangleMesh,
    transform: &nalgebra::Matrix4<f64>,
    octree: &LightingOctree,
    cfg: &ShadeConfig,
) -> Result<Composite> {
    intrinsics.validate()?;
    let (w, h) = (intrinsics.width, intrinsics.height);
    if image.width != w || image.height != h || depth.width != w || depth.height != h {
        return Err(Error::SizeMismatch(format!(
            "image {}x{}, depth {}x{}, intrinsics {w}x{h}",
            image.width, image.height, depth.width, depth.height
        )));
    }
    let scene_depth = occlusion_depth(depth);
    let grid = TriGrid::build(&mesh.transformed(transform)?);
    let bbox = octree.bbox();
    let shaded: Vec<Option<[f64; 3]>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = (i % w, i / w);
            let dir = pose.rotation * intrinsics.pixel_ray(u, v);
            let ray = Ray::new(pose.translation, dir);
            let Some(hit) = grid.intersect(&ray) else { return Ok(None) };
            if hit.t >= scene_depth.data[i] as f64 {
                return Ok(None);
            }
            // shading positions are kept inside the lighting volume
            let p = ray.at(hit.t);
            let lo = bbox.min;
            let hi = bbox.min.map(|m| m + bbox.side);
            let inside = Vec3::from_fn(|k, _| p[k].clamp(lo[k], hi[k]));
            shade_point(&inside, &hit.normal, &dir, &mesh.material, octree, cfg).map(Some)
        })
        .collect::<Result<_>>()?;
    let mut hdr = image.clone();
    let mut mask = vec![false; w * h];
    for (i, s) in shaded.iter().enumerate() {
        if let Some(rgb) = s {
            mask[i] = true;
            let px = &mut hdr.data[i * hdr.channels..(i + 1) * hdr.channels];
            if px.len() == 3 {
                for c in 0..3 {
                    px[c] = rgb[c] as f32;
                }
            } else {
                px[0] = ((rgb[0] + rgb[1] + rgb[2]) / 3.0) as f32;
            }
        }
    }
    let ldr = hdr.tone_mapped(1.0, DISPLAY_GAMMA);
    Ok(Composite { hdr, ldr, mask })
}
