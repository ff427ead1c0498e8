use rayon::prelude::*;

use super::{select_depth, GradientBuffer, MarchConfig, Schedule, WeightMode};
use crate::camera::{Cone, Vec3};
use crate::error::{Error, Result};
use crate::image::ImageHdr;
use crate::octree::{LightingOctree, NodeFeatures, NodeHandle};

/// One evaluated sample along a cone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    /// Schedule distance `s_n` from the march origin.
    pub s: f64,
    /// Distance from the cone apex (march origin offset plus `s`).
    pub distance: f64,
    pub delta: f64,
    pub depth: u8,
    /// `None` when the sample falls outside the unit cube.
    pub node: Option<NodeHandle>,
    pub weight: f64,
    /// Transmittance reaching the sample.
    pub transmittance: f64,
    pub color: [f64; 3],
    pub sigma: f64,
}

impl SamplePoint {
    /// Opacity of the sample's segment, `1 - exp(-sigma delta)`.
    pub fn alpha(&self) -> f64 {
        -(-self.sigma * self.delta).exp_m1()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TraceResult {
    pub radiance: [f64; 3],
    /// Expected termination distance from the apex.
    pub depth: f64,
    /// Transmittance left after the last sample.
    pub transmittance: f64,
    pub samples: usize,
}

/// Parametric interval `[t_in, t_out]` where the ray `apex + t axis` is
/// inside `[0,1]^3`, clipped to `t >= 0`.
pub fn unit_cube_span(apex: &Vec3, axis: &Vec3) -> Option<(f64, f64)> {
    let mut t_in = 0.0f64;
    let mut t_out = f64::INFINITY;
    for a in 0..3 {
        if axis[a] == 0.0 {
            if apex[a] < 0.0 || apex[a] > 1.0 {
                return None;
            }
            continue;
        }
        let inv = 1.0 / axis[a];
        let t0 = (0.0 - apex[a]) * inv;
        let t1 = (1.0 - apex[a]) * inv;
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        t_in = t_in.max(lo);
        t_out = t_out.min(hi);
    }
    (t_in <= t_out).then_some((t_in, t_out))
}

/// Runs the march and hands every sample to `visit`. Returns the final
/// transmittance and the sample count.
fn march(
    octree: &LightingOctree,
    cone: &Cone,
    cfg: &MarchConfig,
    mut visit: impl FnMut(&SamplePoint),
) -> Result<(f64, usize)> {
    let Some((t_in, t_out)) = unit_cube_span(&cone.apex, &cone.axis) else {
        return Ok((1.0, 0));
    };
    let theta = cfg.theta_override.unwrap_or(cone.half_angle);
    let c0 = cfg.initial_step(octree.leaf_side());
    let limit = cfg.max_distance.min(t_out - t_in);
    let schedule = Schedule::new(c0, cfg.growth, theta, limit, cfg.fixed_step_fallback)?;
    let max_depth = octree.max_depth();
    let mut optical = 0.0;
    let mut transmittance = 1.0;
    let mut count = 0;
    for step in schedule {
        if transmittance < cfg.min_transmittance {
            break;
        }
        let distance = t_in + step.s;
        let p = cone.apex + cone.axis * distance;
        let depth = select_depth(step.delta, step.s, theta, max_depth);
        let (node, features) = match octree.locate([p.x, p.y, p.z], depth) {
            Some(loc) => (Some(loc.node), *octree.features(loc.node)),
            None => (None, NodeFeatures::ZERO),
        };
        let weight = match cfg.weight_mode {
            WeightMode::Paper => step.delta / step.s,
            WeightMode::Unit => 1.0,
        };
        visit(&SamplePoint {
            s: step.s,
            distance,
            delta: step.delta,
            depth,
            node,
            weight,
            transmittance,
            color: features.color,
            sigma: features.sigma,
        });
        count += 1;
        optical += features.sigma * step.delta;
        transmittance = (-optical).exp();
    }
    Ok((transmittance, count))
}

/// Forward pass: `L = sum_n w_n C_n T_n (1 - exp(-sigma_n delta_n))` and
/// expected depth `D = sum_n T_n (1 - exp(-sigma_n delta_n)) s_n`.
pub fn trace_cone(octree: &LightingOctree, cone: &Cone, cfg: &MarchConfig) -> Result<TraceResult> {
    let mut out = TraceResult::default();
    let (t, n) = march(octree, cone, cfg, |sp| accumulate(&mut out, sp))?;
    out.transmittance = t;
    out.samples = n;
    Ok(out)
}

/// Forward pass that also returns every sample.
pub fn trace_cone_samples(
    octree: &LightingOctree,
    cone: &Cone,
    cfg: &MarchConfig,
) -> Result<(TraceResult, Vec<SamplePoint>)> {
    let mut out = TraceResult::default();
    let mut samples = Vec::new();
    let (t, n) = march(octree, cone, cfg, |sp| {
        accumulate(&mut out, sp);
        samples.push(*sp);
    })?;
    out.transmittance = t;
    out.samples = n;
    Ok((out, samples))
}

#[inline]
fn accumulate(out: &mut TraceResult, sp: &SamplePoint) {
    let a = sp.alpha();
    let k = sp.weight * sp.transmittance * a;
    for c in 0..3 {
        out.radiance[c] += k * sp.color[c];
    }
    out.depth += sp.transmittance * a * sp.distance;
}

/// Accumulates gradients of `dL . radiance + dD * depth` with respect to the
/// color and density of every node a sample read.
pub fn backward(
    octree: &LightingOctree,
    cone: &Cone,
    cfg: &MarchConfig,
    d_radiance: [f64; 3],
    d_depth: f64,
    grads: &mut GradientBuffer,
) -> Result<TraceResult> {
    trace_with_backward(octree, cone, cfg, grads, |_| (d_radiance, d_depth)).map(|(r, _)| r)
}

/// Forward trace, then backward with upstream gradients computed from the
/// forward result by `upstream`.
pub(crate) fn trace_with_backward(
    octree: &LightingOctree,
    cone: &Cone,
    cfg: &MarchConfig,
    grads: &mut GradientBuffer,
    upstream: impl FnOnce(&TraceResult) -> ([f64; 3], f64),
) -> Result<(TraceResult, ([f64; 3], f64))> {
    if !grads.matches(octree) {
        return Err(Error::ShapeMismatch(
            "gradient buffer does not match the octree".into(),
        ));
    }
    let forward = trace_cone(octree, cone, cfg)?;
    let (g, h) = upstream(&forward);
    // total of q_n = T_n a_n (w_n g.C_n + h s_n)
    let total = dot(&g, &forward.radiance) + h * forward.depth;
    let mut prefix = 0.0;
    march(octree, cone, cfg, |sp| {
        let a = sp.alpha();
        let per_color = sp.weight * dot(&g, &sp.color) + h * sp.distance;
        let q = sp.transmittance * a * per_color;
        prefix += q;
        let Some(node) = sp.node else { return };
        let after = total - prefix;
        let survive = (-sp.sigma * sp.delta).exp();
        let d_sigma = sp.delta * (survive * sp.transmittance * per_color - after);
        let slot_c = &mut grads.color[node.depth as usize][node.index as usize];
        let k = sp.weight * sp.transmittance * a;
        for c in 0..3 {
            slot_c[c] += g[c] * k;
        }
        grads.sigma[node.depth as usize][node.index as usize] += d_sigma;
    })?;
    Ok((forward, (g, h)))
}

#[inline]
fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Radiance (RGB) and expected depth (single channel) images, in the
/// octree's unit-cube length units for depth.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub radiance: ImageHdr,
    pub depth: ImageHdr,
    pub samples: u64,
}

/// Traces one cone per pixel (row-major) in parallel.
pub fn render_image(
    octree: &LightingOctree,
    cones: &[Cone],
    width: usize,
    height: usize,
    cfg: &MarchConfig,
) -> Result<RenderOutput> {
    cfg.validate()?;
    if cones.len() != width * height {
        return Err(Error::SizeMismatch(format!(
            "{} cones for a {width}x{height} image",
            cones.len()
        )));
    }
    let traces: Vec<TraceResult> = cones
        .par_iter()
        .map(|cone| trace_cone(octree, cone, cfg))
        .collect::<Result<_>>()?;
    let mut radiance = ImageHdr::new(width, height, 3);
    let mut depth = ImageHdr::new(width, height, 1);
    let mut samples = 0u64;
    for (i, t) in traces.iter().enumerate() {
        for c in 0..3 {
            radiance.data[3 * i + c] = t.radiance[c] as f32;
        }
        depth.data[i] = t.depth as f32;
        samples += t.samples as u64;
    }
    Ok(RenderOutput {
        radiance,
        depth,
        samples,
    })
}
