//! Inverse rendering: fits octree radiance and density to observed
//! panoramas through the differentiable cone tracer.
//!
//! Only unsplit nodes are free parameters. Interior nodes are always the
//! mip aggregate of their children, so gradients that land on interior
//! samples are pushed down to the leaves through the aggregation rule.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{panorama_cones, CameraPose, Cone};
use crate::error::{Error, Result};
use crate::image::ImageHdr;
use crate::metrics::{self, LossWeights, ScConfig};
use crate::octree::{aggregate_mips, cell_side, subdivide, LightingOctree, NodeHandle, ShuffleKey};
use crate::renderer::{render_image, trace_cone, trace_with_backward, GradientBuffer, MarchConfig};

/// Rays per parallel work unit. Fixed so that gradient sums do not depend
/// on the thread count.
const CHUNK: usize = 256;

/// Losses below this never count as divergence; the ground truth is stored
/// in f32, so a perfect fit still leaves round-off of this order or less.
pub const DIVERGENCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr_color: f64,
    pub lr_sigma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: LossWeights,
    /// Iterations after which the highest-scoring leaves are subdivided.
    #[serde(alias = "refine_depths")]
    pub refine_at: Vec<usize>,
    /// Share of candidate leaves split at each refinement.
    pub refine_fraction: f64,
    /// Share of each view's pixels drawn per iteration.
    pub batch_fraction: f64,
    pub seed: u64,
    /// Interior nodes are recomputed from their children every this many
    /// iterations.
    pub aggregate_every: usize,
    /// Leaves with zero density stay fixed, so occupancy only changes
    /// through refinement.
    pub freeze_empty: bool,
    /// Loss above this multiple of the first loss aborts the fit.
    pub divergence_factor: f64,
    pub march: MarchConfig,
    /// Panorama cone half-angle; defaults to half a pixel.
    pub cone_angle: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            lr_color: 1e-2,
            lr_sigma: 5e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss: LossWeights::default(),
            refine_at: vec![150, 300],
            refine_fraction: 0.1,
            batch_fraction: 0.25,
            seed: 0,
            aggregate_every: 1,
            divergence_factor: 1e3,
            freeze_empty: true,
            march: MarchConfig::unit(),
            cone_angle: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        for (name, v) in [("lr_color", self.lr_color), ("lr_sigma", self.lr_sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} = {v}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps = {}", self.eps));
        }
        if !(self.loss.lambda_li >= 0.0 && self.loss.lambda_ld >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return bad(format!("batch_fraction = {}", self.batch_fraction));
        }
        if !(0.0..=1.0).contains(&self.refine_fraction) {
            return bad(format!("refine_fraction = {}", self.refine_fraction));
        }
        if self.aggregate_every == 0 {
            return bad("aggregate_every must be at least 1".into());
        }
        if !(self.divergence_factor > 1.0) {
            return bad(format!("divergence_factor = {}", self.divergence_factor));
        }
        self.march.validate()
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            march: self.march,
            cone_angle: self.cone_angle,
            sc: ScConfig::default(),
        }
    }
}

/// One observed panorama with its depth panorama and world-space pose.
/// Depths are distances in world units.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub width: usize,
    pub height: usize,
    pub radiance: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub pose: CameraPose,
}

impl View {
    pub fn from_images(radiance: &ImageHdr, depth: &ImageHdr, pose: CameraPose) -> Result<Self> {
        if radiance.channels != 3 || depth.width != radiance.width || depth.height != radiance.height
        {
            return Err(Error::ShapeMismatch(format!(
                "panorama {}x{}x{} with depth {}x{}",
                radiance.width, radiance.height, radiance.channels, depth.width, depth.height
            )));
        }
        Ok(Self {
            width: radiance.width,
            height: radiance.height,
            radiance: (0..radiance.pixel_count())
                .map(|i| {
                    let p = &radiance.data[3 * i..3 * i + 3];
                    [p[0] as f64, p[1] as f64, p[2] as f64]
                })
                .collect(),
            depth: (0..depth.pixel_count())
                .map(|i| depth.data[i * depth.channels] as f64)
                .collect(),
            pose,
        })
    }

    /// Renders a view of `octree` at full precision.
    pub fn render(
        octree: &LightingOctree,
        pose: CameraPose,
        width: usize,
        height: usize,
        march: &MarchConfig,
        cone_angle: Option<f64>,
    ) -> Result<Self> {
        march.validate()?;
        let bbox = octree.bbox();
        let cones = panorama_cones(width, height, &pose.to_unit(&bbox), cone_angle)?;
        let traces = cones
            .par_iter()
            .map(|c| trace_cone(octree, c, march))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width,
            height,
            radiance: traces.iter().map(|t| t.radiance).collect(),
            depth: traces.iter().map(|t| t.depth * bbox.side).collect(),
            pose,
        })
    }

    pub fn radiance_image(&self) -> ImageHdr {
        let data = self.radiance.iter().flatten().map(|v| *v as f32).collect();
        ImageHdr::from_data(self.width, self.height, 3, data).expect("view shape")
    }

    pub fn depth_image(&self) -> ImageHdr {
        let data = self.depth.iter().map(|v| *v as f32).collect();
        ImageHdr::from_data(self.width, self.height, 1, data).expect("view shape")
    }
}

/// Adaptive-moment buffers for every node.
#[derive(Clone, Debug, Default, PartialEq)]
struct Moments {
    m: GradientBuffer,
    v: GradientBuffer,
}

/// Optimization state between iterations.
#[derive(Clone, Debug)]
pub struct FitState {
    pub octree: LightingOctree,
    pub iteration: usize,
    pub history: Vec<f64>,
    pub seed: u64,
    moments: Moments,
    // unsplit nodes that had density when the tree last changed shape
    occupied: Vec<Vec<bool>>,
    score: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

struct PreparedView<'a> {
    view: &'a View,
    cones: Vec<Cone>,
    // pixels with a finite ground-truth depth
    valid: Vec<u32>,
}

impl FitState {
    pub fn new(mut octree: LightingOctree, seed: u64) -> Self {
        aggregate_mips(&mut octree);
        let zeros = GradientBuffer::zeros_like(&octree);
        Self {
            occupied: occupied_leaves(&octree),
            score: zeros.sigma.clone(),
            moments: Moments {
                m: zeros.clone(),
                v: zeros,
            },
            octree,
            iteration: 0,
            history: Vec::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Runs `cfg.iterations - self.iteration` further steps.
    pub fn run(&mut self, views: &[View], cfg: &FitConfig) -> Result<()> {
        cfg.validate()?;
        let prepared = prepare(&self.octree, views, cfg)?;
        while self.iteration < cfg.iterations {
            self.step(&prepared, cfg)?;
        }
        Ok(())
    }

    fn step(&mut self, views: &[PreparedView], cfg: &FitConfig) -> Result<()> {
        let rays = self.draw_batch(views, cfg.batch_fraction);
        let (mut grads, loss) = loss_and_gradient(&self.octree, views, &rays, cfg)?;
        let initial = *self.history.first().unwrap_or(&loss);
        if !loss.is_finite() || loss > cfg.divergence_factor * initial.max(DIVERGENCE_FLOOR) {
            return Err(Error::DivergenceDetected {
                iteration: self.iteration,
                loss,
                initial,
            });
        }
        self.history.push(loss);
        push_to_leaves(&self.octree, &mut grads);
        self.accumulate_score(&grads);
        self.apply_adam(&grads, cfg);
        self.iteration += 1;
        if self.iteration.is_multiple_of(cfg.aggregate_every) {
            aggregate_mips(&mut self.octree);
        }
        if cfg.refine_at.contains(&self.iteration) {
            self.refine(cfg.refine_fraction)?;
            aggregate_mips(&mut self.octree);
        }
        Ok(())
    }

    fn draw_batch(&mut self, views: &[PreparedView], fraction: f64) -> Vec<(u32, u32)> {
        let mut rays = Vec::new();
        for (vi, pv) in views.iter().enumerate() {
            let n = pv.valid.len();
            if fraction >= 1.0 {
                rays.extend(pv.valid.iter().map(|&p| (vi as u32, p)));
                continue;
            }
            let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
            let mut picked: Vec<u32> = sample(&mut self.rng, n, k)
                .into_iter()
                .map(|i| pv.valid[i])
                .collect();
            picked.sort_unstable();
            rays.extend(picked.into_iter().map(|p| (vi as u32, p)));
        }
        rays
    }

    fn accumulate_score(&mut self, grads: &GradientBuffer) {
        for (d, level) in self.octree.levels().iter().enumerate() {
            let volume = cell_side(d as u8).powi(3);
            for i in 0..level.len() {
                if !level.split[i] {
                    self.score[d][i] += grads.sigma[d][i].abs() * volume;
                }
            }
        }
    }

    fn apply_adam(&mut self, grads: &GradientBuffer, cfg: &FitConfig) {
        let t = self.iteration as i32 + 1;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let step = lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
            *p = (*p - step).max(0.0);
        };
        let max_depth = self.octree.max_depth();
        for d in 0..=max_depth {
            let di = d as usize;
            let split = self.octree.level(d).split.clone();
            let features = self.octree.features_mut(d);
            for (i, f) in features.iter_mut().enumerate() {
                if split[i] || (cfg.freeze_empty && !self.occupied[di][i]) {
                    continue;
                }
                for c in 0..3 {
                    update(
                        &mut f.color[c],
                        grads.color[di][i][c],
                        &mut self.moments.m.color[di][i][c],
                        &mut self.moments.v.color[di][i][c],
                        cfg.lr_color,
                    );
                }
                update(
                    &mut f.sigma,
                    grads.sigma[di][i],
                    &mut self.moments.m.sigma[di][i],
                    &mut self.moments.v.sigma[di][i],
                    cfg.lr_sigma,
                );
            }
        }
    }

    /// Splits the top `fraction` of subdividable leaves ranked by
    /// accumulated `|dL/dsigma| * volume`, then resets the scores.
    fn refine(&mut self, fraction: f64) -> Result<()> {
        let max_depth = self.octree.max_depth();
        let mut candidates: Vec<(f64, NodeHandle)> = Vec::new();
        for d in 0..max_depth {
            for h in self.octree.handles(d) {
                let s = self.score[d as usize][h.index as usize];
                if !self.octree.is_split(h) && s > 0.0 {
                    candidates.push((s, h));
                }
            }
        }
        let count = (candidates.len() as f64 * fraction).ceil() as usize;
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let chosen: Vec<NodeHandle> = candidates.iter().take(count).map(|c| c.1).collect();
        if !chosen.is_empty() {
            let old = self.octree.clone();
            subdivide(&mut self.octree, &chosen)?;
            self.moments = Moments {
                m: remap(&old, &self.moments.m, &self.octree),
                v: remap(&old, &self.moments.v, &self.octree),
            };
        }
        self.score = GradientBuffer::zeros_like(&self.octree).sigma;
        self.occupied = occupied_leaves(&self.octree);
        Ok(())
    }

    pub fn into_parts(self) -> (LightingOctree, Vec<f64>) {
        (self.octree, self.history)
    }
}

fn occupied_leaves(tree: &LightingOctree) -> Vec<Vec<bool>> {
    tree.levels()
        .iter()
        .map(|l| l.features.iter().map(|f| f.sigma > 0.0).collect())
        .collect()
}

/// Carries per-node values over to a restructured tree by key; new nodes
/// start at zero.
fn remap(old: &LightingOctree, buf: &GradientBuffer, new: &LightingOctree) -> GradientBuffer {
    let mut out = GradientBuffer::zeros_like(new);
    for (d, level) in new.levels().iter().enumerate() {
        let index: HashMap<ShuffleKey, usize> = old.levels()[d]
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| (*k, i))
            .collect();
        for (i, key) in level.keys.iter().enumerate() {
            if let Some(&j) = index.get(key) {
                out.color[d][i] = buf.color[d][j];
                out.sigma[d][i] = buf.sigma[d][j];
            }
        }
    }
    out
}

fn prepare<'a>(
    octree: &LightingOctree,
    views: &'a [View],
    cfg: &FitConfig,
) -> Result<Vec<PreparedView<'a>>> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    let bbox = octree.bbox();
    views
        .iter()
        .map(|view| {
            let n = view.width * view.height;
            if view.radiance.len() != n || view.depth.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "view of {}x{} holds {} colors and {} depths",
                    view.width,
                    view.height,
                    view.radiance.len(),
                    view.depth.len()
                )));
            }
            if view.radiance.iter().flatten().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidConfig("view radiance must be finite and >= 0".into()));
            }
            let cones = panorama_cones(view.width, view.height, &view.pose.to_unit(&bbox), cfg.cone_angle)?;
            let valid = (0..n as u32)
                .filter(|&i| {
                    let d = view.depth[i as usize];
                    d.is_finite() && d >= 0.0
                })
                .collect::<Vec<_>>();
            if valid.is_empty() {
                return Err(Error::NoValidPixels);
            }
            Ok(PreparedView { view, cones, valid })
        })
        .collect()
}

/// Loss over `rays` and its gradient with respect to every node, summed in
/// a fixed chunk order.
fn loss_and_gradient(
    octree: &LightingOctree,
    views: &[PreparedView],
    rays: &[(u32, u32)],
    cfg: &FitConfig,
) -> Result<(GradientBuffer, f64)> {
    let n = rays.len().max(1) as f64;
    let side = octree.bbox().side;
    let (li, ld) = (cfg.loss.lambda_li, cfg.loss.lambda_ld);
    let parts = rays
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = GradientBuffer::zeros_like(octree);
            let mut loss = 0.0;
            for &(vi, pi) in chunk {
                let pv = &views[vi as usize];
                let target = pv.view.radiance[pi as usize];
                let target_depth = pv.view.depth[pi as usize];
                trace_with_backward(octree, &pv.cones[pi as usize], &cfg.march, &mut grads, |fwd| {
                    let mut g = [0.0; 3];
                    for c in 0..3 {
                        let r = fwd.radiance[c].max(0.0);
                        let e = r.ln_1p() - target[c].ln_1p();
                        loss += li * e * e / (3.0 * n);
                        g[c] = li * 2.0 * e / ((1.0 + r) * 3.0 * n);
                    }
                    let depth = fwd.depth * side;
                    let e = depth.ln_1p() - target_depth.ln_1p();
                    loss += ld * e * e / n;
                    let h = ld * 2.0 * e / ((1.0 + depth) * n) * side;
                    (g, h)
                })?;
            }
            Ok((grads, loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut total, mut loss) = iter.next().unwrap_or_else(|| (GradientBuffer::zeros_like(octree), 0.0));
    for (g, l) in iter {
        total.add_assign(&g);
        loss += l;
    }
    Ok((total, loss))
}

/// Moves gradients from interior nodes onto their children, top-down, by
/// differentiating the mip aggregation: parent density is the mean over
/// eight octants and parent color the density-weighted child mean.
fn push_to_leaves(octree: &LightingOctree, grads: &mut GradientBuffer) {
    for d in 0..octree.max_depth() {
        let di = d as usize;
        let parents = octree.level(d);
        let kids = octree.level(d + 1);
        for i in 0..parents.len() {
            if !parents.split[i] {
                continue;
            }
            let range = octree.children(NodeHandle { depth: d, index: i as u32 });
            if range.is_empty() {
                continue;
            }
            let gs = std::mem::take(&mut grads.sigma[di][i]);
            let gc = std::mem::take(&mut grads.color[di][i]);
            let parent = parents.features[i];
            let total: f64 = kids.features[range.clone()].iter().map(|f| f.sigma).sum();
            let k = range.len() as f64;
            for j in range {
                let child = kids.features[j];
                let mut ds = gs / 8.0;
                let dc = &mut grads.color[di + 1][j];
                for c in 0..3 {
                    if total > 0.0 {
                        ds += gc[c] * (child.color[c] - parent.color[c]) / total;
                        dc[c] += gc[c] * child.sigma / total;
                    } else {
                        dc[c] += gc[c] / k;
                    }
                }
                grads.sigma[di + 1][j] += ds;
            }
        }
    }
}

/// Fits the unsplit nodes of `initial` to `views`; returns the fitted
/// octree and the per-iteration batch loss.
pub fn fit(initial: &LightingOctree, views: &[View], cfg: &FitConfig) -> Result<(LightingOctree, Vec<f64>)> {
    let mut state = FitState::new(initial.clone(), cfg.seed);
    state.run(views, cfg)?;
    Ok(state.into_parts())
}

/// Full-set loss of `octree` against `views` under `cfg`'s weights.
pub fn full_loss(octree: &LightingOctree, views: &[View], cfg: &FitConfig) -> Result<f64> {
    let prepared = prepare(octree, views, cfg)?;
    let rays: Vec<(u32, u32)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(vi, pv)| pv.valid.iter().map(move |&p| (vi as u32, p)))
        .collect();
    loss_and_gradient(octree, &prepared, &rays, cfg).map(|(_, l)| l)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub march: MarchConfig,
    pub cone_angle: Option<f64>,
    pub sc: ScConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        FitConfig::default().eval_config()
    }
}

/// Scores on held-out views. `psnr` is computed on `log(x + 1)` radiance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr: f64,
    pub log_l2: f64,
    pub sc_metric: f64,
}

/// Renders every view from `octree` and compares against it.
pub fn render_views(octree: &LightingOctree, views: &[View], cfg: &EvalConfig) -> Result<Vec<ImageHdr>> {
    let bbox = octree.bbox();
    views
        .iter()
        .map(|v| {
            let cones = panorama_cones(v.width, v.height, &v.pose.to_unit(&bbox), cfg.cone_angle)?;
            Ok(render_image(octree, &cones, v.width, v.height, &cfg.march)?.radiance)
        })
        .collect()
}

pub fn evaluate(octree: &LightingOctree, views: &[View], cfg: &EvalConfig) -> Result<EvalReport> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    let pred = render_views(octree, views, cfg)?;
    let gt: Vec<ImageHdr> = views.iter().map(View::radiance_image).collect();
    let depth: Vec<ImageHdr> = views.iter().map(View::depth_image).collect();
    let mut log_l2 = 0.0;
    let mut count = 0.0;
    for (p, g) in pred.iter().zip(&gt) {
        let n = p.data.len() as f64;
        log_l2 += metrics::log_l2(p, g)? * n;
        count += n;
    }
    let log_l2 = log_l2 / count;
    Ok(EvalReport {
        psnr: metrics::psnr_from_mse(log_l2, 1.0),
        log_l2,
        sc_metric: metrics::sc_metric(&pred, &gt, &depth, &cfg.sc)?,
    })
}

/// Checkpoint sidecar stored next to an LOC1 octree file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub loss_history: Vec<f64>,
    pub config: FitConfig,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_state(state: &FitState, config: &FitConfig) -> Self {
        Self {
            iteration: state.iteration,
            loss_history: state.history.clone(),
            config: config.clone(),
            seed: state.seed,
        }
    }
}
