//! Losses and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageHdr;
use crate::octree::{LightingOctree, ShuffleKey};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]`.
pub const BCE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_li: f64,
    pub lambda_ld: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_li: 1.0,
            lambda_ld: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScConfig {
    pub alpha: f64,
}

impl Default for ScConfig {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

fn check_shapes(a: &ImageHdr, b: &ImageHdr) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Mean of `(log(x + 1) - log(y + 1))^2` over all values.
pub fn log_l2_values(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (i, (&x, &y)) in pred.iter().zip(gt).enumerate() {
        for v in [x, y] {
            if !(v >= 0.0) {
                return Err(Error::NegativeInput { index: i, value: v });
            }
        }
        let d = x.ln_1p() - y.ln_1p();
        sum += d * d;
    }
    Ok(sum / pred.len() as f64)
}

pub fn log_l2(pred: &ImageHdr, gt: &ImageHdr) -> Result<f64> {
    check_shapes(pred, gt)?;
    let p: Vec<f64> = pred.data.iter().map(|v| *v as f64).collect();
    let g: Vec<f64> = gt.data.iter().map(|v| *v as f64).collect();
    log_l2_values(&p, &g)
}

/// Scale-invariant error of log depths over the masked pixels:
/// `mean(g^2) - mean(g)^2` with `g = log(pred) - log(gt)`.
pub fn scale_invariant_l2(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} / {} / {} values",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let mut g = Vec::new();
    for (i, ((&p, &t), &m)) in pred.iter().zip(gt).zip(mask).enumerate() {
        if !m {
            continue;
        }
        for v in [p, t] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NegativeInput { index: i, value: v });
            }
        }
        g.push((p / t).ln());
    }
    if g.is_empty() {
        return Err(Error::EmptyMask);
    }
    // shift by the first value; the variance is unchanged and equal logs
    // give exactly zero
    let shift = g[0];
    let m = g.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in &g {
        let d = v - shift;
        s1 += d;
        s2 += d * d;
    }
    Ok((s2 / m - (s1 / m) * (s1 / m)).max(0.0))
}

/// Predicted split probabilities per level, keyed like octree nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitProbabilities {
    pub max_depth: u8,
    pub levels: Vec<Vec<(ShuffleKey, f64)>>,
}

impl SplitProbabilities {
    /// Uses the octree's own split labels as probabilities.
    pub fn from_octree(tree: &LightingOctree) -> Self {
        Self::with(tree, |split| if split { 1.0 } else { 0.0 })
    }

    /// Same nodes as `tree`, probabilities derived from each split label.
    pub fn with(tree: &LightingOctree, f: impl Fn(bool) -> f64) -> Self {
        Self {
            max_depth: tree.max_depth(),
            levels: tree
                .levels()
                .iter()
                .map(|l| l.keys.iter().zip(&l.split).map(|(k, s)| (*k, f(*s))).collect())
                .collect(),
        }
    }
}

/// Per-level mean binary cross-entropy between predicted split
/// probabilities and the ground-truth labels, summed over levels. A
/// predicted node is labeled 1 when its key exists and is split in `gt`.
pub fn octree_bce(pred: &SplitProbabilities, gt: &LightingOctree) -> Result<f64> {
    if pred.max_depth != gt.max_depth() {
        return Err(Error::DepthMismatch {
            pred: pred.max_depth,
            gt: gt.max_depth(),
        });
    }
    let mut total = 0.0;
    for (d, nodes) in pred.levels.iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        let Some(level) = gt.levels().get(d) else {
            return Err(Error::DepthMismatch {
                pred: (pred.levels.len() - 1) as u8,
                gt: gt.max_depth(),
            });
        };
        let mut sum = 0.0;
        for (key, p) in nodes {
            let label = level.find(*key).is_some_and(|i| level.split[i]);
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            sum -= if label { p.ln() } else { (1.0 - p).ln() };
        }
        total += sum / nodes.len() as f64;
    }
    Ok(total)
}

/// L1 norm of the forward-difference depth gradient at each pixel, with
/// azimuthal wraparound along u and a zero difference on the last row.
pub fn depth_gradient_l1(depth: &ImageHdr) -> Vec<f64> {
    let (w, h) = (depth.width, depth.height);
    let mut out = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let d = depth.value(u, v);
            let du = depth.value((u + 1) % w, v) - d;
            let dv = if v + 1 < h { depth.value(u, v + 1) - d } else { 0.0 };
            out.push(du.abs() + dv.abs());
        }
    }
    out
}

/// Spatial-coherence error: mean over probes, pixels and channels of
/// `|pred - gt| * exp(alpha * |grad D|_1)`.
pub fn sc_metric(
    pred: &[ImageHdr],
    gt: &[ImageHdr],
    depth: &[ImageHdr],
    cfg: &ScConfig,
) -> Result<f64> {
    if pred.is_empty() || pred.len() != gt.len() || pred.len() != depth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted, {} ground-truth and {} depth probes",
            pred.len(),
            gt.len(),
            depth.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((p, g), d) in pred.iter().zip(gt).zip(depth) {
        check_shapes(p, g)?;
        if d.width != p.width || d.height != p.height {
            return Err(Error::ShapeMismatch(format!(
                "depth {}x{} vs probe {}x{}",
                d.width, d.height, p.width, p.height
            )));
        }
        let grad = depth_gradient_l1(&d.first_channel());
        for (i, weight) in grad.iter().map(|gn| (cfg.alpha * gn).exp()).enumerate() {
            for c in 0..p.channels {
                let k = i * p.channels + c;
                sum += (p.data[k] as f64 - g.data[k] as f64).abs() * weight;
            }
        }
        count += p.data.len();
    }
    Ok(sum / count as f64)
}

pub fn mse(pred: &ImageHdr, gt: &ImageHdr) -> Result<f64> {
    check_shapes(pred, gt)?;
    let n = pred.data.len().max(1) as f64;
    Ok(pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(pred: &ImageHdr, gt: &ImageHdr, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?, peak))
}

/// PSNR of `log(x + 1)` images with unit peak, for HDR comparisons.
pub fn log_psnr(pred: &ImageHdr, gt: &ImageHdr) -> Result<f64> {
    check_shapes(pred, gt)?;
    let n = pred.data.len().max(1) as f64;
    let mse = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| {
            let d = (*a as f64).max(0.0).ln_1p() - (*b as f64).max(0.0).ln_1p();
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse, 1.0))
}
