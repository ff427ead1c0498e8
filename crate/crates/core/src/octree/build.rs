use super::{
    cell_side, CloudPoint, LightingOctree, NodeFeatures, NodeHandle, OctreeLevel,
    PointCloud, ShuffleKey, WorldBBox,
};
use crate::error::{Error, Result};

/// Relative padding added on each side of the cloud extent.
pub const DEFAULT_PAD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildConfig {
    pub max_depth: u8,
    /// Density given to occupied leaves; `None` means `4 / leaf_side`,
    /// which makes one leaf about 98% opaque.
    pub sigma_surface: Option<f64>,
}

impl BuildConfig {
    pub fn new(max_depth: u8) -> Self {
        Self {
            max_depth,
            sigma_surface: None,
        }
    }

    pub fn surface_sigma(&self) -> f64 {
        self.sigma_surface
            .unwrap_or_else(|| 4.0 / cell_side(self.max_depth))
    }
}

pub fn normalize_cloud(cloud: &PointCloud) -> Result<(PointCloud, WorldBBox)> {
    normalize_cloud_with_pad(cloud, DEFAULT_PAD)
}

/// Scales a cloud uniformly into the unit cube. The cube side is the
/// largest axis extent times `1 + 2 * pad`, centered on the cloud; a cloud
/// with zero extent gets a side of one world unit.
pub fn normalize_cloud_with_pad(cloud: &PointCloud, pad: f64) -> Result<(PointCloud, WorldBBox)> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(pad >= 0.0 && pad.is_finite()) {
        return Err(Error::InvalidConfig(format!("pad {pad}")));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (index, pt) in cloud.points.iter().enumerate() {
        if !pt.position.iter().all(|v| v.is_finite()) {
            return Err(Error::PointOutOfUnitCube {
                index,
                position: pt.position,
            });
        }
        for a in 0..3 {
            lo[a] = lo[a].min(pt.position[a]);
            hi[a] = hi[a].max(pt.position[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let side = if extent > 0.0 {
        extent * (1.0 + 2.0 * pad)
    } else {
        1.0
    };
    let min = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]) - 0.5 * side);
    let bbox = WorldBBox { min, side };
    let points = cloud
        .points
        .iter()
        .map(|pt| CloudPoint {
            position: bbox.to_unit(pt.position),
            color: pt.color,
        })
        .collect();
    Ok((PointCloud { points }, bbox))
}

/// Breadth-first construction from a unit-cube cloud. Occupied nodes above
/// the finest level split into eight children; occupied leaves take the mean
/// color of their points and the surface density, and interior nodes are
/// filled by [`aggregate_mips`].
pub fn build_octree(
    cloud: &PointCloud,
    bbox: WorldBBox,
    cfg: &BuildConfig,
) -> Result<LightingOctree> {
    let depth = cfg.max_depth;
    let mut tree = LightingOctree::empty(depth, bbox)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sigma = cfg.surface_sigma();
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("surface sigma {sigma}")));
    }

    let mut keyed = Vec::with_capacity(cloud.len());
    for (index, pt) in cloud.points.iter().enumerate() {
        let inside = pt.position.iter().all(|v| (0.0..=1.0).contains(v));
        if !inside {
            return Err(Error::PointOutOfUnitCube {
                index,
                position: pt.position,
            });
        }
        keyed.push((ShuffleKey::from_point(pt.position, depth), pt.color));
    }
    keyed.sort_by_key(|(k, _)| *k);

    // unique leaf keys with their mean colors
    let mut leaves: Vec<(ShuffleKey, [f64; 3])> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (k, c) in keyed {
        match leaves.last_mut() {
            Some((last, sum)) if *last == k => {
                for a in 0..3 {
                    sum[a] += c[a];
                }
                *counts.last_mut().unwrap() += 1;
            }
            _ => {
                leaves.push((k, c));
                counts.push(1);
            }
        }
    }
    for ((_, sum), n) in leaves.iter_mut().zip(&counts) {
        for v in sum.iter_mut() {
            *v /= *n as f64;
        }
    }

    let mut occupied: Vec<Vec<ShuffleKey>> = vec![Vec::new(); depth as usize + 1];
    occupied[depth as usize] = leaves.iter().map(|(k, _)| *k).collect();
    for d in (0..depth as usize).rev() {
        let mut up: Vec<ShuffleKey> = occupied[d + 1].iter().map(|k| k.parent()).collect();
        up.dedup();
        occupied[d] = up;
    }

    let mut levels = std::mem::take(&mut tree).into_levels();
    levels[0].split[0] = true;
    for d in 0..depth as usize {
        let mut next = OctreeLevel::default();
        let child_occupied = &occupied[d + 1];
        let mut cursor = 0usize;
        let parents: Vec<ShuffleKey> = levels[d]
            .keys
            .iter()
            .zip(&levels[d].split)
            .filter(|(_, s)| **s)
            .map(|(k, _)| *k)
            .collect();
        for parent in parents {
            for octant in 0..8 {
                let key = parent.child(octant);
                while cursor < child_occupied.len() && child_occupied[cursor] < key {
                    cursor += 1;
                }
                let is_occupied = child_occupied.get(cursor) == Some(&key);
                let is_leaf_level = d + 1 == depth as usize;
                let features = if is_occupied && is_leaf_level {
                    let (_, color) = leaves[cursor];
                    NodeFeatures { color, sigma }
                } else {
                    NodeFeatures::ZERO
                };
                next.push(key, is_occupied && !is_leaf_level, features);
            }
        }
        levels[d + 1] = next;
    }
    let mut tree = LightingOctree::from_levels_unchecked(depth, levels, bbox);
    aggregate_mips(&mut tree);
    Ok(tree)
}

impl Default for LightingOctree {
    fn default() -> Self {
        LightingOctree::empty(1, WorldBBox::UNIT).expect("depth 1 is valid")
    }
}

/// Fills every split node from its children, deepest level first:
/// density is the mean over all eight octants (missing children count as
/// zero) and color is the density-weighted mean of the present children,
/// falling back to the plain mean when all children have zero density.
pub fn aggregate_mips(tree: &mut LightingOctree) {
    let first_child = &tree.first_child;
    let child_count = &tree.child_count;
    for d in (0..tree.max_depth as usize).rev() {
        let (upper, lower) = tree.levels.split_at_mut(d + 1);
        let parents = &mut upper[d];
        let children = &lower[0];
        for i in 0..parents.len() {
            if !parents.split[i] || first_child[d][i] == super::NO_CHILDREN {
                continue;
            }
            let start = first_child[d][i] as usize;
            let end = start + child_count[d][i] as usize;
            parents.features[i] = aggregate_children(&children.features[start..end]);
        }
    }
}

pub(crate) fn aggregate_children(children: &[NodeFeatures]) -> NodeFeatures {
    let total: f64 = children.iter().map(|f| f.sigma).sum();
    let mut color = [0.0; 3];
    if total > 0.0 {
        for f in children {
            for a in 0..3 {
                color[a] += f.sigma * f.color[a];
            }
        }
        for c in &mut color {
            *c /= total;
        }
    } else if !children.is_empty() {
        for f in children {
            for a in 0..3 {
                color[a] += f.color[a];
            }
        }
        for c in &mut color {
            *c /= children.len() as f64;
        }
    }
    NodeFeatures {
        color,
        sigma: total / 8.0,
    }
}

impl LightingOctree {
    fn children_range(&self, depth: usize, index: usize) -> std::ops::Range<usize> {
        self.children(NodeHandle {
            depth: depth as u8,
            index: index as u32,
        })
    }
}

/// Splits the given unsplit nodes; the eight new children copy their
/// parent's features, so rendering is unchanged.
pub fn subdivide(tree: &mut LightingOctree, nodes: &[NodeHandle]) -> Result<()> {
    let mut nodes = nodes.to_vec();
    nodes.sort();
    nodes.dedup();
    for n in &nodes {
        let level = tree
            .levels
            .get(n.depth as usize)
            .filter(|l| (n.index as usize) < l.len());
        let reason = match level {
            None => Some("no such node"),
            Some(_) if n.depth >= tree.max_depth => Some("already at max depth"),
            Some(l) if l.split[n.index as usize] => Some("already split"),
            Some(_) => None,
        };
        if let Some(reason) = reason {
            return Err(Error::NotSubdividable {
                depth: n.depth,
                index: n.index as usize,
                reason,
            });
        }
    }
    if nodes.is_empty() {
        return Ok(());
    }
    let (max_depth, bbox) = (tree.max_depth, tree.bbox);
    let mut lv = std::mem::take(tree).into_levels();
    let mut added: Vec<Vec<(ShuffleKey, NodeFeatures)>> = vec![Vec::new(); lv.len()];
    for n in &nodes {
        let level = &mut lv[n.depth as usize];
        level.split[n.index as usize] = true;
        let key = level.keys[n.index as usize];
        let features = level.features[n.index as usize];
        for o in 0..8 {
            added[n.depth as usize + 1].push((key.child(o), features));
        }
    }
    for (d, extra) in added.into_iter().enumerate() {
        if extra.is_empty() {
            continue;
        }
        let level = &mut lv[d];
        let mut merged: Vec<(ShuffleKey, bool, NodeFeatures)> = level
            .keys
            .iter()
            .zip(&level.split)
            .zip(&level.features)
            .map(|((k, s), f)| (*k, *s, *f))
            .chain(extra.into_iter().map(|(k, f)| (k, false, f)))
            .collect();
        merged.sort_by_key(|e| e.0);
        level.keys = merged.iter().map(|e| e.0).collect();
        level.split = merged.iter().map(|e| e.1).collect();
        level.features = merged.iter().map(|e| e.2).collect();
    }
    *tree = LightingOctree::from_levels_unchecked(max_depth, lv, bbox);
    Ok(())
}

/// Removes every subtree whose unsplit nodes all have density below
/// `sigma_min`, then re-aggregates. Pruned children of a surviving parent
/// stay as empty placeholders; a parent left with no surviving child
/// becomes unsplit.
pub fn prune(tree: &mut LightingOctree, sigma_min: f64) {
    let depth = tree.max_depth as usize;
    let mut keep: Vec<Vec<bool>> = tree
        .levels
        .iter()
        .map(|l| vec![false; l.len()])
        .collect();
    for d in (0..=depth).rev() {
        for i in 0..tree.levels[d].len() {
            keep[d][i] = if tree.levels[d].split[i] {
                let range = tree.children_range(d, i);
                keep[d + 1][range].iter().any(|k| *k)
            } else {
                tree.levels[d].features[i].sigma >= sigma_min
            };
        }
    }

    let mut levels = vec![OctreeLevel::default(); depth + 1];
    // (source index, kept) for nodes of the level being emitted
    let root_split = tree.levels[0].split[0] && keep[0][0];
    let root_features = if keep[0][0] {
        tree.levels[0].features[0]
    } else {
        NodeFeatures::ZERO
    };
    levels[0].push(ShuffleKey::ROOT, root_split, root_features);
    let mut frontier: Vec<usize> = if root_split { vec![0] } else { vec![] };
    for d in 0..depth {
        let mut next_frontier = Vec::new();
        for &src in &frontier {
            for c in tree.children_range(d, src) {
                let level = &tree.levels[d + 1];
                if keep[d + 1][c] {
                    levels[d + 1].push(level.keys[c], level.split[c], level.features[c]);
                    if level.split[c] {
                        next_frontier.push(c);
                    }
                } else {
                    levels[d + 1].push(level.keys[c], false, NodeFeatures::ZERO);
                }
            }
        }
        frontier = next_frontier;
    }
    let bbox = tree.bbox;
    *tree = LightingOctree::from_levels_unchecked(tree.max_depth, levels, bbox);
    aggregate_mips(tree);
}
