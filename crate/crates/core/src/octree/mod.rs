//! Sparse voxel octree holding per-node RGB radiance and density.
//!
//! Every split node materializes all eight children at the next level;
//! children that contain nothing are stored with zero features and a
//! cleared split label. Keys within a level are sorted, so the children of
//! one parent form a contiguous block.

mod build;
pub mod format;
mod key;

pub use build::{
    aggregate_mips, build_octree, normalize_cloud, normalize_cloud_with_pad, prune, subdivide,
    BuildConfig, DEFAULT_PAD,
};
pub use key::{cell_side, clamp_unit, ShuffleKey, UNIT_MAX};

use crate::error::{Error, Result};

pub const MAX_SUPPORTED_DEPTH: u8 = 10;

/// Emitted radiance and extinction density of one node.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NodeFeatures {
    pub color: [f64; 3],
    /// Extinction per unit-cube length.
    pub sigma: f64,
}

impl NodeFeatures {
    pub const ZERO: NodeFeatures = NodeFeatures {
        color: [0.0; 3],
        sigma: 0.0,
    };

    pub fn new(color: [f64; 3], sigma: f64) -> Self {
        Self { color, sigma }
    }

    pub fn is_valid(&self) -> bool {
        self.color
            .iter()
            .chain(std::iter::once(&self.sigma))
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OctreeLevel {
    pub keys: Vec<ShuffleKey>,
    pub split: Vec<bool>,
    pub features: Vec<NodeFeatures>,
}

impl OctreeLevel {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn find(&self, key: ShuffleKey) -> Option<usize> {
        self.keys.binary_search(&key).ok()
    }

    fn push(&mut self, key: ShuffleKey, split: bool, features: NodeFeatures) {
        self.keys.push(key);
        self.split.push(split);
        self.features.push(features);
    }
}

/// Affine map between world coordinates and the unit cube: uniform scale
/// plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldBBox {
    pub min: [f64; 3],
    pub side: f64,
}

impl WorldBBox {
    pub const UNIT: WorldBBox = WorldBBox {
        min: [0.0; 3],
        side: 1.0,
    };

    pub fn to_unit(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.min[0]) / self.side,
            (p[1] - self.min[1]) / self.side,
            (p[2] - self.min[2]) / self.side,
        ]
    }

    pub fn to_world(&self, u: [f64; 3]) -> [f64; 3] {
        [
            u[0] * self.side + self.min[0],
            u[1] * self.side + self.min[1],
            u[2] * self.side + self.min[2],
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.to_unit(p).iter().all(|v| (0.0..=1.0).contains(v))
    }
}

impl Default for WorldBBox {
    fn default() -> Self {
        Self::UNIT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeHandle {
    pub depth: u8,
    pub index: u32,
}

/// Result of point location.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Located {
    pub node: NodeHandle,
    /// Set when the node holds no data (unsplit with zero density) or the
    /// path ended at a missing child.
    pub empty: bool,
}

const NO_CHILDREN: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct LightingOctree {
    max_depth: u8,
    levels: Vec<OctreeLevel>,
    bbox: WorldBBox,
    // index of the first child in the next level, NO_CHILDREN if unsplit
    first_child: Vec<Vec<u32>>,
    child_count: Vec<Vec<u8>>,
}

impl LightingOctree {
    /// An octree with only an unsplit, empty root.
    pub fn empty(max_depth: u8, bbox: WorldBBox) -> Result<Self> {
        check_depth(max_depth)?;
        let mut levels = vec![OctreeLevel::default(); max_depth as usize + 1];
        levels[0].push(ShuffleKey::ROOT, false, NodeFeatures::ZERO);
        Self::from_levels(max_depth, levels, bbox)
    }

    /// Builds an octree from raw levels, checking every structural invariant.
    pub fn from_levels(max_depth: u8, levels: Vec<OctreeLevel>, bbox: WorldBBox) -> Result<Self> {
        check_depth(max_depth)?;
        let mut tree = LightingOctree {
            max_depth,
            levels,
            bbox,
            first_child: Vec::new(),
            child_count: Vec::new(),
        };
        tree.validate()?;
        tree.reindex();
        Ok(tree)
    }

    pub(crate) fn from_levels_unchecked(
        max_depth: u8,
        levels: Vec<OctreeLevel>,
        bbox: WorldBBox,
    ) -> Self {
        let mut tree = LightingOctree {
            max_depth,
            levels,
            bbox,
            first_child: Vec::new(),
            child_count: Vec::new(),
        };
        debug_assert!(tree.validate().is_ok(), "{:?}", tree.validate());
        tree.reindex();
        tree
    }

    pub fn max_depth(&self) -> u8 {
        self.max_depth
    }

    pub fn bbox(&self) -> WorldBBox {
        self.bbox
    }

    pub fn set_bbox(&mut self, bbox: WorldBBox) {
        self.bbox = bbox;
    }

    /// Leaf side length in unit-cube coordinates.
    pub fn leaf_side(&self) -> f64 {
        cell_side(self.max_depth)
    }

    pub fn levels(&self) -> &[OctreeLevel] {
        &self.levels
    }

    pub fn level(&self, depth: u8) -> &OctreeLevel {
        &self.levels[depth as usize]
    }

    pub(crate) fn into_levels(self) -> Vec<OctreeLevel> {
        self.levels
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(OctreeLevel::len).sum()
    }

    pub fn features(&self, node: NodeHandle) -> &NodeFeatures {
        &self.levels[node.depth as usize].features[node.index as usize]
    }

    pub fn is_split(&self, node: NodeHandle) -> bool {
        self.levels[node.depth as usize].split[node.index as usize]
    }

    pub fn key(&self, node: NodeHandle) -> ShuffleKey {
        self.levels[node.depth as usize].keys[node.index as usize]
    }

    /// Mutable access to the feature array of one level. Structure stays
    /// fixed; callers must keep values finite and non-negative.
    pub fn features_mut(&mut self, depth: u8) -> &mut [NodeFeatures] {
        &mut self.levels[depth as usize].features
    }

    /// Copy with every color set to zero; structure and density are kept.
    pub fn without_radiance(&self) -> Self {
        let mut t = self.clone();
        for level in &mut t.levels {
            for f in &mut level.features {
                f.color = [0.0; 3];
            }
        }
        t
    }

    /// Whether a node carries data: split, or unsplit with positive density.
    pub fn is_occupied(&self, node: NodeHandle) -> bool {
        self.is_split(node) || self.features(node).sigma > 0.0
    }

    /// Index range of the children of `node` in the next level.
    pub fn children(&self, node: NodeHandle) -> std::ops::Range<usize> {
        let d = node.depth as usize;
        let first = self.first_child[d][node.index as usize];
        if first == NO_CHILDREN {
            return 0..0;
        }
        let first = first as usize;
        first..first + self.child_count[d][node.index as usize] as usize
    }

    pub fn handles(&self, depth: u8) -> impl Iterator<Item = NodeHandle> + '_ {
        (0..self.levels[depth as usize].len()).map(move |i| NodeHandle {
            depth,
            index: i as u32,
        })
    }

    /// Node at `depth` whose cell contains `p`, or the deepest ancestor on
    /// the path when it ends early. `None` when `p` is outside `[0,1]^3`.
    pub fn locate(&self, p: [f64; 3], depth: u8) -> Option<Located> {
        if !p.iter().all(|v| (0.0..=1.0).contains(v)) {
            return None;
        }
        let depth = depth.min(self.max_depth);
        let target = ShuffleKey::from_point(p, depth);
        Some(self.descend(target, depth))
    }

    /// Walks from the root toward the cell `target` at `depth`.
    pub(crate) fn descend(&self, target: ShuffleKey, depth: u8) -> Located {
        let mut node = NodeHandle { depth: 0, index: 0 };
        while node.depth < depth {
            let d = node.depth as usize;
            let first = self.first_child[d][node.index as usize];
            if first == NO_CHILDREN {
                break;
            }
            let want = target.ancestor(depth - node.depth - 1);
            let count = self.child_count[d][node.index as usize] as usize;
            let keys = &self.levels[d + 1].keys[first as usize..first as usize + count];
            // full blocks are indexed directly by octant
            let slot = if count == 8 {
                Some(want.octant() as usize)
            } else {
                keys.iter().position(|k| *k == want)
            };
            match slot {
                Some(s) => {
                    node = NodeHandle {
                        depth: node.depth + 1,
                        index: first + s as u32,
                    }
                }
                None => return Located { node, empty: true },
            }
        }
        Located {
            node,
            empty: !self.is_occupied(node),
        }
    }

    pub fn stats(&self) -> OctreeStats {
        let nodes_per_level: Vec<usize> = self.levels.iter().map(OctreeLevel::len).collect();
        let total_nodes = nodes_per_level.iter().sum();
        let leaf_count = self
            .levels
            .iter()
            .map(|l| {
                l.split
                    .iter()
                    .zip(&l.features)
                    .filter(|(s, f)| !**s && f.sigma > 0.0)
                    .count()
            })
            .sum();
        let memory_bytes = self
            .levels
            .iter()
            .map(|l| {
                l.keys.capacity() * std::mem::size_of::<ShuffleKey>()
                    + l.split.capacity()
                    + l.features.capacity() * std::mem::size_of::<NodeFeatures>()
            })
            .sum::<usize>()
            + self
                .first_child
                .iter()
                .zip(&self.child_count)
                .map(|(f, c)| f.capacity() * 4 + c.capacity())
                .sum::<usize>();
        OctreeStats {
            max_depth: self.max_depth,
            nodes_per_level,
            total_nodes,
            leaf_count,
            memory_bytes,
            serialized_bytes: format::serialized_len(self),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidOctree(msg));
        if self.levels.len() != self.max_depth as usize + 1 {
            return bad(format!(
                "{} levels for max depth {}",
                self.levels.len(),
                self.max_depth
            ));
        }
        if self.levels[0].keys != [ShuffleKey::ROOT] {
            return bad("level 0 must hold exactly the root".into());
        }
        if !(self.bbox.side > 0.0 && self.bbox.side.is_finite())
            || !self.bbox.min.iter().all(|v| v.is_finite())
        {
            return bad(format!("bad bounding box {:?}", self.bbox));
        }
        for (d, level) in self.levels.iter().enumerate() {
            if level.split.len() != level.len() || level.features.len() != level.len() {
                return bad(format!("ragged arrays at depth {d}"));
            }
            let limit = 1u64 << (3 * d);
            for w in level.keys.windows(2) {
                if w[0] >= w[1] {
                    return bad(format!("keys not strictly increasing at depth {d}"));
                }
            }
            if let Some(k) = level.keys.last() {
                if k.0 >= limit {
                    return bad(format!("key {} out of range at depth {d}", k.0));
                }
            }
            if let Some(f) = level.features.iter().find(|f| !f.is_valid()) {
                return bad(format!("invalid features {f:?} at depth {d}"));
            }
            if d == self.max_depth as usize && level.split.iter().any(|s| *s) {
                return bad("split label set at max depth".into());
            }
            if d > 0 {
                let parent = &self.levels[d - 1];
                for k in &level.keys {
                    match parent.find(k.parent()) {
                        Some(i) if parent.split[i] => {}
                        _ => return bad(format!("node {} at depth {d} has no split parent", k.0)),
                    }
                }
            }
            if d < self.max_depth as usize {
                let next = &self.levels[d + 1];
                for (k, s) in level.keys.iter().zip(&level.split) {
                    if *s && !has_any_child(next, *k) {
                        return bad(format!("split node {} at depth {d} has no children", k.0));
                    }
                }
            }
        }
        Ok(())
    }

    /// Recomputes child offsets after a structural change.
    fn reindex(&mut self) {
        self.first_child.clear();
        self.child_count.clear();
        for d in 0..self.levels.len() {
            let level = &self.levels[d];
            let mut first = vec![NO_CHILDREN; level.len()];
            let mut count = vec![0u8; level.len()];
            if let Some(next) = self.levels.get(d + 1) {
                let mut c = 0usize;
                for (i, key) in level.keys.iter().enumerate() {
                    while c < next.len() && next.keys[c].parent() < *key {
                        c += 1;
                    }
                    let start = c;
                    while c < next.len() && next.keys[c].parent() == *key {
                        c += 1;
                    }
                    if level.split[i] && c > start {
                        first[i] = start as u32;
                        count[i] = (c - start) as u8;
                    }
                }
            }
            self.first_child.push(first);
            self.child_count.push(count);
        }
    }
}

fn has_any_child(next: &OctreeLevel, key: ShuffleKey) -> bool {
    let lo = next.keys.partition_point(|k| *k < key.child(0));
    next.keys.get(lo).is_some_and(|k| k.parent() == key)
}

fn check_depth(max_depth: u8) -> Result<()> {
    if (1..=MAX_SUPPORTED_DEPTH).contains(&max_depth) {
        Ok(())
    } else {
        Err(Error::InvalidDepth(max_depth as u32))
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct OctreeStats {
    pub max_depth: u8,
    pub nodes_per_level: Vec<usize>,
    pub total_nodes: usize,
    /// Unsplit nodes with positive density.
    pub leaf_count: usize,
    pub memory_bytes: usize,
    pub serialized_bytes: usize,
}

/// A world-space point with its RGB color.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub position: [f64; 3],
    pub color: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<CloudPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl FromIterator<CloudPoint> for PointCloud {
    fn from_iter<I: IntoIterator<Item = CloudPoint>>(iter: I) -> Self {
        Self {
            points: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests;
