use proptest::prelude::*;

use super::*;

fn pt(x: f64, y: f64, z: f64) -> CloudPoint {
    CloudPoint {
        position: [x, y, z],
        color: [1.0, 1.0, 1.0],
    }
}

fn build(points: Vec<CloudPoint>, depth: u8) -> LightingOctree {
    build_octree(&PointCloud::new(points), WorldBBox::UNIT, &BuildConfig::new(depth)).unwrap()
}

fn revalidate(tree: &LightingOctree) {
    LightingOctree::from_levels(tree.max_depth(), tree.levels().to_vec(), tree.bbox())
        .expect("invariants hold");
}

fn plane_cloud(n: usize, z: f64) -> PointCloud {
    (0..n * n)
        .map(|i| {
            let (a, b) = (i % n, i / n);
            pt((a as f64 + 0.5) / n as f64, (b as f64 + 0.5) / n as f64, z)
        })
        .collect()
}

#[test]
fn normalize_two_points() {
    let cloud = PointCloud::new(vec![pt(0.0, 0.0, 0.0), pt(2.0, 0.0, 0.0)]);
    let (unit, bbox) = normalize_cloud(&cloud).unwrap();
    assert!((bbox.side - 2.04).abs() < 1e-12);
    let x0 = unit.points[0].position[0];
    let x1 = unit.points[1].position[0];
    // (0 - 1) / 2.04 + 0.5 and (2 - 1) / 2.04 + 0.5
    assert!((x0 - 0.00980392156862745).abs() < 1e-12);
    assert!((x1 - 0.9901960784313726).abs() < 1e-12);
    for p in &unit.points {
        assert_eq!(p.position[1], 0.5);
        let back = bbox.to_world(p.position);
        let orig = cloud.points.iter().any(|q| {
            (0..3).all(|a| (q.position[a] - back[a]).abs() < 1e-12)
        });
        assert!(orig);
    }
}

#[test]
fn normalize_single_point_is_centered() {
    let cloud = PointCloud::new(vec![pt(3.0, -2.0, 7.0)]);
    let (unit, bbox) = normalize_cloud(&cloud).unwrap();
    assert_eq!(bbox.side, 1.0);
    assert_eq!(unit.points[0].position, [0.5, 0.5, 0.5]);
}

#[test]
fn normalize_unit_cloud_without_pad_is_identity() {
    let cloud = PointCloud::new(vec![pt(0.0, 0.0, 0.0), pt(1.0, 1.0, 1.0), pt(0.25, 0.5, 0.75)]);
    let (unit, bbox) = normalize_cloud_with_pad(&cloud, 0.0).unwrap();
    assert_eq!(bbox, WorldBBox::UNIT);
    for (a, b) in unit.points.iter().zip(&cloud.points) {
        for k in 0..3 {
            assert!((a.position[k] - b.position[k]).abs() < 1e-15);
        }
    }
}

#[test]
fn normalize_empty_cloud_fails() {
    assert!(matches!(
        normalize_cloud(&PointCloud::default()),
        Err(Error::EmptyCloud)
    ));
}

#[test]
fn single_point_descends_one_chain() {
    let tree = build(vec![pt(0.1, 0.1, 0.1)], 2);
    assert_eq!(tree.level(1).keys[tree.level(1).split.iter().position(|s| *s).unwrap()].octant(), 0);
    let occupied_leaves: Vec<_> = tree
        .handles(2)
        .filter(|h| tree.is_occupied(*h))
        .collect();
    assert_eq!(occupied_leaves.len(), 1);
    assert_eq!(tree.key(occupied_leaves[0]), ShuffleKey(0));
    assert_eq!(tree.stats().leaf_count, 1);
    assert_eq!(tree.stats().nodes_per_level, vec![1, 8, 8]);
}

#[test]
fn one_point_per_octant_gives_eight_leaves() {
    let mut pts = Vec::new();
    for o in 0..8u8 {
        let c = |b: u8| if b == 1 { 0.75 } else { 0.25 };
        pts.push(pt(c((o >> 2) & 1), c((o >> 1) & 1), c(o & 1)));
    }
    let tree = build(pts, 1);
    let stats = tree.stats();
    assert_eq!(stats.leaf_count, 8);
    assert_eq!(stats.total_nodes, 9);
}

#[test]
fn empty_tree_has_one_node() {
    let tree = LightingOctree::empty(4, WorldBBox::UNIT).unwrap();
    assert_eq!(tree.stats().total_nodes, 1);
    assert_eq!(tree.stats().leaf_count, 0);
}

#[test]
fn plane_is_surface_sparse() {
    let tree = build_octree(&plane_cloud(128, 0.5 + 1e-3), WorldBBox::UNIT, &BuildConfig::new(7))
        .unwrap();
    let leaves = tree.stats().leaf_count;
    assert!(leaves >= 128 * 128, "{leaves}");
    assert!(leaves <= 2 * 128 * 128, "{leaves}");
    assert!(tree.level(7).len() <= 2 * 128 * 128);
}

#[test]
fn leaf_color_is_mean_and_sigma_is_surface_default() {
    let mut a = pt(0.1, 0.1, 0.1);
    a.color = [1.0, 0.0, 0.0];
    let mut b = pt(0.11, 0.1, 0.1);
    b.color = [0.0, 1.0, 0.5];
    let tree = build(vec![a, b], 2);
    let loc = tree.locate([0.1, 0.1, 0.1], 2).unwrap();
    assert!(!loc.empty);
    let f = tree.features(loc.node);
    assert_eq!(f.color, [0.5, 0.5, 0.25]);
    assert_eq!(f.sigma, 16.0);
}

#[test]
fn out_of_cube_point_is_rejected() {
    let cloud = PointCloud::new(vec![pt(0.5, 1.2, 0.5)]);
    assert!(matches!(
        build_octree(&cloud, WorldBBox::UNIT, &BuildConfig::new(3)),
        Err(Error::PointOutOfUnitCube { index: 0, .. })
    ));
}

#[test]
fn locate_cases() {
    let tree = build(vec![pt(0.1, 0.1, 0.1), pt(0.3, 0.3, 0.3)], 3);
    // unoccupied octant stops at depth 1
    let l = tree.locate([0.9, 0.9, 0.9], 3).unwrap();
    assert_eq!(l.node.depth, 1);
    assert!(l.empty);
    // leaf centroid finds the leaf itself
    let key = ShuffleKey::from_point([0.1, 0.1, 0.1], 3);
    let l = tree.locate(key.center(3), 3).unwrap();
    assert_eq!(l.node.depth, 3);
    assert_eq!(tree.key(l.node), key);
    assert!(!l.empty);
    // coarser request stops at the requested depth
    let l = tree.locate([0.1, 0.1, 0.1], 1).unwrap();
    assert_eq!(l.node.depth, 1);
    assert!(!l.empty);
    assert!(tree.locate([1.5, 0.0, 0.0], 3).is_none());
    assert!(tree.locate([f64::NAN, 0.0, 0.0], 3).is_none());
}

#[test]
fn locate_on_faces_uses_clamp_then_floor() {
    let tree = build(vec![pt(0.25, 0.25, 0.25), pt(0.75, 0.25, 0.25)], 1);
    let at_half = tree.locate([0.5, 0.25, 0.25], 1).unwrap();
    assert_eq!(tree.key(at_half.node).octant(), 0b100);
    let at_one = tree.locate([1.0, 0.25, 0.25], 1).unwrap();
    assert_eq!(tree.key(at_one.node).octant(), 0b100);
    let at_zero = tree.locate([0.0, 0.25, 0.25], 1).unwrap();
    assert_eq!(tree.key(at_zero.node).octant(), 0);
}

fn tree_with_children(children: &[(u8, NodeFeatures)]) -> LightingOctree {
    let mut levels = vec![OctreeLevel::default(); 2];
    levels[0].push(ShuffleKey::ROOT, true, NodeFeatures::ZERO);
    for o in 0..8u8 {
        let f = children
            .iter()
            .find(|(c, _)| *c == o)
            .map(|(_, f)| *f)
            .unwrap_or(NodeFeatures::ZERO);
        levels[1].push(ShuffleKey(o as u64), false, f);
    }
    let mut tree = LightingOctree::from_levels(1, levels, WorldBBox::UNIT).unwrap();
    aggregate_mips(&mut tree);
    tree
}

#[test]
fn aggregate_single_child() {
    let tree = tree_with_children(&[(3, NodeFeatures::new([1.0, 0.0, 0.0], 8.0))]);
    let root = tree.level(0).features[0];
    assert_eq!(root.sigma, 1.0);
    assert_eq!(root.color, [1.0, 0.0, 0.0]);
}

#[test]
fn aggregate_identical_children_is_constant() {
    let f = NodeFeatures::new([0.3, 0.6, 0.9], 2.5);
    let all: Vec<_> = (0..8).map(|o| (o, f)).collect();
    let tree = tree_with_children(&all);
    let root = tree.level(0).features[0];
    assert_eq!(root.sigma, 2.5);
    for a in 0..3 {
        assert!((root.color[a] - f.color[a]).abs() < 1e-15);
    }
}

#[test]
fn aggregate_two_children() {
    let tree = tree_with_children(&[
        (0, NodeFeatures::new([1.0, 0.0, 0.0], 2.0)),
        (5, NodeFeatures::new([0.0, 1.0, 0.0], 2.0)),
    ]);
    let root = tree.level(0).features[0];
    assert_eq!(root.sigma, 0.5);
    assert_eq!(root.color, [0.5, 0.5, 0.0]);
}

#[test]
fn aggregate_all_zero_density_uses_plain_mean() {
    let tree = tree_with_children(&[(1, NodeFeatures::new([0.8, 0.0, 0.0], 0.0))]);
    let root = tree.level(0).features[0];
    assert_eq!(root.sigma, 0.0);
    assert_eq!(root.color, [0.1, 0.0, 0.0]);
}

#[test]
fn subdivide_one_leaf_adds_eight() {
    let mut tree = build(vec![pt(0.1, 0.1, 0.1)], 3);
    let before = tree.node_count();
    let empty_child = tree.locate([0.9, 0.9, 0.9], 1).unwrap().node;
    subdivide(&mut tree, &[empty_child]).unwrap();
    assert_eq!(tree.node_count(), before + 8);
    revalidate(&tree);
}

#[test]
fn subdivide_nothing_is_identity() {
    let mut tree = build(vec![pt(0.1, 0.1, 0.1)], 3);
    let copy = tree.clone();
    subdivide(&mut tree, &[]).unwrap();
    assert_eq!(tree, copy);
}

#[test]
fn subdivide_every_unsplit_node_at_a_depth() {
    let mut tree = build(vec![pt(0.1, 0.1, 0.1), pt(0.6, 0.2, 0.9)], 4);
    let d = 2u8;
    let unsplit: Vec<_> = tree.handles(d).filter(|h| !tree.is_split(*h)).collect();
    subdivide(&mut tree, &unsplit).unwrap();
    assert_eq!(tree.level(d + 1).len(), 8 * tree.level(d).len());
    revalidate(&tree);
}

#[test]
fn subdivided_children_inherit_features() {
    let mut levels = vec![OctreeLevel::default(); 3];
    levels[0].push(ShuffleKey::ROOT, true, NodeFeatures::ZERO);
    for o in 0..8u8 {
        levels[1].push(ShuffleKey(o as u64), false, NodeFeatures::new([0.2, 0.4, 0.6], 3.0));
    }
    let mut tree = LightingOctree::from_levels(2, levels, WorldBBox::UNIT).unwrap();
    let h = NodeHandle { depth: 1, index: 5 };
    subdivide(&mut tree, &[h]).unwrap();
    assert!(tree.is_split(h));
    for c in tree.children(h) {
        assert_eq!(tree.level(2).features[c], NodeFeatures::new([0.2, 0.4, 0.6], 3.0));
    }
}

#[test]
fn subdivide_rejects_split_and_max_depth_nodes() {
    let mut tree = build(vec![pt(0.1, 0.1, 0.1)], 2);
    let root = NodeHandle { depth: 0, index: 0 };
    assert!(matches!(
        subdivide(&mut tree, &[root]),
        Err(Error::NotSubdividable { .. })
    ));
    let leaf = NodeHandle { depth: 2, index: 0 };
    assert!(subdivide(&mut tree, &[leaf]).is_err());
}

#[test]
fn prune_zero_threshold_is_identity() {
    let mut tree = build(vec![pt(0.1, 0.1, 0.1), pt(0.7, 0.3, 0.2)], 4);
    let copy = tree.clone();
    prune(&mut tree, 0.0);
    assert_eq!(tree, copy);
}

#[test]
fn prune_all_zero_tree_leaves_root() {
    let mut tree = build(vec![pt(0.1, 0.1, 0.1), pt(0.7, 0.3, 0.2)], 4);
    for d in 0..=4 {
        for f in tree.features_mut(d) {
            *f = NodeFeatures::ZERO;
        }
    }
    prune(&mut tree, 1e-6);
    assert_eq!(tree.node_count(), 1);
    assert!(!tree.is_split(NodeHandle { depth: 0, index: 0 }));
}

#[test]
fn prune_keeps_hot_chain() {
    let hot = pt(0.1, 0.1, 0.1);
    let cold = pt(0.8, 0.8, 0.8);
    let mut tree = build(vec![hot, cold], 3);
    let cold_leaf = tree.locate(cold.position, 3).unwrap().node;
    tree.features_mut(3)[cold_leaf.index as usize].sigma = 0.0;
    prune(&mut tree, 1.0);
    revalidate(&tree);
    // hot chain survives to the leaf
    let l = tree.locate(hot.position, 3).unwrap();
    assert_eq!(l.node.depth, 3);
    assert!(!l.empty);
    // cold branch collapsed to an empty depth-1 placeholder
    let l = tree.locate(cold.position, 3).unwrap();
    assert_eq!(l.node.depth, 1);
    assert!(l.empty);
    assert_eq!(tree.stats().nodes_per_level, vec![1, 8, 8, 8]);
}

#[test]
fn manifold_leaf_growth_is_quadratic() {
    // sphere surface sampled densely enough to touch every crossed leaf
    let n = 800usize;
    let cloud: PointCloud = (0..n * n)
        .map(|i| {
            let u = (i % n) as f64 / n as f64;
            let v = (i / n) as f64 / n as f64 + 0.5 / n as f64;
            let (phi, th) = (2.0 * std::f64::consts::PI * u, std::f64::consts::PI * v);
            pt(
                0.5 + 0.4 * th.sin() * phi.cos(),
                0.5 + 0.4 * th.sin() * phi.sin(),
                0.5 + 0.4 * th.cos(),
            )
        })
        .collect();
    let counts: Vec<usize> = (5..=7)
        .map(|d| {
            build_octree(&cloud, WorldBBox::UNIT, &BuildConfig::new(d))
                .unwrap()
                .stats()
                .leaf_count
        })
        .collect();
    for w in counts.windows(2) {
        let ratio = w[1] as f64 / w[0] as f64;
        assert!(ratio <= 4.5, "{counts:?}");
    }
}

fn arb_cloud() -> impl Strategy<Value = Vec<CloudPoint>> {
    prop::collection::vec(
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..4.0f64).prop_map(|(x, y, z, c)| CloudPoint {
            position: [x, y, z],
            color: [c, 0.5 * c, 1.0],
        }),
        1..200,
    )
}

proptest! {
    #[test]
    fn build_satisfies_invariants(points in arb_cloud(), depth in 1u8..6) {
        let tree = build(points.clone(), depth);
        revalidate(&tree);
        for p in &points {
            let l = tree.locate(p.position, depth).unwrap();
            prop_assert_eq!(l.node.depth, depth);
            prop_assert!(!l.empty);
        }
    }

    #[test]
    fn aggregation_preserves_optical_mass(points in arb_cloud(), depth in 1u8..5, seed in 0u64..1000) {
        let mut tree = build(points, depth);
        // scramble leaf densities, then re-aggregate
        let mut s = seed;
        for f in tree.features_mut(depth) {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            if f.sigma > 0.0 {
                f.sigma = (s >> 33) as f64 / (1u64 << 31) as f64 * 10.0;
            }
        }
        aggregate_mips(&mut tree);
        for d in 0..depth {
            for h in tree.handles(d) {
                if !tree.is_split(h) { continue; }
                let vol = cell_side(d).powi(3);
                let parent_mass = tree.features(h).sigma * vol;
                let child_mass: f64 = tree.children(h)
                    .map(|c| tree.level(d + 1).features[c].sigma * vol / 8.0)
                    .sum();
                prop_assert!((parent_mass - child_mass).abs() <= 1e-12 * parent_mass.max(1.0));
            }
        }
    }

    #[test]
    fn mutations_keep_invariants(points in arb_cloud(), pick in 0usize..50, thr in 0.0..40.0f64) {
        let mut tree = build(points, 4);
        let candidates: Vec<_> = (0..4u8)
            .flat_map(|d| tree.handles(d).collect::<Vec<_>>())
            .filter(|h| !tree.is_split(*h))
            .collect();
        let chosen: Vec<_> = candidates.iter().copied().step_by(pick.max(1)).collect();
        subdivide(&mut tree, &chosen).unwrap();
        revalidate(&tree);
        prune(&mut tree, thr);
        revalidate(&tree);
    }

    #[test]
    fn key_bijection_random(i in 0u32..128, j in 0u32..128, k in 0u32..128) {
        let key = ShuffleKey::encode(i, j, k, 7);
        prop_assert!(key.0 < 8u64.pow(7));
        prop_assert_eq!(key.decode(7), (i, j, k));
    }
}
