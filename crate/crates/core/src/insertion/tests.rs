use super::*;
use crate::camera::{backproject, CameraPose, Intrinsics};
use crate::image::ImageHdr;
use crate::octree::{build_octree, BuildConfig, CloudPoint, LightingOctree, PointCloud, WorldBBox};
use crate::renderer::OracleField;
use crate::scenes::uniform_shell_octree;
use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quad(z: f64) -> TriangleMesh {
    let v = vec![
        Vec3::new(-1.0, -1.0, z),
        Vec3::new(1.0, -1.0, z),
        Vec3::new(1.0, 1.0, z),
        Vec3::new(-1.0, 1.0, z),
    ];
    TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 3]], Material::default()).unwrap()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

#[test]
fn mesh_validation() {
    let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
    assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]], Material::default()).is_err());
    assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 1]], Material::default()).is_err());
    assert!(TriangleMesh::new(v.clone(), vec![], Material::default()).is_err());
    assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 2]], Material::metallic([0.5; 3], 0.0)).is_err());
    assert!(TriangleMesh::new(v, vec![[0, 1, 2]], Material::diffuse([1.5, 0.0, 0.0])).is_err());
    assert_eq!("metallic".parse::<MaterialKind>().unwrap(), MaterialKind::Metallic);
    assert!("glass".parse::<MaterialKind>().is_err());
}

#[test]
fn obj_parsing() {
    let text = "# comment\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1 4/4/1\nf -4 -3 -2\n";
    let m = TriangleMesh::parse_obj(text, Material::default()).unwrap();
    assert_eq!(m.vertices.len(), 4);
    assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3], [0, 1, 2]]);
    let again = TriangleMesh::parse_obj(&m.to_obj(), Material::default()).unwrap();
    assert_eq!(again, m);
    assert!(TriangleMesh::parse_obj("v 0 0 0\nf 1 2 3\n", Material::default()).is_err());
    assert!(TriangleMesh::parse_obj("v 0 0\n", Material::default()).is_err());
}

#[test]
fn transform_json_and_application() {
    let m = transform_from_json("[2,0,0,1, 0,2,0,0, 0,0,2,0, 0,0,0,1]").unwrap();
    let t = quad(1.0).transformed(&m).unwrap();
    assert_eq!(t.vertices[0], Vec3::new(-1.0, -2.0, 2.0));
    assert!(transform_from_json("[1,2,3]").is_err());
    assert!(transform_from_json("{").is_err());
}

#[test]
fn single_triangle_is_gridded() {
    let m = TriangleMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]], Material::default()).unwrap();
    let g = TriGrid::build(&m);
    let mut found = 0;
    for c in 0..512 {
        let coarse = [c % 8, (c / 8) % 8, c / 64];
        for f in 0..64 {
            if g.cell_triangles(coarse, [f % 4, (f / 4) % 4, f / 16]).is_some_and(|l| l.contains(&0)) {
                found += 1;
            }
        }
    }
    assert!(found >= 1);
}

#[test]
fn grid_covers_every_overlapping_cell() {
    let sphere = TriangleMesh::uv_sphere(Vec3::new(0.2, -0.1, 0.4), 0.7, 12, 7, Material::default()).unwrap();
    let g = TriGrid::build(&sphere);
    for c in 0..512 {
        let coarse = [c % 8, (c / 8) % 8, c / 64];
        for f in 0..64 {
            let fine = [f % 4, (f / 4) % 4, f / 16];
            let (lo, hi) = g.fine_cell_bounds(coarse, fine);
            for (id, t) in sphere.triangles.iter().enumerate() {
                let [a, b, c] = t.map(|k| sphere.vertices[k as usize]);
                let (tlo, thi) = (a.inf(&b).inf(&c), a.sup(&b).sup(&c));
                let overlaps = (0..3).all(|i| tlo[i] <= hi[i] && thi[i] >= lo[i]);
                if overlaps {
                    let list = g.cell_triangles(coarse, fine).expect("occupied coarse cell");
                    assert!(list.contains(&(id as u32)));
                }
            }
        }
    }
}

#[test]
fn traversal_is_ordered() {
    let sphere = TriangleMesh::uv_sphere(Vec3::zeros(), 1.0, 10, 6, Material::default()).unwrap();
    let g = TriGrid::build(&sphere);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let ray = Ray::new(random_unit(&mut rng) * 3.0, random_unit(&mut rng));
        let cells = g.coarse_cells(&ray);
        for w in cells.windows(2) {
            assert!(w[1].t_enter > w[0].t_enter);
            assert_eq!(w[1].t_enter, w[0].t_exit);
            assert_ne!(w[0].cell, w[1].cell);
        }
    }
}

#[test]
fn grid_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for i in 0..60u32 {
        let c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        for _ in 0..3 {
            vertices.push(c + random_unit(&mut rng) * rng.random_range(0.05..0.4));
        }
        triangles.push([3 * i, 3 * i + 1, 3 * i + 2]);
    }
    let soup = TriangleMesh::new(vertices, triangles, Material::default()).unwrap();
    let sphere = TriangleMesh::uv_sphere(Vec3::new(0.1, 0.0, -0.2), 0.8, 16, 9, Material::default()).unwrap();
    for mesh in [soup, sphere] {
        let g = TriGrid::build(&mesh);
        let mut hits = 0;
        for _ in 0..1000 {
            let origin = random_unit(&mut rng) * rng.random_range(0.0..3.0);
            let target = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let ray = Ray::new(origin, target - origin);
            let a = g.intersect(&ray);
            let b = intersect_brute_force(&mesh, &ray);
            assert_eq!(a, b);
            hits += a.is_some() as usize;
        }
        assert!(hits > 100);
    }
}

#[test]
fn quad_hits() {
    let g = TriGrid::build(&quad(2.0));
    let hit = g.intersect(&Ray::new(Vec3::new(0.3, 0.2, 0.0), Vec3::new(0.0, 0.0, 0.5))).unwrap();
    assert!((hit.t - 4.0).abs() < 1e-12);
    assert!((hit.normal - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    let back = g.intersect(&Ray::new(Vec3::new(0.3, 0.2, 5.0), Vec3::new(0.0, 0.0, -1.0))).unwrap();
    assert!((back.t - 3.0).abs() < 1e-12);
    assert!((back.normal - Vec3::z()).norm() < 1e-12);
    assert!(g.intersect(&Ray::new(Vec3::new(3.0, 0.0, 0.0), Vec3::z())).is_none());
    assert!(g.intersect(&Ray::new(Vec3::zeros(), -Vec3::z())).is_none());
}

fn intrinsics(w: usize, h: usize) -> Intrinsics {
    Intrinsics { fx: w as f64, fy: w as f64, cx: w as f64 / 2.0, cy: h as f64 / 2.0, width: w, height: h }
}

#[test]
fn occlusion_buffers() {
    let k = intrinsics(8, 6);
    let pose = CameraPose::identity();
    let empty = occlusion_depth_from_cloud(&PointCloud::default(), &k, &pose).unwrap();
    assert!(empty.data.iter().all(|z| z.is_infinite()));
    let p = k.pixel_ray(2, 3) * 1.75;
    let one = occlusion_depth_from_cloud(
        &PointCloud::new(vec![CloudPoint { position: p.into(), color: [1.0; 3] }]),
        &k,
        &pose,
    )
    .unwrap();
    for (i, z) in one.data.iter().enumerate() {
        if i == 3 * 8 + 2 {
            assert_eq!(*z, 1.75);
        } else {
            assert!(z.is_infinite());
        }
    }
    // a tilted plane seen head-on
    let mut depth = ImageHdr::new(8, 6, 1);
    for v in 0..6 {
        for u in 0..8 {
            depth.pixel_mut(u, v)[0] = 2.0 + 0.1 * u as f32 + 0.05 * v as f32;
        }
    }
    let cloud = backproject(&depth, &ImageHdr::new(8, 6, 3), &k).unwrap();
    let back = occlusion_depth_from_cloud(&cloud, &k, &pose).unwrap();
    for (a, b) in back.data.iter().zip(&depth.data) {
        assert!((a - b).abs() < 1e-4);
    }
    let mut holes = depth.clone();
    holes.data[0] = 0.0;
    holes.data[1] = f32::NAN;
    let direct = occlusion_depth(&holes);
    assert!(direct.data[0].is_infinite() && direct.data[1].is_infinite());
    assert_eq!(direct.data[2], depth.data[2]);
}

fn voxel_tree(depth: u8, at: [f64; 3], color: [f64; 3]) -> LightingOctree {
    let cloud = PointCloud::new(vec![CloudPoint { position: at, color }]);
    build_octree(&cloud, WorldBBox::UNIT, &BuildConfig::new(depth)).unwrap()
}

#[test]
fn shading_basics() {
    let cfg = ShadeConfig::default();
    let dark = LightingOctree::empty(4, WorldBBox::UNIT).unwrap();
    let p = Vec3::new(0.5, 0.3, 0.5);
    let n = Vec3::y();
    for m in [Material::diffuse([1.0; 3]), Material::metallic([1.0; 3], 0.3)] {
        assert_eq!(shade_point(&p, &n, &-n, &m, &dark, &cfg).unwrap(), [0.0; 3]);
    }
    assert!(matches!(
        shade_point(&Vec3::new(1.5, 0.5, 0.5), &n, &-n, &Material::default(), &dark, &cfg),
        Err(Error::OutsideBBox(_))
    ));
    let weights: f64 = diffuse_cones(&n).iter().map(|c| c.1).sum();
    assert!((weights - 1.0).abs() < 1e-15);
    for (axis, _) in diffuse_cones(&n).iter().skip(1) {
        assert!((axis.dot(&n) - (PI_6).cos()).abs() < 1e-12);
    }
}

const PI_6: f64 = std::f64::consts::PI / 6.0;

#[test]
fn mirror_reflects_an_emissive_voxel() {
    let color = [0.9, 0.4, 0.2];
    let cfg = ShadeConfig::default();
    let mirror = Material::metallic([1.0; 3], 1e-6);
    // view comes in at 45 degrees and bounces straight at the voxel
    let p = Vec3::new(0.3, 0.3, 0.47);
    let n = Vec3::y();
    let view = Vec3::new(1.0, -1.0, 0.0);
    let reflected = Vec3::new(1.0, 1.0, 0.0).normalize();
    let apex = p + n * (1.5 / 16.0);
    let voxel = apex + reflected * 0.4;
    let tree = voxel_tree(4, voxel.into(), color);
    let got = shade_point(&p, &n, &view, &mirror, &tree, &cfg).unwrap();
    // the brute-force trace along the mirror direction sees the voxel's own
    // finite opacity, so compare against it rather than the raw color
    let direct = OracleField::new(&tree).trace(&crate::camera::Cone::new(apex, reflected, 0.0).unwrap());
    for c in 0..3 {
        assert!((got[c] - direct[c]).abs() < 0.05 * direct[c], "{got:?} vs {direct:?}");
        assert!(got[c] > 0.8 * color[c]);
        assert!((got[c] / got[0] - color[c] / color[0]).abs() < 1e-9);
    }
    // looking the other way sees nothing
    let away = shade_point(&p, &Vec3::y(), &Vec3::y(), &mirror, &tree, &cfg).unwrap();
    assert_eq!(away, [0.0; 3]);
}

#[test]
fn uniform_shell_shades_to_its_radiance() {
    let radiance = [1.5, 1.0, 0.5];
    let tree = uniform_shell_octree(5, 0.4, radiance).unwrap();
    let field = OracleField::new(&tree);
    let cfg = ShadeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..4 {
        let n = random_unit(&mut rng);
        let p = Vec3::repeat(0.5) + n * 0.15;
        let got = shade_point(&p, &n, &-n, &Material::diffuse([1.0; 3]), &tree, &cfg).unwrap();
        let mc = diffuse_reference(&field, &tree, &p, &n, [1.0; 3], 500, cfg.apex_offset, &mut rng).unwrap();
        for c in 0..3 {
            assert!((got[c] - radiance[c]).abs() < 0.1 * radiance[c], "{got:?}");
            assert!((got[c] - mc[c]).abs() < 0.1 * mc[c], "{got:?} vs {mc:?}");
        }
        let half = shade_point(&p, &n, &-n, &Material::diffuse([0.5; 3]), &tree, &cfg).unwrap();
        assert_eq!(half, got.map(|v| 0.5 * v));
    }
}

fn wall_scene() -> (ImageHdr, ImageHdr, Intrinsics, LightingOctree) {
    let k = intrinsics(24, 16);
    let mut image = ImageHdr::new(24, 16, 3);
    for (i, v) in image.data.iter_mut().enumerate() {
        *v = (i % 7) as f32 * 0.1;
    }
    let mut depth = ImageHdr::new(24, 16, 1);
    depth.data.fill(0.5);
    let tree = voxel_tree(3, [0.5, 0.5, 0.9], [1.0; 3]);
    (image, depth, k, tree)
}

#[test]
fn occluded_or_offscreen_objects_leave_the_image_untouched() {
    let (image, depth, k, tree) = wall_scene();
    let pose = CameraPose::identity();
    let behind = TriangleMesh::uv_sphere(Vec3::new(0.0, 0.0, 0.8), 0.1, 12, 6, Material::default()).unwrap();
    let out = insert_render(&image, &depth, &k, &pose, &behind, &Matrix4::identity(), &tree, &ShadeConfig::default()).unwrap();
    assert_eq!(out.hdr, image);
    assert!(out.mask.iter().all(|m| !m));
    let aside = Matrix4::new_translation(&Vec3::new(5.0, 0.0, -0.5));
    let out = insert_render(&image, &depth, &k, &pose, &behind, &aside, &tree, &ShadeConfig::default()).unwrap();
    assert_eq!(out.hdr, image);
    let small = ImageHdr::new(4, 4, 3);
    assert!(matches!(
        insert_render(&small, &depth, &k, &pose, &behind, &Matrix4::identity(), &tree, &ShadeConfig::default()),
        Err(Error::SizeMismatch(_))
    ));
}

#[test]
fn visible_object_is_shaded_and_background_is_exact() {
    let (image, mut depth, k, tree) = wall_scene();
    depth.data.fill(f32::INFINITY);
    let pose = CameraPose::identity();
    let sphere = TriangleMesh::uv_sphere(Vec3::new(0.5, 0.5, 0.5), 0.12, 16, 8, Material::diffuse([0.8; 3])).unwrap();
    let shift = Matrix4::new_translation(&Vec3::new(-0.5, -0.5, 0.0));
    let out = insert_render(&image, &depth, &k, &pose, &sphere, &shift, &tree, &ShadeConfig::default()).unwrap();
    let covered = out.mask.iter().filter(|m| **m).count();
    assert!(covered > 10);
    for i in 0..24 * 16 {
        let (a, b) = (&out.hdr.data[3 * i..3 * i + 3], &image.data[3 * i..3 * i + 3]);
        if !out.mask[i] {
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
    assert!(out.ldr.data.iter().all(|v| (0.0..1.0).contains(v)));
}

#[test]
fn panel_side_is_brighter_and_matches_the_oracle() {
    // walls two leaves thick so coarse cone samples cannot see through them
    let cloud = crate::scenes::emissive_box_cloud_thick(160, 2.0 / 32.0);
    let tree = build_octree(&cloud, WorldBBox::UNIT, &BuildConfig::new(5)).unwrap();
    let field = OracleField::new(&tree);
    let cfg = ShadeConfig::default();
    let material = Material::diffuse([1.0; 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut shade = |n: Vec3| {
        let p = Vec3::repeat(0.5) + n * 0.12;
        let got = shade_point(&p, &n, &-n, &material, &tree, &cfg).unwrap();
        let mc = diffuse_reference(&field, &tree, &p, &n, [1.0; 3], 4000, cfg.apex_offset, &mut rng).unwrap();
        (got, mc)
    };
    let (up, up_mc) = shade(Vec3::y());
    let (down, down_mc) = shade(-Vec3::y());
    for c in 0..3 {
        assert!((up[c] - up_mc[c]).abs() < 0.1 * up_mc[c], "{up:?} vs {up_mc:?}");
        let (ratio, ratio_mc) = (up[c] / down[c], up_mc[c] / down_mc[c]);
        assert!(ratio > 1.5);
        assert!((ratio - ratio_mc).abs() < 0.1 * ratio_mc, "{ratio} vs {ratio_mc}");
    }
}
