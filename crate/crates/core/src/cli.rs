//! Command-line front end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::camera::{backproject, panorama_cones, perspective_cones, CameraPose};
use crate::error::{Error, Result};
use crate::fitter::{evaluate, render_views, Checkpoint, EvalConfig, FitConfig, FitState, View};
use crate::image::ImageHdr;
use crate::insertion::{insert_render, transform_from_json, Material, MaterialKind, ShadeConfig, TriangleMesh};
use crate::io;
use crate::metrics::{self, ScConfig};
use crate::octree::{build_octree, normalize_cloud, BuildConfig, LightingOctree, OctreeStats, PointCloud};
use crate::renderer::{render_image, MarchConfig, WeightMode};
use crate::scenes::SceneKind;

/// Rough floating-point operations per march sample, for bench reports.
pub const FLOPS_PER_SAMPLE: u64 = 60;

/// Leaf-count growth per level that counts as sparse.
pub const SPARSE_GROWTH_LIMIT: f64 = 4.5;

/// Peak octree memory allowed by the bench check, in bytes.
pub const MEMORY_LIMIT: usize = 50 * 1024 * 1024;

#[derive(Parser, Debug)]
#[command(name = "svolight", version, about = "Sparse voxel-octree lighting toolkit")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    Pano,
    Persp,
    Depth,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricKind {
    Psnr,
    Logl2,
    Sc,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Back-project an RGB-D frame and build a lighting octree.
    Build {
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long, default_value_t = 7)]
        max_depth: u32,
        #[arg(long)]
        out: PathBuf,
        /// Also write the world-space cloud as PLY.
        #[arg(long)]
        cloud_out: Option<PathBuf>,
    },
    /// Render a panorama, perspective image or depth panorama.
    Render {
        #[arg(long)]
        octree: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long, value_enum, default_value_t = RenderMode::Pano)]
        mode: RenderMode,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        cone_angle: Option<f64>,
        #[arg(long)]
        c0: Option<f64>,
        #[arg(long)]
        growth: Option<f64>,
        #[arg(long)]
        weight_mode: Option<WeightMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit octree radiance and density to a directory of views.
    Fit {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Zero all colors of the initial octree before fitting.
        #[arg(long)]
        clear_radiance: bool,
    },
    /// Score an octree against held-out views.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        views: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricKind::Psnr)]
        metric: MetricKind,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Composite a shaded mesh into a photograph.
    Insert {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        octree: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        transform: Option<PathBuf>,
        #[arg(long, default_value = "diffuse")]
        material: MaterialKind,
        #[arg(long, default_value = "0.8,0.8,0.8")]
        albedo: String,
        #[arg(long, default_value_t = 0.3)]
        roughness: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Storage and render-cost report for a synthetic scene.
    Bench {
        #[arg(long, default_value = "plane")]
        scene: SceneKind,
        #[arg(long, value_delimiter = ',', default_values_t = vec![5u8, 6, 7])]
        depths: Vec<u8>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
    },
    /// Print the default configuration as JSON.
    Defaults,
}

#[derive(Serialize)]
struct Defaults {
    fit: FitConfig,
    march: MarchConfig,
    shade: ShadeConfig,
    sc: ScConfig,
}

/// A scalar metric with the configuration that produced it.
#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchLevel {
    pub depth: u8,
    pub stats: OctreeStats,
    /// Cells in a dense grid of the same resolution.
    pub dense_cells: u64,
    /// Bytes of a dense RGB + density f32 grid.
    pub dense_bytes: u64,
    /// Leaf count relative to the previous depth in the report.
    pub leaf_growth: Option<f64>,
    pub render_width: usize,
    pub render_height: usize,
    pub render_samples: u64,
    pub render_flops: u64,
    pub render_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub scene: String,
    pub levels: Vec<BenchLevel>,
    pub sparse_growth_limit: f64,
    pub dense_growth: f64,
    pub sparse_ok: bool,
    pub peak_octree_bytes: usize,
    pub memory_limit_bytes: usize,
    pub memory_ok: bool,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(Error::InvalidConfig(e.to_string())),
        },
        None => run(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Build {
            rgb,
            depth,
            intrinsics,
            max_depth,
            out,
            cloud_out,
        } => build(&rgb, &depth, &intrinsics, max_depth, &out, cloud_out.as_deref()),
        Command::Render {
            octree,
            pose,
            mode,
            width,
            height,
            cone_angle,
            c0,
            growth,
            weight_mode,
            out,
        } => {
            let tree = io::read_octree(octree)?;
            let camera = io::read_camera(pose)?;
            let mut march = MarchConfig {
                c0,
                ..MarchConfig::default()
            };
            if let Some(g) = growth {
                march.growth = g;
            }
            if let Some(w) = weight_mode {
                march.weight_mode = w;
            }
            let img = render(&tree, &camera, mode, width, height, cone_angle, &march)?;
            io::write_pfm(out, &img)
        }
        Command::Fit {
            init,
            views,
            config,
            out,
            seed,
            iterations,
            clear_radiance,
        } => {
            let mut cfg: FitConfig = match config {
                Some(p) => serde_json::from_slice(&std::fs::read(p)?)?,
                None => FitConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            let mut tree = io::read_octree(init)?;
            if clear_radiance {
                tree = tree.without_radiance();
            }
            let views = io::read_views(views)?;
            let mut state = FitState::new(tree, cfg.seed);
            state.run(&views, &cfg)?;
            io::write_octree(&out, &state.octree)?;
            io::write_json(sidecar_path(&out), &Checkpoint::from_state(&state, &cfg))?;
            emit(format!(
                "fit {} iterations, loss {:.6e} -> {:.6e}",
                state.iteration,
                state.history.first().copied().unwrap_or(0.0),
                state.history.last().copied().unwrap_or(0.0)
            ));
            Ok(())
        }
        Command::Eval {
            pred,
            views,
            metric,
            alpha,
            report,
        } => {
            if !(alpha >= 0.0) {
                return Err(Error::InvalidConfig(format!("alpha = {alpha}")));
            }
            let tree = io::read_octree(&pred)?;
            let list = io::read_views(&views)?;
            let cfg = EvalConfig {
                sc: ScConfig { alpha },
                ..EvalConfig::default()
            };
            let r = eval_metric(&tree, &list, metric, &cfg)?;
            let mut inputs = vec![digest(&pred)?];
            for id in io::view_ids(&views)? {
                inputs.push(digest(&views.join(format!("pano_{id}.pfm")))?);
            }
            let report_value = MetricReport {
                name: format!("{metric:?}").to_lowercase(),
                value: r,
                config: serde_json::to_value(cfg)?,
                inputs,
            };
            emit(serde_json::to_string(&report_value)?);
            if let Some(p) = report {
                io::write_json(p, &report_value)?;
            }
            Ok(())
        }
        Command::Insert {
            image,
            depth,
            intrinsics,
            octree,
            mesh,
            transform,
            material,
            albedo,
            roughness,
            out,
        } => {
            let albedo = parse_rgb(&albedo)?;
            let material = match material {
                MaterialKind::Diffuse => Material::diffuse(albedo),
                MaterialKind::Metallic => Material::metallic(albedo, roughness),
            };
            let mesh = TriangleMesh::parse_obj(&std::fs::read_to_string(mesh)?, material)?;
            let transform = match transform {
                Some(p) => transform_from_json(&std::fs::read_to_string(p)?)?,
                None => nalgebra::Matrix4::identity(),
            };
            let camera = io::read_camera(intrinsics)?;
            let k = camera.intrinsics()?;
            let pose = camera.pose()?;
            let img = io::read_image(image)?;
            let depth = io::read_pfm(depth)?;
            let tree = io::read_octree(octree)?;
            let out_img = insert_render(&img, &depth, &k, &pose, &mesh, &transform, &tree, &ShadeConfig::default())?;
            if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                io::write_png(&out, &out_img.hdr, 1.0, crate::image::DISPLAY_GAMMA)
            } else {
                io::write_pfm(&out, &out_img.hdr)?;
                io::write_png(out.with_extension("png"), &out_img.hdr, 1.0, crate::image::DISPLAY_GAMMA)
            }
        }
        Command::Bench {
            scene,
            depths,
            report,
            width,
            height,
        } => {
            let r = bench(scene, &depths, width, height)?;
            let text = serde_json::to_string_pretty(&r)?;
            emit(text);
            if let Some(p) = report {
                io::write_json(p, &r)?;
            }
            if !r.sparse_ok || !r.memory_ok {
                return Err(Error::InvalidOctree(format!(
                    "bench checks failed (sparse: {}, memory: {})",
                    r.sparse_ok, r.memory_ok
                )));
            }
            Ok(())
        }
        Command::Defaults => {
            let d = Defaults {
                fit: FitConfig::default(),
                march: MarchConfig::default(),
                shade: ShadeConfig::default(),
                sc: ScConfig::default(),
            };
            emit(serde_json::to_string_pretty(&d)?);
            Ok(())
        }
    }
}

/// Writes a line to stdout, ignoring a closed pipe.
fn emit(line: String) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn build(rgb: &Path, depth: &Path, intrinsics: &Path, max_depth: u32, out: &Path, cloud_out: Option<&Path>) -> Result<()> {
    if !(1..=crate::octree::MAX_SUPPORTED_DEPTH as u32).contains(&max_depth) {
        return Err(Error::InvalidDepth(max_depth));
    }
    let camera = io::read_camera(intrinsics)?;
    let k = camera.intrinsics()?;
    let pose = camera.pose()?;
    let rgb = io::read_image(rgb)?;
    let depth = io::read_pfm(depth)?;
    let local = backproject(&depth, &rgb, &k)?;
    let world = PointCloud::new(
        local
            .points
            .iter()
            .map(|p| crate::octree::CloudPoint {
                position: pose.transform_point(p.position.into()).into(),
                color: p.color,
            })
            .collect(),
    );
    if let Some(p) = cloud_out {
        io::write_ply(p, &world)?;
    }
    let (unit, bbox) = normalize_cloud(&world)?;
    let tree = build_octree(&unit, bbox, &BuildConfig::new(max_depth as u8))?;
    io::write_octree(out, &tree)?;
    let s = tree.stats();
    emit(format!(
        "built depth {} octree: {} nodes, {} leaves, {} bytes",
        s.max_depth, s.total_nodes, s.leaf_count, s.serialized_bytes
    ));
    Ok(())
}

/// Renders with a world-space camera; depth output is in world units.
pub fn render(
    tree: &LightingOctree,
    camera: &crate::camera::CameraJson,
    mode: RenderMode,
    width: Option<usize>,
    height: Option<usize>,
    cone_angle: Option<f64>,
    march: &MarchConfig,
) -> Result<ImageHdr> {
    let bbox = tree.bbox();
    let pose = camera.pose()?.to_unit(&bbox);
    let (cones, w, h) = match mode {
        RenderMode::Persp => {
            let mut k = camera.intrinsics()?;
            if let (Some(w), Some(h)) = (width, height) {
                // keep the field of view when resizing
                let (sx, sy) = (w as f64 / k.width as f64, h as f64 / k.height as f64);
                k = crate::camera::Intrinsics {
                    fx: k.fx * sx,
                    fy: k.fy * sy,
                    cx: k.cx * sx,
                    cy: k.cy * sy,
                    width: w,
                    height: h,
                };
            }
            (perspective_cones(&k, &pose, cone_angle)?, k.width, k.height)
        }
        _ => {
            let (w, h) = (width.unwrap_or(256), height.unwrap_or(128));
            (panorama_cones(w, h, &pose, cone_angle)?, w, h)
        }
    };
    let out = render_image(tree, &cones, w, h, march)?;
    Ok(match mode {
        RenderMode::Depth => out.depth.map(|d| (d as f64 * bbox.side) as f32),
        _ => out.radiance,
    })
}

fn eval_metric(tree: &LightingOctree, views: &[View], metric: MetricKind, cfg: &EvalConfig) -> Result<f64> {
    let r = evaluate(tree, views, cfg)?;
    Ok(match metric {
        MetricKind::Psnr => r.psnr,
        MetricKind::Logl2 => r.log_l2,
        MetricKind::Sc => {
            let pred = render_views(tree, views, cfg)?;
            let gt: Vec<ImageHdr> = views.iter().map(View::radiance_image).collect();
            let depth: Vec<ImageHdr> = views.iter().map(View::depth_image).collect();
            metrics::sc_metric(&pred, &gt, &depth, &cfg.sc)?
        }
    })
}

fn digest(path: &Path) -> Result<InputDigest> {
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: io::file_digest(path)?,
    })
}

/// `out.loc` gets its checkpoint sidecar at `out.loc.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn parse_rgb(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("albedo {s:?}")))?;
    match v[..] {
        [r, g, b] => Ok([r, g, b]),
        _ => Err(Error::InvalidConfig(format!("albedo {s:?} needs three values"))),
    }
}

/// Builds the scene at each depth, records storage, and times one
/// panorama render from a fixed interior viewpoint.
pub fn bench(scene: SceneKind, depths: &[u8], width: usize, height: usize) -> Result<BenchReport> {
    if depths.is_empty() {
        return Err(Error::InvalidConfig("no depths to bench".into()));
    }
    let pose = CameraPose::at([0.5, 0.5, 0.25]);
    let cones = panorama_cones(width, height, &pose, None)?;
    let march = MarchConfig::default();
    let mut levels: Vec<BenchLevel> = Vec::new();
    for &d in depths {
        if !(1..=crate::octree::MAX_SUPPORTED_DEPTH).contains(&d) {
            return Err(Error::InvalidDepth(d as u32));
        }
        let tree = scene.octree(d)?;
        let stats = tree.stats();
        let start = Instant::now();
        let out = render_image(&tree, &cones, width, height, &march)?;
        let seconds = start.elapsed().as_secs_f64();
        let dense_cells = 1u64 << (3 * d as u64);
        let leaf_growth = levels.last().map(|p| stats.leaf_count as f64 / p.stats.leaf_count.max(1) as f64);
        levels.push(BenchLevel {
            depth: d,
            dense_cells,
            dense_bytes: dense_cells * 16,
            leaf_growth,
            render_width: width,
            render_height: height,
            render_samples: out.samples,
            render_flops: out.samples * FLOPS_PER_SAMPLE,
            render_seconds: seconds,
            stats,
        });
    }
    let sparse_ok = levels
        .iter()
        .filter_map(|l| l.leaf_growth)
        .all(|g| g <= SPARSE_GROWTH_LIMIT);
    let peak = levels.iter().map(|l| l.stats.memory_bytes).max().unwrap_or(0);
    Ok(BenchReport {
        scene: format!("{scene:?}").to_lowercase(),
        levels,
        sparse_growth_limit: SPARSE_GROWTH_LIMIT,
        dense_growth: 8.0,
        sparse_ok,
        peak_octree_bytes: peak,
        memory_limit_bytes: MEMORY_LIMIT,
        memory_ok: peak < MEMORY_LIMIT,
    })
}
