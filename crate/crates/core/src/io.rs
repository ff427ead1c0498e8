//! File formats: PFM and PNG images, binary PLY point clouds, LOC1
//! octrees, camera JSON and view directories.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::camera::{CameraJson, CameraPose, Intrinsics};
use crate::error::{Error, Result};
use crate::fitter::View;
use crate::image::{inverse_tone_map, tone_map, ImageHdr};
use crate::octree::{format, CloudPoint, LightingOctree, PointCloud};

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Encodes a PFM: `PF` (RGB) or `Pf` (gray) header, scale `-1.0` for
/// little-endian data, rows stored bottom to top.
pub fn encode_pfm(img: &ImageHdr) -> Vec<u8> {
    let magic = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    out.reserve(img.data.len() * 4);
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ImageHdr> {
    let mut pos = 0;
    let mut line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| format_err("truncated PFM header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map(str::trim)
            .map_err(|_| format_err("PFM header is not text"))
    };
    let channels = match line()? {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(format_err(format!("PFM magic {other:?}"))),
    };
    let dims: Vec<usize> = line()?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| format_err("bad PFM dimensions")))
        .collect::<Result<_>>()?;
    let [width, height] = dims[..] else {
        return Err(format_err("PFM dimensions need two numbers"));
    };
    let scale: f64 = line()?.parse().map_err(|_| format_err("bad PFM scale"))?;
    if scale > 0.0 {
        return Err(Error::UnsupportedEndianness);
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err("PFM scale must be nonzero"));
    }
    let count = width * height * channels;
    let data = &bytes[pos..];
    if data.len() != count * 4 {
        return Err(format_err(format!(
            "PFM payload has {} bytes, expected {}",
            data.len(),
            count * 4
        )));
    }
    let mut img = ImageHdr::new(width, height, channels);
    let row = width * channels;
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let (y, x) = (height - 1 - k / row, k % row);
        img.data[y * row + x] = f32::from_le_bytes(chunk.try_into().expect("four bytes"));
    }
    Ok(img)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &ImageHdr) -> Result<()> {
    fs::write(path, encode_pfm(img))?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ImageHdr> {
    decode_pfm(&fs::read(path)?)
}

/// Writes an 8-bit PNG after `x e / (1 + x e)` and display gamma.
pub fn write_png(path: impl AsRef<Path>, img: &ImageHdr, exposure: f64, gamma: f64) -> Result<()> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (tone_map(*v as f64, exposure, gamma) * 255.0).round() as u8)
        .collect();
    let color = if img.channels == 3 {
        ::image::ExtendedColorType::Rgb8
    } else {
        ::image::ExtendedColorType::L8
    };
    ::image::save_buffer_with_format(
        path,
        &bytes,
        img.width as u32,
        img.height as u32,
        color,
        ::image::ImageFormat::Png,
    )?;
    Ok(())
}

/// Reads a PNG as display values in `[0, 1]`, RGB or gray.
pub fn read_png(path: impl AsRef<Path>) -> Result<ImageHdr> {
    let dynamic = ::image::open(path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    if dynamic.color().channel_count() < 3 {
        let data = dynamic.to_luma8().into_raw().iter().map(|v| *v as f32 / 255.0).collect();
        return ImageHdr::from_data(w, h, 1, data);
    }
    let data = dynamic.to_rgb8().into_raw().iter().map(|v| *v as f32 / 255.0).collect();
    ImageHdr::from_data(w, h, 3, data)
}

/// Reads a PNG and undoes the tone map of [`write_png`].
pub fn read_png_hdr(path: impl AsRef<Path>, exposure: f64, gamma: f64) -> Result<ImageHdr> {
    Ok(read_png(path)?.map(|v| inverse_tone_map(v as f64, exposure, gamma) as f32))
}

/// Loads an RGB image from PFM or PNG (as linear values in `[0, 1]`) by
/// extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageHdr> {
    let path = path.as_ref();
    match extension(path).as_str() {
        "pfm" => read_pfm(path),
        "png" => read_png(path),
        other => Err(format_err(format!("unsupported image extension {other:?}"))),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// Binary little-endian PLY with float positions and uchar colors.
pub fn encode_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.points.len()
    )
    .into_bytes();
    for p in &cloud.points {
        for v in p.position {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for c in p.color {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    // integer colors are scaled to [0, 1]
    fn color_scale(self) -> f64 {
        match self {
            Scalar::U8 => 255.0,
            Scalar::U16 => 65535.0,
            _ => 1.0,
        }
    }
}

/// Reads the vertex element of a binary little-endian PLY. Colors are
/// optional and default to white; other properties are skipped.
pub fn decode_ply(bytes: &[u8]) -> Result<PointCloud> {
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| format_err("PLY header has no end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| format_err("PLY header is not text"))?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(format_err("missing ply magic"));
    }
    let mut count = None;
    let mut in_vertex = false;
    let mut skip_before = 0usize;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", "binary_big_endian", _] => return Err(Error::UnsupportedEndianness),
            ["format", other, _] => return Err(format_err(format!("unsupported PLY format {other}"))),
            ["element", name, n] => {
                let n: usize = n.parse().map_err(|_| format_err("bad element count"))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n);
                } else if count.is_none() {
                    // elements before the vertices are not supported
                    skip_before += n;
                }
            }
            ["property", "list", ..] if in_vertex => return Err(format_err("list property on vertices")),
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| format_err(format!("PLY type {ty}")))?;
                props.push((name.to_string(), s));
            }
            _ => {}
        }
    }
    if skip_before > 0 {
        return Err(format_err("PLY elements before the vertex element"));
    }
    let count = count.ok_or_else(|| format_err("PLY has no vertex element"))?;
    let stride: usize = props.iter().map(|p| p.1.size()).sum();
    let body = &bytes[end + marker.len()..];
    if body.len() < count * stride {
        return Err(format_err(format!("PLY body has {} bytes, need {}", body.len(), count * stride)));
    }
    let find = |name: &str| -> Option<(usize, Scalar)> {
        let mut off = 0;
        for (n, s) in &props {
            if n == name {
                return Some((off, *s));
            }
            off += s.size();
        }
        None
    };
    let pos: Vec<(usize, Scalar)> = ["x", "y", "z"]
        .iter()
        .map(|n| find(n).ok_or_else(|| format_err(format!("PLY has no {n} property"))))
        .collect::<Result<_>>()?;
    let col: Option<Vec<(usize, Scalar)>> = ["red", "green", "blue"].iter().map(|n| find(n)).collect();
    let points = body[..count * stride]
        .chunks_exact(stride.max(1))
        .map(|rec| CloudPoint {
            position: [0, 1, 2].map(|i| pos[i].1.read(&rec[pos[i].0..])),
            color: match &col {
                Some(c) => [0, 1, 2].map(|i| c[i].1.read(&rec[c[i].0..]) / c[i].1.color_scale()),
                None => [1.0; 3],
            },
        })
        .collect();
    Ok(PointCloud { points })
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_ply(cloud))?;
    Ok(())
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    decode_ply(&fs::read(path)?)
}

pub fn write_octree(path: impl AsRef<Path>, tree: &LightingOctree) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    format::write(tree, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_octree(path: impl AsRef<Path>) -> Result<LightingOctree> {
    format::read(BufReader::new(File::open(path)?))
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<CameraJson> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn write_camera(path: impl AsRef<Path>, intrinsics: Option<&Intrinsics>, pose: &CameraPose) -> Result<()> {
    write_json(path, &CameraJson::from_parts(intrinsics, pose))
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path)?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// View files `pano_ID.pfm`, `depth_ID.pfm` and `pose_ID.json` in `dir`,
/// sorted by ID.
pub fn view_ids(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            Some(name.strip_prefix("pano_")?.strip_suffix(".pfm")?.to_string())
        })
        .collect();
    ids.sort();
    Ok(ids)
}

fn view_paths(dir: &Path, id: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("pano_{id}.pfm")),
        dir.join(format!("depth_{id}.pfm")),
        dir.join(format!("pose_{id}.json")),
    ]
}

pub fn read_views(dir: impl AsRef<Path>) -> Result<Vec<View>> {
    let dir = dir.as_ref();
    let ids = view_ids(dir)?;
    if ids.is_empty() {
        return Err(Error::NoViews);
    }
    ids.iter()
        .map(|id| {
            let [pano, depth, pose] = view_paths(dir, id);
            View::from_images(&read_pfm(pano)?, &read_pfm(depth)?, read_camera(pose)?.pose()?)
        })
        .collect()
}

/// Writes views with three-digit IDs starting at `first`.
pub fn write_views(dir: impl AsRef<Path>, views: &[View], first: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (k, v) in views.iter().enumerate() {
        let [pano, depth, pose] = view_paths(dir, &format!("{:03}", first + k));
        write_pfm(pano, &v.radiance_image())?;
        write_pfm(depth, &v.depth_image())?;
        write_camera(pose, None, &v.pose)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pfm_by_hand() {
        let img = ImageHdr::from_data(1, 1, 3, vec![2.5; 3]).unwrap();
        let bytes = encode_pfm(&img);
        let mut expected = b"PF\n1 1\n-1.0\n".to_vec();
        for _ in 0..3 {
            expected.extend_from_slice(&[0x00, 0x00, 0x20, 0x40]);
        }
        assert_eq!(bytes, expected);
        assert_eq!(decode_pfm(&bytes).unwrap(), img);
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let img = ImageHdr::from_data(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&img);
        let body = &bytes[bytes.len() - 8..];
        assert_eq!(&body[..4], &2.0f32.to_le_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap(), img);
    }

    #[test]
    fn pfm_rejections() {
        assert!(matches!(decode_pfm(b"PF\n1 1\n1.0\n\0\0\0\0\0\0\0\0\0\0\0\0"), Err(Error::UnsupportedEndianness)));
        assert!(matches!(decode_pfm(b"P6\n1 1\n-1.0\n"), Err(Error::Format(_))));
        assert!(matches!(decode_pfm(b"PF\n1 1\n-1.0\n\0\0"), Err(Error::Format(_))));
        assert!(matches!(decode_pfm(b"PF\n1\n"), Err(Error::Format(_))));
    }

    #[test]
    fn ply_by_hand() {
        let cloud = PointCloud::new(vec![
            CloudPoint { position: [1.0, 2.0, 3.0], color: [1.0, 0.0, 128.0 / 255.0] },
            CloudPoint { position: [-0.5, 0.25, 0.0], color: [0.0, 1.0, 0.0] },
        ]);
        let bytes = encode_ply(&cloud);
        let header = "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
        assert_eq!(&bytes[..header.len()], header.as_bytes());
        let body = &bytes[header.len()..];
        assert_eq!(body.len(), 2 * 15);
        assert_eq!(&body[..4], &1.0f32.to_le_bytes());
        assert_eq!(&body[12..15], &[255, 0, 128]);
        assert_eq!(&body[15..19], &(-0.5f32).to_le_bytes());
        assert_eq!(decode_ply(&bytes).unwrap(), cloud);
    }

    #[test]
    fn ply_without_color_is_white() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\ncomment x\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nproperty float intensity\nend_header\n".to_vec();
        for v in [0.5f64, 0.25, 0.125] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&7.0f32.to_le_bytes());
        let cloud = decode_ply(&bytes).unwrap();
        assert_eq!(cloud.points[0].position, [0.5, 0.25, 0.125]);
        assert_eq!(cloud.points[0].color, [1.0; 3]);
        let big = b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(decode_ply(big), Err(Error::UnsupportedEndianness)));
        assert!(decode_ply(b"ply\nformat ascii 1.0\nend_header\n").is_err());
    }

    #[test]
    fn png_tone_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let values = vec![0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 0.3];
        let img = ImageHdr::from_data(3, 1, 3, values.clone()).unwrap();
        write_png(&path, &img, 1.0, 2.2).unwrap();
        let ldr = read_png(&path).unwrap();
        assert_eq!(ldr.data[0], 0.0);
        for w in ldr.data.windows(2).take(7) {
            assert!(w[1] >= w[0]);
        }
        let back = read_png_hdr(&path, 1.0, 2.2).unwrap();
        for (x, y) in values.iter().zip(&back.data) {
            let (tx, ty) = (tone_map(*x as f64, 1.0, 2.2), tone_map(*y as f64, 1.0, 2.2));
            assert!((tx - ty).abs() <= 0.5 / 255.0 + 1e-9, "{x} -> {y}");
        }
    }

    #[test]
    fn views_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tree = crate::scenes::random_octree(1, 3, 30, 2.0);
        let march = crate::renderer::MarchConfig::unit();
        let views: Vec<View> = [[0.3, 0.4, 0.5], [0.7, 0.2, 0.6]]
            .iter()
            .map(|p| View::render(&tree, CameraPose::at(*p), 8, 4, &march, None).unwrap())
            .collect();
        write_views(dir.path(), &views, 0).unwrap();
        assert_eq!(view_ids(dir.path()).unwrap(), vec!["000", "001"]);
        let back = read_views(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in views.iter().zip(&back) {
            assert_eq!(a.radiance_image(), b.radiance_image());
            assert_eq!(a.pose, b.pose);
        }
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(read_views(empty.path()), Err(Error::NoViews)));
    }

    proptest! {
        #[test]
        fn pfm_round_trip(w in 1usize..6, h in 1usize..6, gray in any::<bool>(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = if gray { 1 } else { 3 };
            let data = (0..w * h * c).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff)).collect();
            let img = ImageHdr::from_data(w, h, c, data).unwrap();
            let back = decode_pfm(&encode_pfm(&img)).unwrap();
            prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), img.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
